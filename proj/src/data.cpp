#include "autofi/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace autofi::data {

std::size_t StreamConfig::length() const {
  return static_cast<std::size_t>(std::llround(sample_rate * duration));
}

void StreamConfig::validate() const {
  if (antennas < 1 || subcarriers < 1) throw std::invalid_argument("stream needs at least one antenna and subcarrier");
  if (!(sample_rate > 0.0)) throw std::invalid_argument("sample_rate must be positive");
  if (!(duration > 0.0) || length() == 0) throw std::invalid_argument("duration must give at least one sample");
  if (!(event_rate >= 0.0)) throw std::invalid_argument("event_rate must be >= 0");
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("noise_sigma must be >= 0");
  if (window < 2) throw std::invalid_argument("window must be at least 2 samples");
  if (event_rate > 0.0) {
    if (num_classes == 0) throw std::invalid_argument("events need at least one class");
    if (class_signatures.size() != num_classes) {
      throw std::invalid_argument("expected " + std::to_string(num_classes) + " class signatures, got " +
                                  std::to_string(class_signatures.size()));
    }
  }
}

std::vector<ClassSignature> random_signatures(std::size_t num_classes, std::size_t tones_per_class, double amplitude,
                                              double max_frequency, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> centre(0.1, 0.9);
  std::uniform_real_distribution<double> freq(0.2 * max_frequency, max_frequency);
  std::vector<ClassSignature> out(num_classes);
  for (auto& sig : out) {
    for (std::size_t t = 0; t < tones_per_class; ++t) sig.tones.push_back({centre(rng), freq(rng), amplitude});
  }
  return out;
}

Tensor baseline_profile(const StreamConfig& config) {
  // Separate from the event/noise stream so that configs differing only in
  // events share the same room.
  std::mt19937_64 rng(config.room_seed() ^ 0x9E3779B97F4A7C15ull);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  Tensor base({config.antennas, config.subcarriers});
  for (std::size_t a = 0; a < config.antennas; ++a) {
    const double p1 = phase(rng), p2 = phase(rng);
    for (std::size_t s = 0; s < config.subcarriers; ++s) {
      const double x = static_cast<double>(s) / static_cast<double>(config.subcarriers);
      const double ripple = 0.2 * std::sin(2.0 * std::numbers::pi * 2.0 * x + p1) +
                            0.1 * std::sin(2.0 * std::numbers::pi * 5.0 * x + p2);
      base.at(a, s) = static_cast<float>(config.baseline_level * (1.0 + ripple));
    }
  }
  return base;
}

namespace {

// Smooth on/off ramps so that the signature is zero outside [0, n).
double envelope(std::size_t i, std::size_t n) {
  const std::size_t ramp = std::max<std::size_t>(1, std::min<std::size_t>(10, n / 4));
  if (i < ramp) {
    const double s = std::sin(0.5 * std::numbers::pi * static_cast<double>(i + 1) / static_cast<double>(ramp + 1));
    return s * s;
  }
  if (i >= n - ramp) {
    const double s = std::sin(0.5 * std::numbers::pi * static_cast<double>(n - i) / static_cast<double>(ramp + 1));
    return s * s;
  }
  return 1.0;
}

}  // namespace

Stream generate_stream(const StreamConfig& config) {
  config.validate();
  const std::size_t A = config.antennas, S = config.subcarriers, L = config.length();
  std::mt19937_64 rng(config.seed);

  Stream out{Tensor({A, S, L}), {}};
  const Tensor base = baseline_profile(config);

  std::vector<double> antenna_gain(A);
  {
    std::mt19937_64 env(config.room_seed() ^ 0xD1B54A32D192ED03ull);
    std::uniform_real_distribution<double> gain(0.7, 1.0);
    for (double& g : antenna_gain) g = gain(env);
  }

  // Events: Poisson arrivals, non-overlapping, each fully inside the stream.
  if (config.event_rate > 0.0) {
    const double per_sample = config.event_rate / 60.0 / config.sample_rate;
    std::exponential_distribution<double> gap(per_sample);
    const std::size_t lo = std::max<std::size_t>(1, config.window / 2);
    const std::size_t hi = std::max(lo, config.window + config.window / 2);
    std::uniform_int_distribution<std::size_t> length(lo, hi);
    std::uniform_int_distribution<std::size_t> pick(0, config.num_classes - 1);
    double cursor = 0.0;
    while (true) {
      cursor += gap(rng);
      const std::size_t start = static_cast<std::size_t>(std::ceil(cursor));
      const std::size_t len = length(rng);
      const std::size_t cls = pick(rng);
      if (start + len > L) break;
      out.events.push_back({start, start + len, config.label_offset + static_cast<Label>(cls)});
      cursor = static_cast<double>(start + len);
    }
  }

  float* v = out.values.data();
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t a = 0; a < A; ++a) {
    for (std::size_t s = 0; s < S; ++s) {
      float* row = v + (a * S + s) * L;
      for (std::size_t t = 0; t < L; ++t) {
        row[t] = static_cast<float>(base.at(a, s) + (config.noise_sigma > 0.0 ? config.noise_sigma * noise(rng) : 0.0));
      }
    }
  }

  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> strength(0.8, 1.2);
  for (const Event& e : out.events) {
    const ClassSignature& sig = config.class_signatures[e.label - config.label_offset];
    const std::size_t n = e.end - e.start;
    const double scale = strength(rng);
    for (const Tone& tone : sig.tones) {
      const double ph = phase(rng);
      const double omega = 2.0 * std::numbers::pi * tone.frequency / config.sample_rate;
      for (std::size_t s = 0; s < S; ++s) {
        const double x = (static_cast<double>(s) + 0.5) / static_cast<double>(S);
        const double z = (x - tone.subcarrier) / config.tone_width;
        const double spatial = std::exp(-0.5 * z * z);
        if (spatial < 1e-4) continue;
        for (std::size_t a = 0; a < A; ++a) {
          float* row = v + (a * S + s) * L;
          const double amp = scale * tone.amplitude * spatial * antenna_gain[a];
          for (std::size_t i = 0; i < n; ++i) {
            row[e.start + i] += static_cast<float>(amp * envelope(i, n) * std::sin(omega * static_cast<double>(i) + ph));
          }
        }
      }
    }
  }
  for (float& x : out.values.values()) x = std::max(x, 0.0f);
  return out;
}

std::vector<CsiSample> segment_stream(const Tensor& stream, const SegmentConfig& config, std::uint32_t stream_id) {
  if (stream.rank() != 3) throw std::invalid_argument("stream must be [A,S,L], got " + shape_to_string(stream.dims()));
  if (!(config.tau > 0.0)) throw std::invalid_argument("tau must be positive");
  if (config.window == 0 || config.baseline_len == 0) throw std::invalid_argument("window and baseline_len must be positive");
  const std::size_t A = stream.dim(0), S = stream.dim(1), L = stream.dim(2);
  if (L < config.window) {
    throw std::invalid_argument("stream length " + std::to_string(L) + " is shorter than window " +
                                std::to_string(config.window));
  }
  const std::size_t channels = A * S;
  const std::size_t B = config.baseline_len;
  const float* v = stream.data();

  std::vector<CsiSample> out;
  if (L < B) return out;
  // Running sum of the previous B samples per channel, at time t.
  std::vector<double> sums(channels, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t t = 0; t < B; ++t) sums[c] += v[c * L + t];
  }
  const double inv_b = 1.0 / static_cast<double>(B);
  std::size_t t = B;
  while (t + config.window <= L) {
    bool fire = false;
    for (std::size_t c = 0; c < channels && !fire; ++c) {
      fire = std::abs(v[c * L + t] - sums[c] * inv_b) > config.tau;
    }
    std::size_t next = t + 1;
    if (fire) {
      Tensor window({A, S, config.window});
      for (std::size_t c = 0; c < channels; ++c) {
        std::copy_n(v + c * L + t, config.window, window.data() + c * config.window);
      }
      out.push_back({std::move(window), std::nullopt, Provenance{stream_id, t}});
      next = t + config.window;
    }
    if (next + config.window > L) break;
    // Slide the baseline window from [t-B, t) to [next-B, next).
    for (std::size_t c = 0; c < channels; ++c) {
      const float* row = v + c * L;
      if (next - t >= B) {
        double s = 0.0;
        for (std::size_t k = next - B; k < next; ++k) s += row[k];
        sums[c] = s;
      } else {
        for (std::size_t k = t; k < next; ++k) sums[c] += static_cast<double>(row[k]) - row[k - B];
      }
    }
    t = next;
  }
  return out;
}

std::optional<Label> label_by_overlap(std::size_t start, std::size_t window, std::span<const Event> events) {
  std::optional<Label> best;
  std::size_t best_overlap = 0;
  for (const Event& e : events) {
    const std::size_t lo = std::max(start, e.start);
    const std::size_t hi = std::min(start + window, e.end);
    if (hi > lo && hi - lo > best_overlap) {
      best_overlap = hi - lo;
      best = e.label;
    }
  }
  return best;
}

ViewPair augment_view(const Tensor& x, double epsilon, std::uint64_t seed) {
  if (!(epsilon >= 0.0)) throw std::invalid_argument("epsilon must be >= 0");
  ViewPair pair{x, x, epsilon};
  if (epsilon == 0.0) return pair;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> zeta(0.0, 1.0);
  for (float& v : pair.view1.values()) v = static_cast<float>(v + epsilon * zeta(rng));
  for (float& v : pair.view2.values()) v = static_cast<float>(v + epsilon * zeta(rng));
  return pair;
}

AmplitudeStats amplitude_stats(std::span<const CsiSample> samples) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& s : samples) {
    for (float v : s.values.values()) {
      sum += v;
      sq += static_cast<double>(v) * v;
    }
    n += s.values.size();
  }
  if (n == 0) throw std::invalid_argument("amplitude_stats: no samples");
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(0.0, sq / static_cast<double>(n) - mean * mean);
  return {mean, std::sqrt(var)};
}

double default_epsilon(std::span<const CsiSample> samples) { return 0.05 * amplitude_stats(samples).stddev; }

// ---------------------------------------------------------------------------

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

class Cursor {
 public:
  Cursor(const std::string& bytes, std::string file) : bytes_(bytes), file_(std::move(file)) {}

  void expect_header(const char* magic) {
    if (bytes_.size() < 4 || bytes_.compare(0, 4, magic) != 0) throw std::runtime_error(file_ + ": bad magic");
    pos_ = 4;
    const std::uint32_t version = u8();
    if (version != kFileVersion) throw std::runtime_error(file_ + ": unsupported version " + std::to_string(version));
  }

  std::uint32_t u8() {
    need(1);
    return static_cast<unsigned char>(bytes_[pos_++]);
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  const char* here() const { return bytes_.data() + pos_; }
  void skip(std::size_t n) { pos_ += n; }

  void need(std::size_t n) const {
    if (remaining() < n) throw std::runtime_error(file_ + ": truncated file");
  }

 private:
  const std::string& bytes_;
  std::string file_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_dataset(const std::filesystem::path& path, std::span<const CsiSample> samples) {
  if (samples.empty()) throw std::invalid_argument("write_dataset: no samples");
  const Shape dims = samples.front().values.dims();
  if (dims.size() != 3) throw std::invalid_argument("write_dataset: samples must be [A,S,T]");
  for (const auto& s : samples) {
    if (s.values.dims() != dims) {
      throw std::invalid_argument("write_dataset: inhomogeneous dims " + shape_to_string(s.values.dims()) + " vs " +
                                  shape_to_string(dims));
    }
  }
  std::string bytes = "AFCS";
  bytes.push_back(static_cast<char>(kFileVersion));
  put_u32(bytes, static_cast<std::uint32_t>(samples.size()));
  for (std::size_t d : dims) put_u32(bytes, static_cast<std::uint32_t>(d));
  const std::size_t per = shape_numel(dims);
  bytes.reserve(bytes.size() + samples.size() * per * 4);
  for (const auto& s : samples) {
    for (float f : s.values.values()) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(bytes, bits);
    }
  }
  spit(path, bytes);
}

std::vector<CsiSample> read_dataset(const std::filesystem::path& path) {
  const std::string bytes = slurp(path);
  Cursor c(bytes, path.string());
  c.expect_header("AFCS");
  const std::uint64_t n = c.u32(), a = c.u32(), s = c.u32(), t = c.u32();
  if (n == 0 || a == 0 || s == 0 || t == 0) throw std::runtime_error(path.string() + ": zero dimension in header");
  const std::uint64_t per = a * s * t;  // each factor < 2^32, checked below
  if (per / a / s != t || per > (std::uint64_t{1} << 40) || n > (std::uint64_t{1} << 62) / (per * 4)) {
    throw std::runtime_error(path.string() + ": dim overflow");
  }
  c.need(static_cast<std::size_t>(n * per * 4));
  std::vector<CsiSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::uint64_t i = 0; i < n; ++i) {
    std::vector<float> values(static_cast<std::size_t>(per));
    std::memcpy(values.data(), c.here(), values.size() * 4);  // little-endian host
    c.skip(values.size() * 4);
    out.push_back({Tensor({a, s, t}, std::move(values)), std::nullopt, std::nullopt});
  }
  if (c.remaining() != 0) throw std::runtime_error(path.string() + ": trailing bytes after payload");
  return out;
}

void write_labels(const std::filesystem::path& path, std::span<const Label> labels) {
  std::string bytes = "AFLB";
  bytes.push_back(static_cast<char>(kFileVersion));
  put_u32(bytes, static_cast<std::uint32_t>(labels.size()));
  for (Label y : labels) put_u32(bytes, y);
  spit(path, bytes);
}

std::vector<Label> read_labels(const std::filesystem::path& path) {
  const std::string bytes = slurp(path);
  Cursor c(bytes, path.string());
  c.expect_header("AFLB");
  const std::uint32_t n = c.u32();
  c.need(static_cast<std::size_t>(n) * 4);
  std::vector<Label> out(n);
  for (auto& y : out) y = c.u32();
  if (c.remaining() != 0) throw std::runtime_error(path.string() + ": trailing bytes after labels");
  return out;
}

std::vector<CsiSample> read_labeled_dataset(const std::filesystem::path& data, const std::filesystem::path& labels) {
  auto samples = read_dataset(data);
  const auto ys = read_labels(labels);
  if (ys.size() != samples.size()) {
    throw std::runtime_error("label file " + labels.string() + " has N=" + std::to_string(ys.size()) +
                             " but data file " + data.string() + " has N=" + std::to_string(samples.size()));
  }
  for (std::size_t i = 0; i < ys.size(); ++i) samples[i].label = ys[i];
  return samples;
}

std::vector<Label> labels_of(std::span<const CsiSample> samples) {
  std::vector<Label> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].label) throw std::invalid_argument("sample " + std::to_string(i) + " has no label");
    out.push_back(*samples[i].label);
  }
  return out;
}

void write_event_log(const std::filesystem::path& path, std::span<const Event> events) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const Event& e : events) {
    out << nlohmann::json{{"start", e.start}, {"end", e.end}, {"class", e.label}}.dump() << '\n';
  }
}

std::vector<Event> read_event_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<Event> events;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      events.push_back({j.at("start").get<std::size_t>(), j.at("end").get<std::size_t>(), j.at("class").get<Label>()});
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return events;
}

}  // namespace autofi::data
