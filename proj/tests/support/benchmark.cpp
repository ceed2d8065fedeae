#include "benchmark.hpp"

#include <map>
#include <stdexcept>

#include "autofi/trainer.hpp"

namespace autofi::bench {

model::EncoderArch benchmark_arch(const BenchmarkConfig& cfg) {
  model::EncoderArch arch;
  arch.input = {3, cfg.subcarriers, cfg.window};
  arch.first_filters = 8;
  arch.first_kernel = {3, 5};
  arch.first_stride = {3, 2};
  return arch;
}

std::vector<data::ClassSignature> benchmark_signatures(const BenchmarkConfig& cfg) {
  if (!cfg.compositional) {
    return data::random_signatures(8, cfg.tones_per_class, cfg.tone_amplitude, cfg.max_frequency, cfg.family_seed);
  }
  // Six single-tone atoms; every class is a pair of atoms. Calibration
  // classes reuse atoms in pairings never seen during pretraining.
  const auto atoms = data::random_signatures(6, 1, cfg.tone_amplitude, cfg.max_frequency, cfg.family_seed);
  constexpr int pairs[8][2] = {{0, 1}, {2, 3}, {4, 5}, {1, 3}, {0, 2}, {1, 4}, {3, 5}, {2, 5}};
  std::vector<data::ClassSignature> out(8);
  for (int c = 0; c < 8; ++c) {
    out[c].tones = {atoms[pairs[c][0]].tones[0], atoms[pairs[c][1]].tones[0]};
  }
  return out;
}

namespace {

data::StreamConfig stream_config(const BenchmarkConfig& cfg, data::Label first_class, std::uint64_t seed) {
  const auto all = benchmark_signatures(cfg);
  data::StreamConfig sc;
  sc.subcarriers = cfg.subcarriers;
  sc.sample_rate = cfg.sample_rate;
  sc.duration = cfg.stream_seconds;
  sc.num_classes = 4;
  sc.event_rate = cfg.event_rate;
  sc.noise_sigma = cfg.noise_sigma;
  sc.class_signatures.assign(all.begin() + first_class, all.begin() + first_class + 4);
  sc.seed = seed;
  sc.environment_seed = cfg.room_seed;
  sc.window = cfg.window;
  sc.label_offset = first_class;
  return sc;
}

template <typename Done>
std::vector<data::CsiSample> collect(data::Label first_class, std::uint64_t seed, const BenchmarkConfig& cfg, Done done) {
  if (first_class + 4 > 8) throw std::invalid_argument("benchmark has classes 0..7");
  const data::SegmentConfig seg{cfg.tau, cfg.window, cfg.baseline_len};
  std::vector<data::CsiSample> out;
  for (std::uint32_t s = 0; !done(out); ++s) {
    if (s > 10000) throw std::runtime_error("benchmark stream generation is not producing segments");
    const data::Stream stream = data::generate_stream(stream_config(cfg, first_class, trainer::derive_seed(seed, s)));
    for (auto& sample : data::segment_stream(stream.values, seg, s)) {
      sample.label = data::label_by_overlap(sample.provenance->start, cfg.window, stream.events);
      if (!sample.label) continue;
      out.push_back(std::move(sample));
      if (done(out)) break;
    }
  }
  return out;
}

}  // namespace

std::vector<data::CsiSample> benchmark_segments(std::size_t count, data::Label first_class, std::uint64_t seed,
                                                const BenchmarkConfig& cfg) {
  return collect(first_class, seed, cfg, [count](const std::vector<data::CsiSample>& v) { return v.size() >= count; });
}

std::vector<data::CsiSample> benchmark_labeled(std::size_t per_class, data::Label first_class, std::uint64_t seed,
                                               const BenchmarkConfig& cfg) {
  return collect(first_class, seed, cfg, [per_class](const std::vector<data::CsiSample>& v) {
    std::map<data::Label, std::size_t> counts;
    for (const auto& s : v) ++counts[*s.label];
    if (counts.size() < 4) return false;
    for (const auto& [label, n] : counts) {
      if (n < per_class) return false;
    }
    return true;
  });
}

std::vector<data::CsiSample> strip_labels(std::vector<data::CsiSample> samples) {
  for (auto& s : samples) s.label.reset();
  return samples;
}

}  // namespace autofi::bench
