#include "autofi/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace autofi::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + text + "'");
}

using Setter = std::function<void(Settings&, const std::string& key, const std::string& value)>;

struct KeySpec {
  const char* name;
  const char* help;
  Setter set;
};

template <typename T, typename Field>
Setter number(Field field) {
  return [field](Settings& s, const std::string& k, const std::string& v) { field(s) = parse_number<T>(k, v); };
}

const std::vector<KeySpec>& key_table() {
  static const std::vector<KeySpec> table = {
      {"antennas", "receive antennas A", number<std::size_t>([](Settings& s) -> auto& { return s.stream.antennas; })},
      {"subcarriers", "subcarriers S", number<std::size_t>([](Settings& s) -> auto& { return s.stream.subcarriers; })},
      {"sample_rate", "stream sample rate, Hz", number<double>([](Settings& s) -> auto& { return s.stream.sample_rate; })},
      {"duration", "stream duration, s", number<double>([](Settings& s) -> auto& { return s.stream.duration; })},
      {"num_classes", "event classes in a generated stream",
       number<std::size_t>([](Settings& s) -> auto& { return s.stream.num_classes; })},
      {"event_rate", "events per minute", number<double>([](Settings& s) -> auto& { return s.stream.event_rate; })},
      {"noise_sigma", "sensor noise stddev", number<double>([](Settings& s) -> auto& { return s.stream.noise_sigma; })},
      {"baseline_level", "mean static amplitude",
       number<double>([](Settings& s) -> auto& { return s.stream.baseline_level; })},
      {"tone_width", "subcarrier spread of a tone, fraction of band",
       number<double>([](Settings& s) -> auto& { return s.stream.tone_width; })},
      {"label_offset", "first class id written to the event log",
       number<data::Label>([](Settings& s) -> auto& { return s.stream.label_offset; })},
      {"environment_seed", "room seed; defaults to the stream seed",
       [](Settings& s, const std::string& k, const std::string& v) {
         s.stream.environment_seed = parse_number<std::uint64_t>(k, v);
       }},
      {"tones_per_class", "tones in each class signature",
       number<std::size_t>([](Settings& s) -> auto& { return s.generator.tones_per_class; })},
      {"tone_amplitude", "tone amplitude", number<double>([](Settings& s) -> auto& { return s.generator.tone_amplitude; })},
      {"max_frequency", "highest tone frequency, Hz",
       number<double>([](Settings& s) -> auto& { return s.generator.max_frequency; })},
      {"signature_seed", "seed of the class signatures",
       number<std::uint64_t>([](Settings& s) -> auto& { return s.generator.signature_seed; })},
      {"window", "samples per CSI window T", [](Settings& s, const std::string& k, const std::string& v) {
         s.stream.window = s.segment.window = parse_number<std::size_t>(k, v);
       }},
      {"tau", "segmentation trigger threshold", number<double>([](Settings& s) -> auto& { return s.segment.tau; })},
      {"baseline_len", "rolling baseline length, samples",
       number<std::size_t>([](Settings& s) -> auto& { return s.segment.baseline_len; })},
      {"first_filters", "filters of the first convolution",
       number<std::size_t>([](Settings& s) -> auto& { return s.arch.first_filters; })},
      {"first_kernel_h", "first convolution kernel height",
       number<std::size_t>([](Settings& s) -> auto& { return s.arch.first_kernel.h; })},
      {"first_kernel_w", "first convolution kernel width",
       number<std::size_t>([](Settings& s) -> auto& { return s.arch.first_kernel.w; })},
      {"first_stride_h", "first convolution stride along subcarriers",
       number<std::size_t>([](Settings& s) -> auto& { return s.arch.first_stride.h; })},
      {"first_stride_w", "first convolution stride along time",
       number<std::size_t>([](Settings& s) -> auto& { return s.arch.first_stride.w; })},
      {"lr", "SGD learning rate", number<double>([](Settings& s) -> auto& { return s.train.lr; })},
      {"momentum", "SGD momentum", number<double>([](Settings& s) -> auto& { return s.train.momentum; })},
      {"batch_size", "pretraining batch size", number<std::size_t>([](Settings& s) -> auto& { return s.train.batch_size; })},
      {"gss_epochs", "pretraining epochs", number<std::size_t>([](Settings& s) -> auto& { return s.train.gss_epochs; })},
      {"fsc_epochs", "calibration epochs", number<std::size_t>([](Settings& s) -> auto& { return s.train.fsc_epochs; })},
      {"lambda", "weight of the mutual-information term", number<double>([](Settings& s) -> auto& { return s.train.lambda; })},
      {"gamma", "weight of the geometric term", number<double>([](Settings& s) -> auto& { return s.train.gamma; })},
      {"epsilon", "augmentation noise stddev; negative picks 0.05 x data stddev",
       number<double>([](Settings& s) -> auto& { return s.train.epsilon; })},
      {"mi_sign", "corrected or literal", [](Settings& s, const std::string& k, const std::string& v) {
         if (v == "corrected") {
           s.train.mi_sign = gss::MiSign::corrected;
         } else if (v == "literal") {
           s.train.mi_sign = gss::MiSign::literal;
         } else {
           throw ConfigError("config key '" + k + "': expected corrected or literal, got '" + v + "'");
         }
       }},
      {"weight_decay", "L2 weight decay", number<double>([](Settings& s) -> auto& { return s.train.weight_decay; })},
      {"lr_decay", "per-epoch learning-rate factor", number<double>([](Settings& s) -> auto& { return s.train.lr_decay; })},
      {"freeze_encoder", "keep the encoder fixed during calibration",
       [](Settings& s, const std::string& k, const std::string& v) { s.train.freeze_encoder = parse_bool(k, v); }},
      {"normalize_input", "standardise input with pretraining statistics",
       [](Settings& s, const std::string& k, const std::string& v) { s.train.normalize_input = parse_bool(k, v); }},
      {"projector_hidden", "projector hidden width",
       number<std::size_t>([](Settings& s) -> auto& { return s.train.projector_hidden; })},
      {"projector_dim", "projector output width D",
       number<std::size_t>([](Settings& s) -> auto& { return s.train.projector_dim; })},
      {"embed_dim", "classifier embedding width", number<std::size_t>([](Settings& s) -> auto& { return s.train.embed_dim; })},
      {"branch", "pretrained branch used for calibration (1 or 2)",
       number<int>([](Settings& s) -> auto& { return s.train.branch; })},
      {"n_way", "classes per episode", number<std::size_t>([](Settings& s) -> auto& { return s.episodes.n_way; })},
      {"k_shot", "support samples per class", number<std::size_t>([](Settings& s) -> auto& { return s.episodes.k_shot; })},
      {"q_query", "query samples per class", number<std::size_t>([](Settings& s) -> auto& { return s.episodes.q_query; })},
      {"n_episodes", "evaluation episodes", number<std::size_t>([](Settings& s) -> auto& { return s.episodes.n_episodes; })},
      {"labels", "labels file; defaults to the data path with extension .aflb",
       [](Settings& s, const std::string&, const std::string& v) { s.labels = v; }},
      {"grad_batch", "gradcheck batch rows", number<std::size_t>([](Settings& s) -> auto& { return s.grad_batch; })},
      {"grad_dim", "gradcheck row width", number<std::size_t>([](Settings& s) -> auto& { return s.grad_dim; })},
      {"grad_seeds", "gradcheck seeds", number<std::size_t>([](Settings& s) -> auto& { return s.grad_seeds; })},
  };
  return table;
}

}  // namespace

KeyValues parse(const std::string& text) {
  KeyValues out;
  std::istringstream in(text);
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(n) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(n) + ": empty key");
    if (!out.emplace(key, value).second) throw ConfigError("config key '" + key + "' appears twice");
  }
  return out;
}

KeyValues load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str());
}

void apply(const KeyValues& values, Settings& settings) {
  const auto& table = key_table();
  for (const auto& [key, value] : values) {
    const auto it = std::find_if(table.begin(), table.end(), [&](const KeySpec& k) { return key == k.name; });
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    it->set(settings, key, value);
  }
}

model::EncoderArch Settings::encoder_arch() const {
  model::EncoderArch a = arch;
  a.input = {stream.antennas, stream.subcarriers, segment.window};
  return a;
}

std::vector<std::pair<std::string, std::string>> documented_keys() {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : key_table()) out.emplace_back(k.name, k.help);
  return out;
}

}  // namespace autofi::config
