#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "autofi/data.hpp"
#include "autofi/eval.hpp"
#include "autofi/model.hpp"
#include "autofi/trainer.hpp"

// Flat key=value configuration shared by every command.

namespace autofi::config {

/// Bad input from the user: unknown key, malformed value, missing file.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using KeyValues = std::map<std::string, std::string>;

/// One `key = value` per line; blank lines and lines starting with '#' are
/// skipped. Duplicate keys and lines without '=' are errors.
KeyValues parse(const std::string& text);
KeyValues load(const std::filesystem::path& path);

struct GeneratorSettings {
  std::size_t tones_per_class = 2;
  double tone_amplitude = 30.0;
  double max_frequency = 10.0;
  std::uint64_t signature_seed = 7;
};

struct Settings {
  data::StreamConfig stream;
  GeneratorSettings generator;
  data::SegmentConfig segment;
  model::EncoderArch arch;
  trainer::TrainConfig train;
  eval::EpisodeSpec episodes;
  std::string labels;  // empty: data path with extension .aflb
  std::size_t grad_batch = 4;
  std::size_t grad_dim = 8;
  std::size_t grad_seeds = 20;

  /// Input dims follow the stream and window settings.
  model::EncoderArch encoder_arch() const;
};

/// Applies every key; throws ConfigError naming the first unknown key or
/// unparsable value.
void apply(const KeyValues& values, Settings& settings);

/// Every accepted key with a one-line description, for --help.
std::vector<std::pair<std::string, std::string>> documented_keys();

}  // namespace autofi::config
