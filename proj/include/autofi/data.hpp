#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "autofi/tensor.hpp"

// Synthetic CSI amplitude streams, threshold-triggered capture, two-view
// Gaussian augmentation, and the binary dataset / label files.

namespace autofi::data {

using Label = std::uint32_t;

/// One sinusoidal modulation: centred on a subcarrier (as a fraction of the
/// band, 0..1), oscillating at `frequency` Hz with peak `amplitude`.
struct Tone {
  double subcarrier = 0.5;
  double frequency = 1.0;
  double amplitude = 30.0;
};

struct ClassSignature {
  std::vector<Tone> tones;
};

struct StreamConfig {
  std::size_t antennas = 3;
  std::size_t subcarriers = 114;
  double sample_rate = 100.0;  // Hz
  double duration = 600.0;     // s
  std::size_t num_classes = 4;
  double event_rate = 6.0;     // events per minute
  double noise_sigma = 2.0;
  std::vector<ClassSignature> class_signatures;  // one per class
  std::uint64_t seed = 0;
  /// Seeds the room (baseline profile, antenna gains); falls back to seed.
  std::optional<std::uint64_t> environment_seed;

  std::size_t window = 500;      // capture window; events last 0.5..1.5 of it
  double baseline_level = 40.0;  // mean static amplitude
  double tone_width = 0.06;      // subcarrier spread of a tone, fraction of band
  /// Class ids written to the event log are label_offset + class index.
  Label label_offset = 0;

  std::size_t length() const;
  std::uint64_t room_seed() const { return environment_seed.value_or(seed); }
  void validate() const;
};

struct Event {
  std::size_t start = 0;  // first sample
  std::size_t end = 0;    // one past the last sample
  Label label = 0;
  bool operator==(const Event&) const = default;
};

struct Stream {
  Tensor values;  // [A,S,L]
  std::vector<Event> events;
};

/// Random but reproducible class signatures: each class gets `tones_per_class`
/// tones with distinct centre/frequency draws.
std::vector<ClassSignature> random_signatures(std::size_t num_classes, std::size_t tones_per_class, double amplitude,
                                              double max_frequency, std::uint64_t seed);

/// Static per-(antenna, subcarrier) amplitude profile of the environment.
Tensor baseline_profile(const StreamConfig& config);

Stream generate_stream(const StreamConfig& config);

struct Provenance {
  std::uint32_t stream = 0;
  std::size_t start = 0;
  bool operator==(const Provenance&) const = default;
};

struct CsiSample {
  Tensor values;  // [A,S,T]
  std::optional<Label> label;
  std::optional<Provenance> provenance;
};

struct SegmentConfig {
  double tau = 20.0;
  std::size_t window = 500;
  std::size_t baseline_len = 100;
};

/// Scans the stream and starts a window of `window` samples wherever some
/// channel deviates from its rolling mean over the previous `baseline_len`
/// samples by more than tau; scanning resumes after the captured window.
std::vector<CsiSample> segment_stream(const Tensor& stream, const SegmentConfig& config, std::uint32_t stream_id = 0);

/// Class of the event overlapping [start, start + window) the most, if any.
std::optional<Label> label_by_overlap(std::size_t start, std::size_t window, std::span<const Event> events);

struct ViewPair {
  Tensor view1;
  Tensor view2;
  double epsilon = 0.0;
};

/// view_k = x + epsilon * zeta_k with independent standard normal zeta_k.
ViewPair augment_view(const Tensor& x, double epsilon, std::uint64_t seed);

struct AmplitudeStats {
  double mean = 0.0;
  double stddev = 0.0;
};

AmplitudeStats amplitude_stats(std::span<const CsiSample> samples);

/// 0.05 x the dataset amplitude standard deviation.
double default_epsilon(std::span<const CsiSample> samples);

// ---------------------------------------------------------------------------
// Files. Dataset: "AFCS", u8 version 1, u32 N, A, S, T, then float32 values
// in [n][a][s][t] order. Labels: "AFLB", u8 version 1, u32 N, N x u32.

inline constexpr std::uint8_t kFileVersion = 1;

void write_dataset(const std::filesystem::path& path, std::span<const CsiSample> samples);
std::vector<CsiSample> read_dataset(const std::filesystem::path& path);

void write_labels(const std::filesystem::path& path, std::span<const Label> labels);
std::vector<Label> read_labels(const std::filesystem::path& path);

/// Reads both files and attaches labels; rejects mismatched counts.
std::vector<CsiSample> read_labeled_dataset(const std::filesystem::path& data, const std::filesystem::path& labels);

/// Labels of every sample; throws if any sample is unlabeled.
std::vector<Label> labels_of(std::span<const CsiSample> samples);

/// One {"start":..,"end":..,"class":..} object per line.
void write_event_log(const std::filesystem::path& path, std::span<const Event> events);
std::vector<Event> read_event_log(const std::filesystem::path& path);

}  // namespace autofi::data
