#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "autofi/data.hpp"
#include "autofi/trainer.hpp"

// N-way K-shot episode sampling and accuracy reporting.

namespace autofi::eval {

using data::Label;

struct EpisodeSpec {
  std::size_t n_way = 4;
  std::size_t k_shot = 3;
  std::size_t q_query = 5;
  std::size_t n_episodes = 50;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Episode {
  std::vector<Label> classes;
  std::vector<std::size_t> support;  // dataset indices, k_shot per class
  std::vector<std::size_t> query;    // dataset indices, q_query per class
};

/// Episode `index` drawn from labels alone with seed spec.seed + index.
/// Throws listing the deficient classes when the spec cannot be met.
Episode sample_episode(std::span<const Label> labels, const EpisodeSpec& spec, std::size_t index);
std::vector<Episode> sample_episodes(std::span<const Label> labels, const EpisodeSpec& spec);

/// Predicts one label per query sample given a labelled support set.
using EpisodeClassifier =
    std::function<std::vector<Label>(std::span<const data::CsiSample> support, std::span<const data::CsiSample> query)>;

struct EvalResult {
  std::vector<double> accuracies;  // per episode
  double mean = 0.0;
  double half_width = 0.0;  // 1.96 * sd / sqrt(n)

  double ci_low() const { return mean - half_width; }
  double ci_high() const { return mean + half_width; }
  /// {"episode": n, "accuracy": a} per line.
  std::string metrics_jsonl() const;
};

EvalResult summarize(std::vector<double> accuracies);

EvalResult evaluate_episodes(std::span<const data::CsiSample> dataset, const EpisodeSpec& spec,
                             const EpisodeClassifier& classifier);

/// Encoder parameters to start calibration from: branch `branch` of a
/// pretraining checkpoint, or theta of a calibrated one.
ParamSet encoder_from_checkpoint(const ParamSet& checkpoint, int branch = 1);

/// Calibrates from `theta` on each support set and predicts the queries. An
/// aborted calibration predicts from its last good checkpoint.
EpisodeClassifier calibrating_classifier(model::EncoderArch arch, ParamSet theta, trainer::TrainConfig config);

EvalResult evaluate_episodes(std::span<const data::CsiSample> dataset, const ParamSet& checkpoint, const EpisodeSpec& spec,
                             const trainer::TrainConfig& config);

}  // namespace autofi::eval
