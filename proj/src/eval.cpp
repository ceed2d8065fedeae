#include "autofi/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include <json.hpp>

namespace autofi::eval {

void EpisodeSpec::validate() const {
  if (n_way == 0 || k_shot == 0 || q_query == 0 || n_episodes == 0) {
    throw std::invalid_argument("n_way, k_shot, q_query and n_episodes must all be >= 1");
  }
}

namespace {

std::map<Label, std::vector<std::size_t>> by_class(std::span<const Label> labels) {
  std::map<Label, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < labels.size(); ++i) out[labels[i]].push_back(i);
  return out;
}

}  // namespace

Episode sample_episode(std::span<const Label> labels, const EpisodeSpec& spec, std::size_t index) {
  spec.validate();
  const auto classes = by_class(labels);
  const std::size_t need = spec.k_shot + spec.q_query;
  std::vector<Label> eligible;
  std::string deficient;
  for (const auto& [label, members] : classes) {
    if (members.size() >= need) {
      eligible.push_back(label);
    } else {
      deficient += (deficient.empty() ? "" : ", ") + std::to_string(label) + " (" + std::to_string(members.size()) + ")";
    }
  }
  if (eligible.size() < spec.n_way) {
    throw std::invalid_argument("episode spec needs " + std::to_string(spec.n_way) + " classes with >= " +
                                std::to_string(need) + " samples, found " + std::to_string(eligible.size()) +
                                "; deficient classes: " + (deficient.empty() ? "none" : deficient));
  }

  std::mt19937_64 rng(spec.seed + index);
  std::shuffle(eligible.begin(), eligible.end(), rng);
  eligible.resize(spec.n_way);
  std::sort(eligible.begin(), eligible.end());

  Episode ep;
  ep.classes = eligible;
  for (Label c : eligible) {
    std::vector<std::size_t> members = classes.at(c);
    std::shuffle(members.begin(), members.end(), rng);
    ep.support.insert(ep.support.end(), members.begin(), members.begin() + spec.k_shot);
    ep.query.insert(ep.query.end(), members.begin() + spec.k_shot, members.begin() + need);
  }
  return ep;
}

std::vector<Episode> sample_episodes(std::span<const Label> labels, const EpisodeSpec& spec) {
  std::vector<Episode> out;
  for (std::size_t e = 0; e < spec.n_episodes; ++e) out.push_back(sample_episode(labels, spec, e));
  return out;
}

std::string EvalResult::metrics_jsonl() const {
  std::string out;
  for (std::size_t e = 0; e < accuracies.size(); ++e) {
    out += nlohmann::ordered_json{{"episode", e}, {"accuracy", accuracies[e]}}.dump() + "\n";
  }
  return out;
}

EvalResult summarize(std::vector<double> accuracies) {
  EvalResult r;
  r.accuracies = std::move(accuracies);
  const double n = static_cast<double>(r.accuracies.size());
  if (r.accuracies.empty()) return r;
  double sum = 0.0;
  for (double a : r.accuracies) sum += a;
  r.mean = sum / n;
  if (r.accuracies.size() > 1) {
    double ss = 0.0;
    for (double a : r.accuracies) ss += (a - r.mean) * (a - r.mean);
    r.half_width = 1.96 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return r;
}

EvalResult evaluate_episodes(std::span<const data::CsiSample> dataset, const EpisodeSpec& spec,
                             const EpisodeClassifier& classifier) {
  const std::vector<Label> labels = data::labels_of(dataset);
  const std::vector<Episode> episodes = sample_episodes(labels, spec);
  std::vector<double> acc;
  for (const Episode& ep : episodes) {
    std::vector<data::CsiSample> support, query;
    for (std::size_t i : ep.support) support.push_back(dataset[i]);
    for (std::size_t i : ep.query) {
      query.push_back({dataset[i].values, std::nullopt, dataset[i].provenance});
    }
    const std::vector<Label> predicted = classifier(support, query);
    if (predicted.size() != query.size()) throw std::runtime_error("classifier returned the wrong number of predictions");
    std::size_t correct = 0;
    for (std::size_t q = 0; q < query.size(); ++q) correct += predicted[q] == labels[ep.query[q]] ? 1 : 0;
    acc.push_back(static_cast<double>(correct) / static_cast<double>(query.size()));
  }
  return summarize(std::move(acc));
}

ParamSet encoder_from_checkpoint(const ParamSet& checkpoint, int branch) {
  if (checkpoint.contains("theta1.conv1.weight") || checkpoint.contains("theta2.conv1.weight")) {
    return trainer::transfer(checkpoint, branch);
  }
  return trainer::fsc_from_checkpoint(checkpoint).theta;
}

EpisodeClassifier calibrating_classifier(model::EncoderArch arch, ParamSet theta, trainer::TrainConfig config) {
  return [arch = std::move(arch), theta = std::move(theta), config = std::move(config)](
             std::span<const data::CsiSample> support, std::span<const data::CsiSample> query) {
    trainer::FscModel m;
    try {
      m = trainer::train_fsc(support, arch, theta, config).model;
    } catch (const trainer::TrainingAborted& e) {
      m = trainer::fsc_from_checkpoint(e.last_good());
    }
    std::vector<Label> out;
    out.reserve(query.size());
    for (const auto& q : query) out.push_back(trainer::predict(m, q.values).label);
    return out;
  };
}

EvalResult evaluate_episodes(std::span<const data::CsiSample> dataset, const ParamSet& checkpoint, const EpisodeSpec& spec,
                             const trainer::TrainConfig& config) {
  const model::EncoderArch arch = trainer::arch_of(checkpoint);
  return evaluate_episodes(dataset, spec,
                           calibrating_classifier(arch, encoder_from_checkpoint(checkpoint, config.branch), config));
}

}  // namespace autofi::eval
