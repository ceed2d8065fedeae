#include "autofi/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>

#include <json.hpp>

namespace autofi::trainer {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0, 1)");
  if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
  if (lambda < 0.0 || gamma < 0.0) throw std::invalid_argument("lambda and gamma must be >= 0");
  if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be >= 0");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw std::invalid_argument("lr_decay must be in (0, 1]");
  if (branch != 1 && branch != 2) throw std::invalid_argument("branch must be 1 or 2");
  if (projector_hidden == 0 || projector_dim < 2 || embed_dim == 0) throw std::invalid_argument("network widths must be positive");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  auto mix = [](std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(seed);
  h = mix(h ^ a);
  h = mix(h ^ b);
  return mix(h ^ c);
}

void sgd_step(ParamSet& params, const ParamSet& grads, ParamSet& velocity, double lr, double momentum,
              double weight_decay) {
  if (grads.size() != params.size() || velocity.size() != params.size()) {
    throw std::invalid_argument("sgd_step: params, grads and velocity must align");
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    const auto& entry = params.entries()[t];
    const auto& g_entry = grads.entries()[t];
    if (g_entry.name != entry.name || g_entry.tensor.dims() != entry.tensor.dims() ||
        velocity.entries()[t].tensor.dims() != entry.tensor.dims()) {
      throw std::invalid_argument("sgd_step: shape or name mismatch at '" + entry.name + "'");
    }
    if (!entry.trainable) continue;
    const auto g = g_entry.tensor.values();
    for (float v : g) {
      if (!std::isfinite(v)) throw std::runtime_error("sgd_step: non-finite gradient in '" + entry.name + "'");
    }
    std::span<float> p = params.values_at(t);
    std::span<float> v = velocity.values_at(t);
    const float m = static_cast<float>(momentum), step = static_cast<float>(lr), wd = static_cast<float>(weight_decay);
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = m * v[i] + g[i] + wd * p[i];
      p[i] -= step * v[i];
    }
  }
}

std::string RunLog::to_jsonl(bool with_timing) const {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["stage"] = r.stage;
    j["epoch"] = r.epoch;
    if (r.stage == "gss") {
      j["L_p"] = r.prob;
      j["L_m"] = r.mi;
      j["L_g"] = r.geo;
      j["marginal_entropy"] = r.marginal_entropy;
    } else {
      j["L_c"] = r.ce;
      j["L_f"] = r.proto;
    }
    j["total"] = r.total;
    if (with_timing) j["seconds"] = r.seconds;
    out += j.dump() + "\n";
  }
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Tensor row_of(const Tensor& m, std::size_t i) {
  const std::size_t n = m.dim(1);
  return Tensor({n}, std::vector<float>(m.data() + i * n, m.data() + (i + 1) * n));
}

void set_input_norm(ParamSet& theta, const data::AmplitudeStats& stats) {
  const double scale = stats.stddev > 0.0 ? 1.0 / stats.stddev : 1.0;
  theta.assign(model::kInputNorm, Tensor({2}, std::vector<float>{static_cast<float>(stats.mean), static_cast<float>(scale)}));
}

// Forward of one branch over a batch of views, keeping tapes for backward.
struct BranchPass {
  std::vector<model::EncoderTape<float>> tapes;
  model::MlpTape<float> mlp;
  Tensor probs;
};

BranchPass forward_branch(const model::EncoderArch& arch, const ParamSet& theta, const ParamSet& phi,
                          const std::vector<Tensor>& views) {
  BranchPass pass;
  pass.tapes.resize(views.size());
  const std::size_t dim = arch.feature_dim();
  Tensor features({views.size(), dim});
  for (std::size_t b = 0; b < views.size(); ++b) {
    const Tensor f = model::encode(arch, theta, views[b], &pass.tapes[b]);
    std::copy(f.values().begin(), f.values().end(), features.data() + b * dim);
  }
  pass.probs = model::project(phi, features, &pass.mlp);
  return pass;
}

void backward_branch(const model::EncoderArch& arch, const ParamSet& theta, const ParamSet& phi, const BranchPass& pass,
                     const Tensor& grad_probs, ParamSet& g_theta, ParamSet& g_phi) {
  const Tensor g_features = model::project_backward(phi, pass.mlp, grad_probs, g_phi);
  for (std::size_t b = 0; b < pass.tapes.size(); ++b) {
    model::encode_backward(arch, theta, pass.tapes[b], row_of(g_features, b), g_theta);
  }
}

Tensor projector_arch_tensor(const model::ProjectorArch& p) {
  return Tensor({3}, std::vector<float>{static_cast<float>(p.in_dim), static_cast<float>(p.hidden),
                                        static_cast<float>(p.out_dim)});
}

}  // namespace

GssState init_gss(const model::EncoderArch& arch, std::span<const data::CsiSample> data, const TrainConfig& config) {
  config.validate();
  GssState s;
  s.arch = arch;
  s.projector = {arch.feature_dim(), config.projector_hidden, config.projector_dim};
  s.theta1 = model::init_params(arch, derive_seed(config.seed, 1, 1));
  s.theta2 = model::init_params(arch, derive_seed(config.seed, 1, 2));
  s.phi1 = model::init_params(s.projector, derive_seed(config.seed, 2, 1));
  s.phi2 = model::init_params(s.projector, derive_seed(config.seed, 2, 2));
  if (config.normalize_input && !data.empty()) {
    const auto stats = data::amplitude_stats(data);
    set_input_norm(s.theta1, stats);
    set_input_norm(s.theta2, stats);
  }
  s.v_theta1 = s.theta1.zeros_like();
  s.v_theta2 = s.theta2.zeros_like();
  s.v_phi1 = s.phi1.zeros_like();
  s.v_phi2 = s.phi2.zeros_like();
  return s;
}

ParamSet to_checkpoint(const GssState& s) {
  ParamSet ck;
  ck.add("arch.encoder", model::arch_to_tensor(s.arch), false);
  ck.add("arch.projector", projector_arch_tensor(s.projector), false);
  ck.merge(s.theta1, "theta1.");
  ck.merge(s.theta2, "theta2.");
  ck.merge(s.phi1, "phi1.");
  ck.merge(s.phi2, "phi2.");
  auto add_velocity = [&](const ParamSet& v, const std::string& name) {
    for (const auto& e : v.entries()) ck.add("opt.v." + name + "." + e.name, e.tensor, false);
  };
  add_velocity(s.v_theta1, "theta1");
  add_velocity(s.v_theta2, "theta2");
  add_velocity(s.v_phi1, "phi1");
  add_velocity(s.v_phi2, "phi2");
  ck.add("opt.epochs_done", Tensor({1}, std::vector<float>{static_cast<float>(s.epochs_done)}), false);
  return ck;
}

namespace {

ParamSet require_prefix(const ParamSet& ck, const std::string& prefix) {
  ParamSet p = ck.extract(prefix);
  if (p.size() == 0) throw std::runtime_error("checkpoint has no tensors under '" + prefix + "'");
  return p;
}

// Velocity entries are stored as buffers; restore the flags of `like`.
ParamSet velocity_from(const ParamSet& ck, const std::string& prefix, const ParamSet& like) {
  ParamSet stored = ck.extract(prefix);
  ParamSet v = like.zeros_like();
  if (stored.size() == 0) return v;
  for (const auto& e : like.entries()) v.assign(e.name, stored.get(e.name));
  return v;
}

void check_same_layout(const ParamSet& a, const ParamSet& b, const std::string& what) {
  if (a.size() != b.size()) throw std::runtime_error("checkpoint: " + what + " has a different tensor count");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.entries()[i].name != b.entries()[i].name || a.entries()[i].tensor.dims() != b.entries()[i].tensor.dims()) {
      throw std::runtime_error("checkpoint: " + what + " tensor '" + b.entries()[i].name + "' does not match the arch");
    }
  }
}

}  // namespace

model::EncoderArch arch_of(const ParamSet& checkpoint) {
  if (!checkpoint.contains("arch.encoder")) throw std::runtime_error("checkpoint lacks arch.encoder");
  return model::encoder_arch_from_tensor(checkpoint.get("arch.encoder"));
}

GssState gss_from_checkpoint(const ParamSet& ck) {
  GssState s;
  s.arch = arch_of(ck);
  if (!ck.contains("arch.projector") || ck.get("arch.projector").size() != 3) {
    throw std::runtime_error("checkpoint lacks a valid arch.projector");
  }
  const Tensor& pa = ck.get("arch.projector");
  s.projector = {static_cast<std::size_t>(pa[0]), static_cast<std::size_t>(pa[1]), static_cast<std::size_t>(pa[2])};
  s.theta1 = require_prefix(ck, "theta1.");
  s.theta2 = require_prefix(ck, "theta2.");
  s.phi1 = require_prefix(ck, "phi1.");
  s.phi2 = require_prefix(ck, "phi2.");
  const ParamSet ref_theta = model::init_params(s.arch, 0);
  const ParamSet ref_phi = model::init_params(s.projector, 0);
  check_same_layout(ref_theta, s.theta1, "theta1");
  check_same_layout(ref_theta, s.theta2, "theta2");
  check_same_layout(ref_phi, s.phi1, "phi1");
  check_same_layout(ref_phi, s.phi2, "phi2");
  s.v_theta1 = velocity_from(ck, "opt.v.theta1.", s.theta1);
  s.v_theta2 = velocity_from(ck, "opt.v.theta2.", s.theta2);
  s.v_phi1 = velocity_from(ck, "opt.v.phi1.", s.phi1);
  s.v_phi2 = velocity_from(ck, "opt.v.phi2.", s.phi2);
  s.epochs_done = ck.contains("opt.epochs_done") ? static_cast<std::size_t>(ck.get("opt.epochs_done")[0]) : 0;
  return s;
}

GssResult train_gss(std::span<const data::CsiSample> data, GssState state, const TrainConfig& config) {
  config.validate();
  if (data.size() < config.batch_size) {
    throw std::invalid_argument("train_gss: dataset has " + std::to_string(data.size()) + " samples, fewer than batch_size " +
                                std::to_string(config.batch_size));
  }
  const double epsilon = config.epsilon >= 0.0 ? config.epsilon : data::default_epsilon(data);
  const gss::GssWeights weights{config.lambda, config.gamma, config.mi_sign, gss::kDefaultFloor};
  const std::size_t batches = data.size() / config.batch_size;

  GssResult result{std::move(state), {}};
  GssState& s = result.state;
  const auto run_start = Clock::now();

  std::vector<std::size_t> order(data.size());
  for (std::size_t epoch = s.epochs_done; epoch < config.gss_epochs; ++epoch) {
    const auto epoch_start = Clock::now();
    const ParamSet last_good = to_checkpoint(s);
    const double lr = config.lr * std::pow(config.lr_decay, static_cast<double>(epoch));

    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(derive_seed(config.seed, 0x5EED, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochRecord rec;
    rec.stage = "gss";
    rec.epoch = epoch;
    for (std::size_t bi = 0; bi < batches; ++bi) {
      std::vector<Tensor> v1, v2;
      v1.reserve(config.batch_size);
      v2.reserve(config.batch_size);
      for (std::size_t k = 0; k < config.batch_size; ++k) {
        const std::size_t idx = order[bi * config.batch_size + k];
        data::ViewPair pair = data::augment_view(data[idx].values, epsilon, derive_seed(config.seed, epoch, bi, k));
        v1.push_back(std::move(pair.view1));
        v2.push_back(std::move(pair.view2));
      }
      const BranchPass b1 = forward_branch(s.arch, s.theta1, s.phi1, v1);
      const BranchPass b2 = forward_branch(s.arch, s.theta2, s.phi2, v2);

      Tensor g1, g2;
      const gss::LossComponents c = gss::total_loss(b1.probs, b2.probs, weights, &g1, &g2);
      if (!std::isfinite(c.total)) {
        throw TrainingAborted("train_gss: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                  std::to_string(bi),
                              last_good);
      }
      rec.prob += c.prob;
      rec.mi += c.mi;
      rec.geo += c.geo;
      rec.total += c.total;
      rec.marginal_entropy += 0.5 * (gss::marginal_entropy(b1.probs) + gss::marginal_entropy(b2.probs));

      ParamSet gt1 = s.theta1.zeros_like(), gt2 = s.theta2.zeros_like();
      ParamSet gp1 = s.phi1.zeros_like(), gp2 = s.phi2.zeros_like();
      backward_branch(s.arch, s.theta1, s.phi1, b1, g1, gt1, gp1);
      backward_branch(s.arch, s.theta2, s.phi2, b2, g2, gt2, gp2);
      try {
        sgd_step(s.theta1, gt1, s.v_theta1, lr, config.momentum, config.weight_decay);
        sgd_step(s.theta2, gt2, s.v_theta2, lr, config.momentum, config.weight_decay);
        sgd_step(s.phi1, gp1, s.v_phi1, lr, config.momentum, config.weight_decay);
        sgd_step(s.phi2, gp2, s.v_phi2, lr, config.momentum, config.weight_decay);
      } catch (const std::runtime_error& e) {
        throw TrainingAborted("train_gss: epoch " + std::to_string(epoch) + ": " + e.what(), last_good);
      }
    }
    const double inv = 1.0 / static_cast<double>(batches);
    rec.prob *= inv;
    rec.mi *= inv;
    rec.geo *= inv;
    rec.total *= inv;
    rec.marginal_entropy *= inv;
    rec.seconds = seconds_since(epoch_start);
    result.log.records.push_back(rec);
    s.epochs_done = epoch + 1;
  }
  result.log.wall_seconds = seconds_since(run_start);
  return result;
}

GssResult train_gss(std::span<const data::CsiSample> data, const model::EncoderArch& arch, const TrainConfig& config) {
  return train_gss(data, init_gss(arch, data, config), config);
}

ParamSet transfer(const ParamSet& checkpoint, int branch) {
  if (branch != 1 && branch != 2) throw std::invalid_argument("branch must be 1 or 2");
  const model::EncoderArch arch = arch_of(checkpoint);
  const std::string prefix = branch == 1 ? "theta1." : "theta2.";
  ParamSet theta = require_prefix(checkpoint, prefix);
  check_same_layout(model::init_params(arch, 0), theta, prefix.substr(0, prefix.size() - 1));
  return theta;
}

// ---------------------------------------------------------------------------

namespace {

struct LabelIndex {
  std::vector<fsc::Label> ids;  // sorted
  std::vector<fsc::Label> dense;  // per sample, in [0, K)
};

LabelIndex index_labels(std::span<const data::CsiSample> samples) {
  const auto labels = data::labels_of(samples);
  std::set<fsc::Label> unique(labels.begin(), labels.end());
  LabelIndex idx{std::vector<fsc::Label>(unique.begin(), unique.end()), {}};
  std::map<fsc::Label, fsc::Label> to_dense;
  for (std::size_t k = 0; k < idx.ids.size(); ++k) to_dense[idx.ids[k]] = static_cast<fsc::Label>(k);
  for (auto y : labels) idx.dense.push_back(to_dense[y]);
  return idx;
}

}  // namespace

FscResult train_fsc(std::span<const data::CsiSample> support, const model::EncoderArch& arch, const ParamSet& theta_init,
                    const TrainConfig& config) {
  config.validate();
  if (support.empty()) throw std::invalid_argument("train_fsc: empty support set");
  const LabelIndex labels = index_labels(support);
  const std::size_t K = labels.ids.size();
  const std::size_t M = support.size();
  const std::size_t dim = arch.feature_dim();

  FscResult result;
  FscModel& m = result.model;
  m.arch = arch;
  m.theta = theta_init;
  m.psi = model::init_params(model::ClassifierArch{dim, config.embed_dim, K}, derive_seed(config.seed, 3));
  ParamSet v_theta = m.theta.zeros_like(), v_psi = m.psi.zeros_like();

  auto encode_all = [&](std::vector<model::EncoderTape<float>>* tapes) {
    Tensor features({M, dim});
    for (std::size_t i = 0; i < M; ++i) {
      const Tensor f = model::encode(arch, m.theta, support[i].values, tapes ? &(*tapes)[i] : nullptr);
      std::copy(f.values().begin(), f.values().end(), features.data() + i * dim);
    }
    return features;
  };

  const auto run_start = Clock::now();
  Tensor frozen_features;
  if (config.freeze_encoder) frozen_features = encode_all(nullptr);
  std::vector<model::EncoderTape<float>> tapes(config.freeze_encoder ? 0 : M);
  std::optional<ParamSet> last_good;

  for (std::size_t epoch = 0; epoch < config.fsc_epochs; ++epoch) {
    const auto epoch_start = Clock::now();
    const double lr = config.lr * std::pow(config.lr_decay, static_cast<double>(epoch));
    const Tensor features = config.freeze_encoder ? frozen_features : encode_all(&tapes);
    model::MlpTape<float> mlp;
    const auto out = model::classify(m.psi, features, &mlp);
    Tensor g_probs, g_embed;
    const fsc::FscComponents c = fsc::fsc_objective(out.probs, out.embedding, labels.dense, K, &g_probs, &g_embed);
    // Snapshot with prototypes so an abort leaves a usable classifier.
    FscModel snapshot = m;
    snapshot.protos = fsc::compute_prototypes(out.embedding, labels.dense, K);
    snapshot.protos.class_ids = labels.ids;
    if (!std::isfinite(c.total)) {
      throw TrainingAborted("train_fsc: non-finite loss at epoch " + std::to_string(epoch),
                            last_good ? *last_good : to_checkpoint(snapshot));
    }
    last_good = to_checkpoint(snapshot);
    ParamSet g_psi = m.psi.zeros_like();
    const Tensor g_features = model::classify_backward(m.psi, mlp, g_embed, g_probs, g_psi);
    try {
      if (!config.freeze_encoder) {
        ParamSet g_theta = m.theta.zeros_like();
        for (std::size_t i = 0; i < M; ++i) model::encode_backward(arch, m.theta, tapes[i], row_of(g_features, i), g_theta);
        sgd_step(m.theta, g_theta, v_theta, lr, config.momentum, config.weight_decay);
      }
      sgd_step(m.psi, g_psi, v_psi, lr, config.momentum, config.weight_decay);
    } catch (const std::runtime_error& e) {
      throw TrainingAborted("train_fsc: epoch " + std::to_string(epoch) + ": " + e.what(), *last_good);
    }
    EpochRecord rec;
    rec.stage = "fsc";
    rec.epoch = epoch;
    rec.ce = c.ce;
    rec.proto = c.proto;
    rec.total = c.total;
    rec.seconds = seconds_since(epoch_start);
    result.log.records.push_back(rec);
  }

  const Tensor features = encode_all(nullptr);
  const auto out = model::classify(m.psi, features);
  m.protos = fsc::compute_prototypes(out.embedding, labels.dense, K);
  m.protos.class_ids = labels.ids;
  result.log.wall_seconds = seconds_since(run_start);
  return result;
}

ParamSet to_checkpoint(const FscModel& m) {
  ParamSet ck;
  ck.add("arch.encoder", model::arch_to_tensor(m.arch), false);
  ck.merge(m.theta, "theta.");
  ck.merge(m.psi, "psi.");
  if (!m.protos.centroids.empty()) {
    ck.add("protos.centroids", m.protos.centroids, false);
    std::vector<float> ids(m.protos.class_ids.begin(), m.protos.class_ids.end());
    std::vector<float> counts(m.protos.counts.begin(), m.protos.counts.end());
    ck.add("protos.ids", Tensor({ids.size()}, ids), false);
    ck.add("protos.counts", Tensor({counts.size()}, counts), false);
  }
  return ck;
}

FscModel fsc_from_checkpoint(const ParamSet& ck) {
  FscModel m;
  m.arch = arch_of(ck);
  m.theta = require_prefix(ck, "theta.");
  check_same_layout(model::init_params(m.arch, 0), m.theta, "theta");
  m.psi = require_prefix(ck, "psi.");
  for (const char* name : {"embed.weight", "embed.bias", "out.weight", "out.bias"}) {
    if (!m.psi.contains(name)) throw std::runtime_error(std::string("checkpoint lacks psi.") + name);
  }
  if (m.psi.get("embed.weight").dim(1) != m.arch.feature_dim()) {
    throw std::runtime_error("checkpoint classifier input does not match encoder feature dim");
  }
  if (!ck.contains("protos.centroids") || !ck.contains("protos.ids")) throw std::runtime_error("checkpoint lacks prototypes");
  m.protos.centroids = ck.get("protos.centroids");
  const Tensor& ids = ck.get("protos.ids");
  if (ids.size() != m.protos.centroids.dim(0)) throw std::runtime_error("checkpoint prototype ids do not match centroids");
  for (float v : ids.values()) m.protos.class_ids.push_back(static_cast<fsc::Label>(v));
  if (ck.contains("protos.counts")) {
    for (float v : ck.get("protos.counts").values()) m.protos.counts.push_back(static_cast<std::size_t>(v));
  }
  return m;
}

Tensor embed(const FscModel& m, std::span<const data::CsiSample> samples) {
  std::vector<Tensor> xs;
  xs.reserve(samples.size());
  for (const auto& s : samples) xs.push_back(s.values);
  return model::classify(m.psi, model::encode_batch(m.arch, m.theta, xs)).embedding;
}

Prediction predict(const FscModel& m, const Tensor& x) {
  const Tensor f = model::encode(m.arch, m.theta, x);
  const auto out = model::classify(m.psi, f.reshaped({1, f.size()}));
  Prediction p;
  p.posterior = fsc::proto_posterior<float>(out.embedding.values(), m.protos);
  p.label = m.protos.class_ids[fsc::argmax_lowest(p.posterior)];
  return p;
}

}  // namespace autofi::trainer
