#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "autofi/data.hpp"
#include "autofi/fsc.hpp"
#include "autofi/gss.hpp"
#include "autofi/model.hpp"

namespace autofi::trainer {

struct TrainConfig {
  double lr = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 128;
  std::size_t gss_epochs = 300;
  std::size_t fsc_epochs = 100;
  double lambda = 1.0;
  double gamma = 1000.0;
  double epsilon = -1.0;  // < 0: 0.05 x dataset amplitude stddev
  std::uint64_t seed = 0;
  gss::MiSign mi_sign = gss::MiSign::corrected;
  double weight_decay = 0.0;
  double lr_decay = 1.0;  // per-epoch multiplicative factor
  bool freeze_encoder = false;
  bool normalize_input = true;
  std::size_t projector_hidden = 256;
  std::size_t projector_dim = 32;
  std::size_t embed_dim = 128;
  int branch = 1;

  void validate() const;
};

/// SplitMix64-style mixing of a base seed with stream indices.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

/// Classical momentum: v <- momentum * v + g (+ weight_decay * p); p <- p - lr * v.
/// Only trainable entries move. Throws naming the tensor on a non-finite gradient.
void sgd_step(ParamSet& params, const ParamSet& grads, ParamSet& velocity, double lr, double momentum,
              double weight_decay = 0.0);

struct EpochRecord {
  std::string stage;  // "gss" or "fsc"
  std::size_t epoch = 0;
  double total = 0.0;
  // gss
  double prob = 0.0;
  double mi = 0.0;
  double geo = 0.0;
  double marginal_entropy = 0.0;
  // fsc
  double ce = 0.0;
  double proto = 0.0;
  double seconds = 0.0;
};

struct RunLog {
  std::vector<EpochRecord> records;
  double wall_seconds = 0.0;

  /// One JSON object per epoch. Timing is left out unless asked for, so that
  /// identical runs produce identical logs.
  std::string to_jsonl(bool with_timing = false) const;
};

/// Twin networks of the self-supervised stage plus optimiser state.
struct GssState {
  model::EncoderArch arch;
  model::ProjectorArch projector;
  ParamSet theta1, theta2, phi1, phi2;
  ParamSet v_theta1, v_theta2, v_phi1, v_phi2;
  std::size_t epochs_done = 0;
};

/// Independent initialisation of both branches; input normalisation from `data`.
GssState init_gss(const model::EncoderArch& arch, std::span<const data::CsiSample> data, const TrainConfig& config);

ParamSet to_checkpoint(const GssState& state);
GssState gss_from_checkpoint(const ParamSet& checkpoint);

/// Thrown when a loss turns non-finite; carries the state from the start of
/// the failing epoch.
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& what, ParamSet last_good)
      : std::runtime_error(what), last_good_(std::move(last_good)) {}
  const ParamSet& last_good() const { return last_good_; }

 private:
  ParamSet last_good_;
};

struct GssResult {
  GssState state;
  RunLog log;
};

/// Runs epochs state.epochs_done .. config.gss_epochs - 1. Each epoch shuffles
/// with a seed derived from (seed, epoch), drops the last partial batch, and
/// draws view noise from (seed, epoch, batch, sample).
GssResult train_gss(std::span<const data::CsiSample> data, GssState state, const TrainConfig& config);

/// Convenience: init_gss + train_gss.
GssResult train_gss(std::span<const data::CsiSample> data, const model::EncoderArch& arch, const TrainConfig& config);

/// Encoder parameters of branch 1 or 2 from a self-supervised checkpoint.
ParamSet transfer(const ParamSet& checkpoint, int branch = 1);
model::EncoderArch arch_of(const ParamSet& checkpoint);

struct FscModel {
  model::EncoderArch arch;
  ParamSet theta;
  ParamSet psi;
  fsc::PrototypeSet protos;
};

struct FscResult {
  FscModel model;
  RunLog log;
};

/// Fine-tunes encoder (unless frozen) and classifier on the labelled support
/// set with L_c + L_f, one full-batch step per epoch. Labels may be any ids;
/// prototypes carry them back. On abort, last_good holds the newest model
/// with a finite loss, prototypes included.
FscResult train_fsc(std::span<const data::CsiSample> support, const model::EncoderArch& arch, const ParamSet& theta_init,
                    const TrainConfig& config);

ParamSet to_checkpoint(const FscModel& model);
FscModel fsc_from_checkpoint(const ParamSet& checkpoint);

/// 128-d embeddings [N,E] for a list of samples.
Tensor embed(const FscModel& model, std::span<const data::CsiSample> samples);

struct Prediction {
  fsc::Label label = 0;
  std::vector<double> posterior;  // ordered as model.protos.class_ids
};

Prediction predict(const FscModel& model, const Tensor& x);

}  // namespace autofi::trainer
