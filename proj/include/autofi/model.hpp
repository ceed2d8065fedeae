#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "autofi/ops.hpp"
#include "autofi/tensor.hpp"

// Feature extractor, projector and classifier networks.
//
// The encoder follows the six-layer CNN used for 3x114x500 CSI windows:
//   conv 32x(15,23)/9 relu, conv 32x(3,7) relu, maxpool (1,2)/(1,2),
//   conv 64x(3,7) relu, conv 96x(3,7) relu, maxpool (1,2)/(1,2), flatten.
// Only the first convolution (and the input dims) may be changed, so that
// smaller inputs can be fed through the same stack.

namespace autofi::model {

struct StageSpec {
  enum class Kind { conv, pool };
  Kind kind;
  std::string name;
  std::size_t filters = 0;  // conv only
  Extent2 kernel;
  Extent2 stride;
};

struct EncoderArch {
  Shape input{3, 114, 500};
  std::size_t first_filters = 32;
  Extent2 first_kernel{15, 23};
  Extent2 first_stride{9, 9};

  std::vector<StageSpec> stages() const;
  /// Output shape of every stage, starting with the input. Throws with the
  /// offending stage and axis when the input is too small for the stack.
  std::vector<Shape> shape_chain() const;
  std::size_t feature_dim() const;

  bool operator==(const EncoderArch&) const = default;
};

struct ProjectorArch {
  std::size_t in_dim = 3456;
  std::size_t hidden = 256;
  std::size_t out_dim = 32;
};

struct ClassifierArch {
  std::size_t in_dim = 3456;
  std::size_t embed = 128;
  std::size_t classes = 6;
};

/// Uniform(-b, b) weights with b = sqrt(6 / (fan_in + fan_out)), zero biases.
ParamSet init_params(const EncoderArch& arch, std::uint64_t seed);
ParamSet init_params(const ProjectorArch& arch, std::uint64_t seed);
ParamSet init_params(const ClassifierArch& arch, std::uint64_t seed);

/// Name of the non-trainable [offset, scale] pair applied to raw input.
inline constexpr const char* kInputNorm = "input.norm";

template <typename T>
struct EncoderTape {
  std::vector<BasicTensor<T>> activations;  // input of stage i at i, final output last
  std::vector<std::vector<std::size_t>> argmax;
};

/// Feature vector of length arch.feature_dim() for one [A,S,T] sample.
template <typename T>
BasicTensor<T> encode(const EncoderArch& arch, const BasicParamSet<T>& theta, const BasicTensor<T>& x,
                      EncoderTape<T>* tape = nullptr);

/// Accumulates parameter gradients into `grads`; returns the input gradient
/// w.r.t. the normalised input when want_input is set, else an empty tensor.
template <typename T>
BasicTensor<T> encode_backward(const EncoderArch& arch, const BasicParamSet<T>& theta, const EncoderTape<T>& tape,
                               const BasicTensor<T>& grad_feature, BasicParamSet<T>& grads, bool want_input = false);

/// [B, feature_dim], rows in input order.
Tensor encode_batch(const EncoderArch& arch, const ParamSet& theta, const std::vector<Tensor>& xs);

template <typename T>
struct MlpTape {
  BasicTensor<T> input;
  BasicTensor<T> hidden;  // post-ReLU
  BasicTensor<T> probs;
};

/// Projector G: features [B,n] -> probability rows [B,D].
template <typename T>
BasicTensor<T> project(const BasicParamSet<T>& phi, const BasicTensor<T>& features, MlpTape<T>* tape = nullptr);

template <typename T>
BasicTensor<T> project_backward(const BasicParamSet<T>& phi, const MlpTape<T>& tape, const BasicTensor<T>& grad_probs,
                                BasicParamSet<T>& grads);

template <typename T>
struct Classification {
  BasicTensor<T> embedding;  // [B,128], post-ReLU; the prototype space
  BasicTensor<T> probs;      // [B,K]
};

/// Classifier F: features [B,n] -> (embedding, softmax output).
template <typename T>
Classification<T> classify(const BasicParamSet<T>& psi, const BasicTensor<T>& features, MlpTape<T>* tape = nullptr);

/// Either gradient may be empty (treated as zero).
template <typename T>
BasicTensor<T> classify_backward(const BasicParamSet<T>& psi, const MlpTape<T>& tape,
                                 const BasicTensor<T>& grad_embedding, const BasicTensor<T>& grad_probs,
                                 BasicParamSet<T>& grads);

// ---------------------------------------------------------------------------
// Checkpoint file: "AFCK", u8 version, u32 entry count, then per entry
// u16 name length, name bytes, u8 dtype (0 = float32), u8 rank, rank x u32
// dims, float32 payload. Little-endian throughout.

inline constexpr std::uint8_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const ParamSet& params);
ParamSet deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const ParamSet& params);
ParamSet load_checkpoint(const std::filesystem::path& path);

/// Entries that are state rather than weights: arch.*, protos.*, opt.*, and
/// any *input.norm.
bool is_buffer_name(std::string_view name);

Tensor arch_to_tensor(const EncoderArch& arch);
EncoderArch encoder_arch_from_tensor(const Tensor& t);

}  // namespace autofi::model
