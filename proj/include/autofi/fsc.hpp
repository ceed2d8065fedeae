#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "autofi/tensor.hpp"

// Few-shot calibration: class prototypes in embedding space, the
// distance-softmax posterior, and the two calibration losses.

namespace autofi::fsc {

inline constexpr double kDefaultFloor = 1e-7;

using Label = std::uint32_t;

template <typename T>
struct BasicPrototypeSet {
  BasicTensor<T> centroids;  // [K, E]
  std::vector<Label> class_ids;
  std::vector<std::size_t> counts;

  std::size_t num_classes() const { return class_ids.size(); }
  std::size_t dim() const { return centroids.dim(1); }
};

using PrototypeSet = BasicPrototypeSet<float>;

/// c_k = mean of the embeddings labelled k, for k in [0, num_classes).
/// Throws when some class has no member.
template <typename T>
BasicPrototypeSet<T> compute_prototypes(const BasicTensor<T>& embeddings, std::span<const Label> labels,
                                        std::size_t num_classes);

/// Squared Euclidean distance.
template <typename T>
double squared_distance(std::span<const T> a, std::span<const T> b);

/// p(y=k|z) = softmax_k(-d(z, c_k)).
template <typename T>
std::vector<double> proto_posterior(std::span<const T> z, const BasicPrototypeSet<T>& protos);

/// Index of the largest posterior entry, ties to the lowest index.
std::size_t argmax_lowest(std::span<const double> row);

/// Class id of the nearest prototype under the posterior above.
template <typename T>
Label predict_embedding(std::span<const T> z, const BasicPrototypeSet<T>& protos);

/// -mean_i ln max(probs[i, y_i], floor). Writes dL/dprobs when requested.
template <typename T>
double cross_entropy_loss(const BasicTensor<T>& probs, std::span<const Label> labels, BasicTensor<T>* grad = nullptr,
                          double floor = kDefaultFloor);

/// -mean_i ln p(y_i | z_i) against fixed prototypes (no gradient).
template <typename T>
double proto_loss(const BasicTensor<T>& embeddings, std::span<const Label> labels, const BasicPrototypeSet<T>& protos);

/// Same loss with the prototypes recomputed from `embeddings` themselves, so
/// the gradient flows through both z_i and c_k.
template <typename T>
double proto_loss_self(const BasicTensor<T>& embeddings, std::span<const Label> labels, std::size_t num_classes,
                       BasicTensor<T>* grad = nullptr);

struct FscComponents {
  double ce = 0.0;     // L_c
  double proto = 0.0;  // L_f
  double total = 0.0;
};

/// L_c + L_f with prototypes from the batch embeddings.
template <typename T>
FscComponents fsc_objective(const BasicTensor<T>& probs, const BasicTensor<T>& embeddings, std::span<const Label> labels,
                            std::size_t num_classes, BasicTensor<T>* grad_probs = nullptr,
                            BasicTensor<T>* grad_embeddings = nullptr);

}  // namespace autofi::fsc
