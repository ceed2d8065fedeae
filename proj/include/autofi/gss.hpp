#pragma once

#include <span>

#include "autofi/tensor.hpp"

// Geometric self-supervised objective on twin-view probability batches.
//
// A ProbBatch is a [B,D] tensor whose rows lie on the simplex. Every loss
// optionally writes its gradient w.r.t. its probability inputs into
// caller-provided tensors of the same shape (overwritten, not accumulated).

namespace autofi::gss {

inline constexpr double kDefaultFloor = 1e-7;

/// Which sign of the marginal-entropy term the mutual-information loss uses.
enum class MiSign {
  /// E[h(P)] - h(E[P]): minimising it maximises the mutual-information surrogate.
  corrected,
  /// h(E[P]) + E[h(P)]: the literal form, kept for the collapse ablation.
  literal,
};

/// Entropy -sum p ln max(p, floor), in nats.
double entropy(std::span<const double> p, double floor = kDefaultFloor);

/// KL(p || q) after flooring both rows at `floor` and renormalising.
/// Optional gradient outputs have length p.size().
double kl_div(std::span<const double> p, std::span<const double> q, double floor = kDefaultFloor,
              std::span<double> grad_p = {}, std::span<double> grad_q = {});

/// Float convenience overload.
double kl_div(std::span<const float> p, std::span<const float> q, double floor = kDefaultFloor);

/// (1/2B) sum_i [KL(P1^i || P2^i) + KL(P2^i || P1^i)]
template <typename T>
double prob_consistency_loss(const BasicTensor<T>& p1, const BasicTensor<T>& p2, BasicTensor<T>* grad1 = nullptr,
                             BasicTensor<T>* grad2 = nullptr, double floor = kDefaultFloor);

template <typename T>
double mutual_info_loss(const BasicTensor<T>& probs, MiSign sign = MiSign::corrected, BasicTensor<T>* grad = nullptr,
                        double floor = kDefaultFloor);

/// h(mean_i P^i): the marginal entropy used as the collapse witness.
template <typename T>
double marginal_entropy(const BasicTensor<T>& probs, double floor = kDefaultFloor);

/// (a.b / (|a||b|) + 1) / 2; throws on a zero-norm argument.
double cosine_sim(std::span<const double> a, std::span<const double> b);

/// Q[i][j] = K(P^i,P^j) / sum_{m != i} K(P^i,P^m) for j != i, Q[i][i] = 0.
/// Requires B >= 2.
template <typename T>
BasicTensor<T> geometric_embedding(const BasicTensor<T>& probs);

/// Back-propagates dL/dQ to dL/dP for the embedding above.
template <typename T>
BasicTensor<T> geometric_embedding_backward(const BasicTensor<T>& probs, const BasicTensor<T>& q,
                                            const BasicTensor<T>& grad_q);

/// (1/B) sum_i KL(Q1^i || Q2^i) over the off-diagonal entries.
template <typename T>
double geometric_loss(const BasicTensor<T>& q1, const BasicTensor<T>& q2, BasicTensor<T>* grad1 = nullptr,
                      BasicTensor<T>* grad2 = nullptr, double floor = kDefaultFloor);

struct LossComponents {
  double prob = 0.0;  // L_p
  double mi = 0.0;    // (L_m(P1) + L_m(P2)) / 2
  double geo = 0.0;   // L_g(Q(P1), Q(P2))
  double total = 0.0;
};

struct GssWeights {
  double lambda = 1.0;
  double gamma = 1000.0;
  MiSign sign = MiSign::corrected;
  double floor = kDefaultFloor;
};

/// L = L_p + lambda * (L_m(P1) + L_m(P2)) / 2 + gamma * L_g(Q(P1), Q(P2)).
/// The geometric term needs B >= 2 unless gamma is zero.
template <typename T>
LossComponents total_loss(const BasicTensor<T>& p1, const BasicTensor<T>& p2, const GssWeights& weights,
                          BasicTensor<T>* grad1 = nullptr, BasicTensor<T>* grad2 = nullptr);

}  // namespace autofi::gss
