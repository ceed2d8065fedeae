#include "autofi/gss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace autofi::gss {

namespace {

// Floors and renormalises a row; returns the normaliser.
double floored(std::span<const double> p, double floor, std::vector<double>& out) {
  out.resize(p.size());
  double sum = 0.0;
  for (std::size_t d = 0; d < p.size(); ++d) {
    out[d] = std::max(p[d], floor);
    sum += out[d];
  }
  for (double& v : out) v /= sum;
  return sum;
}

// Pulls a gradient w.r.t. the renormalised row back through the floor.
void unfloor_grad(std::span<const double> p, double floor, const std::vector<double>& normed, double norm,
                  const std::vector<double>& grad_normed, std::span<double> grad) {
  double inner = 0.0;
  for (std::size_t d = 0; d < p.size(); ++d) inner += grad_normed[d] * normed[d];
  for (std::size_t d = 0; d < p.size(); ++d) grad[d] = p[d] > floor ? (grad_normed[d] - inner) / norm : 0.0;
}

template <typename T>
std::vector<double> row(const BasicTensor<T>& t, std::size_t i) {
  const std::size_t cols = t.dim(1);
  return std::vector<double>(t.data() + i * cols, t.data() + (i + 1) * cols);
}

template <typename T>
void check_prob_batch(const BasicTensor<T>& p, const char* what) {
  if (p.rank() != 2) throw std::invalid_argument(std::string(what) + " must be [B,D], got " + shape_to_string(p.dims()));
}

template <typename T>
void prepare_grad(BasicTensor<T>* g, const Shape& dims) {
  if (g != nullptr) *g = BasicTensor<T>(dims);
}

}  // namespace

double entropy(std::span<const double> p, double floor) {
  double h = 0.0;
  for (double v : p) h -= v * std::log(std::max(v, floor));
  return h;
}

double kl_div(std::span<const double> p, std::span<const double> q, double floor, std::span<double> grad_p,
              std::span<double> grad_q) {
  if (p.size() != q.size()) {
    throw std::invalid_argument("kl_div: length mismatch " + std::to_string(p.size()) + " vs " + std::to_string(q.size()));
  }
  std::vector<double> pn, qn;
  const double sp = floored(p, floor, pn);
  const double sq = floored(q, floor, qn);
  double kl = 0.0;
  for (std::size_t d = 0; d < p.size(); ++d) kl += pn[d] * std::log(pn[d] / qn[d]);

  if (!grad_p.empty()) {
    std::vector<double> g(p.size());
    for (std::size_t d = 0; d < p.size(); ++d) g[d] = std::log(pn[d] / qn[d]) + 1.0;
    unfloor_grad(p, floor, pn, sp, g, grad_p);
  }
  if (!grad_q.empty()) {
    std::vector<double> g(q.size());
    for (std::size_t d = 0; d < q.size(); ++d) g[d] = -pn[d] / qn[d];
    unfloor_grad(q, floor, qn, sq, g, grad_q);
  }
  return std::max(kl, 0.0);
}

double kl_div(std::span<const float> p, std::span<const float> q, double floor) {
  const std::vector<double> pd(p.begin(), p.end()), qd(q.begin(), q.end());
  return kl_div(std::span<const double>(pd), std::span<const double>(qd), floor);
}

template <typename T>
double prob_consistency_loss(const BasicTensor<T>& p1, const BasicTensor<T>& p2, BasicTensor<T>* grad1,
                             BasicTensor<T>* grad2, double floor) {
  check_prob_batch(p1, "P1");
  if (p1.dims() != p2.dims()) {
    throw std::invalid_argument("P1 " + shape_to_string(p1.dims()) + " and P2 " + shape_to_string(p2.dims()) +
                                " differ in shape");
  }
  const std::size_t batch = p1.dim(0), width = p1.dim(1);
  prepare_grad(grad1, p1.dims());
  prepare_grad(grad2, p2.dims());
  const double scale = 1.0 / (2.0 * static_cast<double>(batch));
  const bool want = grad1 != nullptr || grad2 != nullptr;
  std::vector<double> g12p(width), g12q(width), g21p(width), g21q(width);
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const auto a = row(p1, i);
    const auto b = row(p2, i);
    if (want) {
      total += kl_div(a, b, floor, g12p, g12q) + kl_div(b, a, floor, g21p, g21q);
      for (std::size_t d = 0; d < width; ++d) {
        if (grad1) (*grad1)[i * width + d] = static_cast<T>(scale * (g12p[d] + g21q[d]));
        if (grad2) (*grad2)[i * width + d] = static_cast<T>(scale * (g12q[d] + g21p[d]));
      }
    } else {
      total += kl_div(a, b, floor) + kl_div(b, a, floor);
    }
  }
  return total * scale;
}

template <typename T>
double mutual_info_loss(const BasicTensor<T>& probs, MiSign sign, BasicTensor<T>* grad, double floor) {
  check_prob_batch(probs, "P");
  const std::size_t batch = probs.dim(0), width = probs.dim(1);
  const double inv_b = 1.0 / static_cast<double>(batch);
  std::vector<double> mean(width, 0.0);
  double cond = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const auto r = row(probs, i);
    cond += entropy(r, floor);
    for (std::size_t d = 0; d < width; ++d) mean[d] += r[d] * inv_b;
  }
  cond *= inv_b;
  const double marginal = entropy(mean, floor);
  const double marginal_sign = sign == MiSign::corrected ? -1.0 : 1.0;

  if (grad != nullptr) {
    *grad = BasicTensor<T>(probs.dims());
    // d h(p) / d p_d = -(ln max(p_d, floor) + [p_d > floor])
    std::vector<double> g_marginal(width);
    for (std::size_t d = 0; d < width; ++d) {
      g_marginal[d] = -(std::log(std::max(mean[d], floor)) + (mean[d] > floor ? 1.0 : 0.0)) * inv_b;
    }
    for (std::size_t i = 0; i < batch; ++i) {
      for (std::size_t d = 0; d < width; ++d) {
        const double p = probs[i * width + d];
        const double g_cond = -(std::log(std::max(p, floor)) + (p > floor ? 1.0 : 0.0)) * inv_b;
        (*grad)[i * width + d] = static_cast<T>(g_cond + marginal_sign * g_marginal[d]);
      }
    }
  }
  return cond + marginal_sign * marginal;
}

template <typename T>
double marginal_entropy(const BasicTensor<T>& probs, double floor) {
  check_prob_batch(probs, "P");
  const std::size_t batch = probs.dim(0), width = probs.dim(1);
  std::vector<double> mean(width, 0.0);
  for (std::size_t i = 0; i < batch; ++i) {
    for (std::size_t d = 0; d < width; ++d) mean[d] += probs[i * width + d];
  }
  for (double& v : mean) v /= static_cast<double>(batch);
  return entropy(mean, floor);
}

double cosine_sim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_sim: length mismatch");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    ab += a[d] * b[d];
    aa += a[d] * a[d];
    bb += b[d] * b[d];
  }
  if (aa == 0.0 || bb == 0.0) throw std::invalid_argument("cosine_sim: zero-norm input");
  return 0.5 * (ab / std::sqrt(aa * bb) + 1.0);
}

namespace {

template <typename T>
std::vector<double> similarity_matrix(const BasicTensor<T>& probs) {
  const std::size_t batch = probs.dim(0);
  std::vector<std::vector<double>> rows(batch);
  for (std::size_t i = 0; i < batch; ++i) rows[i] = row(probs, i);
  std::vector<double> k(batch * batch, 0.0);
  for (std::size_t i = 0; i < batch; ++i) {
    for (std::size_t j = i + 1; j < batch; ++j) {
      const double s = cosine_sim(rows[i], rows[j]);
      k[i * batch + j] = s;
      k[j * batch + i] = s;
    }
  }
  return k;
}

}  // namespace

template <typename T>
BasicTensor<T> geometric_embedding(const BasicTensor<T>& probs) {
  check_prob_batch(probs, "P");
  const std::size_t batch = probs.dim(0);
  if (batch < 2) throw std::invalid_argument("geometric_embedding needs B >= 2, got B=" + std::to_string(batch));
  const std::vector<double> k = similarity_matrix(probs);
  BasicTensor<T> q({batch, batch});
  for (std::size_t i = 0; i < batch; ++i) {
    double denom = 0.0;
    for (std::size_t m = 0; m < batch; ++m) {
      if (m != i) denom += k[i * batch + m];
    }
    if (!(denom > 0.0)) throw std::invalid_argument("geometric_embedding: row " + std::to_string(i) + " has no similar neighbour");
    for (std::size_t j = 0; j < batch; ++j) q[i * batch + j] = j == i ? T{0} : static_cast<T>(k[i * batch + j] / denom);
  }
  return q;
}

template <typename T>
BasicTensor<T> geometric_embedding_backward(const BasicTensor<T>& probs, const BasicTensor<T>& q,
                                            const BasicTensor<T>& grad_q) {
  const std::size_t batch = probs.dim(0), width = probs.dim(1);
  const std::vector<double> k = similarity_matrix(probs);

  // dL/dK through the row normalisation q_ij = K_ij / S_i.
  std::vector<double> g_k(batch * batch, 0.0);
  for (std::size_t i = 0; i < batch; ++i) {
    double denom = 0.0, inner = 0.0;
    for (std::size_t j = 0; j < batch; ++j) {
      if (j == i) continue;
      denom += k[i * batch + j];
      inner += static_cast<double>(grad_q[i * batch + j]) * q[i * batch + j];
    }
    for (std::size_t j = 0; j < batch; ++j) {
      if (j != i) g_k[i * batch + j] = (grad_q[i * batch + j] - inner) / denom;
    }
  }

  std::vector<std::vector<double>> rows(batch);
  std::vector<double> norms(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    rows[i] = row(probs, i);
    double nn = 0.0;
    for (double v : rows[i]) nn += v * v;
    norms[i] = std::sqrt(nn);
  }

  std::vector<double> grad(batch * width, 0.0);
  for (std::size_t i = 0; i < batch; ++i) {
    for (std::size_t j = 0; j < batch; ++j) {
      if (j == i) continue;
      const double g = g_k[i * batch + j];
      if (g == 0.0) continue;
      const auto& a = rows[i];
      const auto& b = rows[j];
      double ab = 0.0;
      for (std::size_t d = 0; d < width; ++d) ab += a[d] * b[d];
      const double na = norms[i], nb = norms[j];
      // K(a,b) = (a.b/(|a||b|) + 1) / 2
      for (std::size_t d = 0; d < width; ++d) {
        grad[i * width + d] += g * 0.5 * (b[d] / (na * nb) - ab * a[d] / (na * na * na * nb));
        grad[j * width + d] += g * 0.5 * (a[d] / (na * nb) - ab * b[d] / (nb * nb * nb * na));
      }
    }
  }
  BasicTensor<T> out(probs.dims());
  for (std::size_t i = 0; i < grad.size(); ++i) out[i] = static_cast<T>(grad[i]);
  return out;
}

template <typename T>
double geometric_loss(const BasicTensor<T>& q1, const BasicTensor<T>& q2, BasicTensor<T>* grad1, BasicTensor<T>* grad2,
                      double floor) {
  if (q1.rank() != 2 || q1.dim(0) != q1.dim(1)) throw std::invalid_argument("Q1 must be [B,B], got " + shape_to_string(q1.dims()));
  if (q1.dims() != q2.dims()) {
    throw std::invalid_argument("geometric_loss: batch mismatch " + shape_to_string(q1.dims()) + " vs " +
                                shape_to_string(q2.dims()));
  }
  const std::size_t batch = q1.dim(0);
  prepare_grad(grad1, q1.dims());
  prepare_grad(grad2, q2.dims());
  const double inv_b = 1.0 / static_cast<double>(batch);
  std::vector<double> a(batch - 1), b(batch - 1), ga(batch - 1), gb(batch - 1);
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    for (std::size_t j = 0, o = 0; j < batch; ++j) {
      if (j == i) continue;
      a[o] = q1[i * batch + j];
      b[o] = q2[i * batch + j];
      ++o;
    }
    if (grad1 || grad2) {
      total += kl_div(a, b, floor, ga, gb);
      for (std::size_t j = 0, o = 0; j < batch; ++j) {
        if (j == i) continue;
        if (grad1) (*grad1)[i * batch + j] = static_cast<T>(ga[o] * inv_b);
        if (grad2) (*grad2)[i * batch + j] = static_cast<T>(gb[o] * inv_b);
        ++o;
      }
    } else {
      total += kl_div(a, b, floor);
    }
  }
  return total * inv_b;
}

template <typename T>
LossComponents total_loss(const BasicTensor<T>& p1, const BasicTensor<T>& p2, const GssWeights& weights,
                          BasicTensor<T>* grad1, BasicTensor<T>* grad2) {
  if (weights.lambda < 0.0 || weights.gamma < 0.0) throw std::invalid_argument("lambda and gamma must be >= 0");
  const bool want = grad1 != nullptr && grad2 != nullptr;
  LossComponents c;
  BasicTensor<T> gp1, gp2;
  c.prob = prob_consistency_loss(p1, p2, want ? &gp1 : nullptr, want ? &gp2 : nullptr, weights.floor);

  BasicTensor<T> gm1, gm2;
  const double m1 = mutual_info_loss(p1, weights.sign, want ? &gm1 : nullptr, weights.floor);
  const double m2 = mutual_info_loss(p2, weights.sign, want ? &gm2 : nullptr, weights.floor);
  c.mi = 0.5 * (m1 + m2);

  const std::size_t batch = p1.dim(0);
  BasicTensor<T> gg1, gg2;
  const bool geometric = batch >= 2;
  if (!geometric && weights.gamma != 0.0) {
    throw std::invalid_argument("geometric term needs B >= 2, got B=" + std::to_string(batch));
  }
  if (geometric) {
    const BasicTensor<T> q1 = geometric_embedding(p1);
    const BasicTensor<T> q2 = geometric_embedding(p2);
    BasicTensor<T> gq1, gq2;
    const bool need = want && weights.gamma != 0.0;
    c.geo = geometric_loss(q1, q2, need ? &gq1 : nullptr, need ? &gq2 : nullptr, weights.floor);
    if (need) {
      gg1 = geometric_embedding_backward(p1, q1, gq1);
      gg2 = geometric_embedding_backward(p2, q2, gq2);
    }
  }
  c.total = c.prob + weights.lambda * c.mi + weights.gamma * c.geo;

  if (want) {
    *grad1 = BasicTensor<T>(p1.dims());
    *grad2 = BasicTensor<T>(p2.dims());
    const double half_lambda = 0.5 * weights.lambda;
    const bool use_geo = geometric && weights.gamma != 0.0;
    for (std::size_t i = 0; i < p1.size(); ++i) {
      double g1 = gp1[i] + half_lambda * gm1[i];
      double g2 = gp2[i] + half_lambda * gm2[i];
      if (use_geo) {
        g1 += weights.gamma * gg1[i];
        g2 += weights.gamma * gg2[i];
      }
      (*grad1)[i] = static_cast<T>(g1);
      (*grad2)[i] = static_cast<T>(g2);
    }
  }
  return c;
}

#define AUTOFI_INSTANTIATE_GSS(T)                                                                                    \
  template double prob_consistency_loss(const BasicTensor<T>&, const BasicTensor<T>&, BasicTensor<T>*,              \
                                        BasicTensor<T>*, double);                                                   \
  template double mutual_info_loss(const BasicTensor<T>&, MiSign, BasicTensor<T>*, double);                         \
  template double marginal_entropy(const BasicTensor<T>&, double);                                                  \
  template BasicTensor<T> geometric_embedding(const BasicTensor<T>&);                                               \
  template BasicTensor<T> geometric_embedding_backward(const BasicTensor<T>&, const BasicTensor<T>&,                \
                                                       const BasicTensor<T>&);                                      \
  template double geometric_loss(const BasicTensor<T>&, const BasicTensor<T>&, BasicTensor<T>*, BasicTensor<T>*,    \
                                 double);                                                                           \
  template LossComponents total_loss(const BasicTensor<T>&, const BasicTensor<T>&, const GssWeights&,               \
                                     BasicTensor<T>*, BasicTensor<T>*);

AUTOFI_INSTANTIATE_GSS(float)
AUTOFI_INSTANTIATE_GSS(double)

#undef AUTOFI_INSTANTIATE_GSS

}  // namespace autofi::gss
