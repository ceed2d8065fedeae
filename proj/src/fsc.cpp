#include "autofi/fsc.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace autofi::fsc {

namespace {

void check_labels(std::span<const Label> labels, std::size_t rows, std::size_t num_classes) {
  if (labels.size() != rows) {
    throw std::invalid_argument("got " + std::to_string(labels.size()) + " labels for " + std::to_string(rows) + " rows");
  }
  for (Label y : labels) {
    if (y >= num_classes) {
      throw std::out_of_range("label " + std::to_string(y) + " out of range for " + std::to_string(num_classes) +
                              " classes");
    }
  }
}

std::vector<double> neg_distance_softmax(const std::vector<double>& dist) {
  const double shift = *std::min_element(dist.begin(), dist.end());
  std::vector<double> p(dist.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < dist.size(); ++k) {
    p[k] = std::exp(-(dist[k] - shift));
    sum += p[k];
  }
  for (double& v : p) v /= sum;
  return p;
}

// -ln softmax_y(-dist), without forming the posterior.
double neg_log_posterior(const std::vector<double>& dist, std::size_t y) {
  const double shift = *std::min_element(dist.begin(), dist.end());
  double sum = 0.0;
  for (double d : dist) sum += std::exp(-(d - shift));
  return dist[y] - shift + std::log(sum);
}

template <typename T>
std::vector<double> distances(std::span<const T> z, const BasicPrototypeSet<T>& protos) {
  const std::size_t dim = protos.dim();
  if (z.size() != dim) {
    throw std::invalid_argument("embedding length " + std::to_string(z.size()) + " does not match prototype dim " +
                                std::to_string(dim));
  }
  std::vector<double> d(protos.num_classes());
  for (std::size_t k = 0; k < d.size(); ++k) {
    d[k] = squared_distance<T>(z, std::span<const T>(protos.centroids.data() + k * dim, dim));
  }
  return d;
}

}  // namespace

template <typename T>
BasicPrototypeSet<T> compute_prototypes(const BasicTensor<T>& embeddings, std::span<const Label> labels,
                                        std::size_t num_classes) {
  if (embeddings.rank() != 2) {
    throw std::invalid_argument("embeddings must be [M,E], got " + shape_to_string(embeddings.dims()));
  }
  if (num_classes == 0) throw std::invalid_argument("compute_prototypes: need at least one class");
  check_labels(labels, embeddings.dim(0), num_classes);
  const std::size_t dim = embeddings.dim(1);
  std::vector<double> sums(num_classes * dim, 0.0);
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++counts[labels[i]];
    for (std::size_t e = 0; e < dim; ++e) sums[labels[i] * dim + e] += embeddings[i * dim + e];
  }
  std::string missing;
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (counts[k] == 0) missing += (missing.empty() ? "" : ", ") + std::to_string(k);
  }
  if (!missing.empty()) throw std::invalid_argument("compute_prototypes: empty class(es) " + missing);

  BasicPrototypeSet<T> out{BasicTensor<T>({num_classes, dim}), {}, counts};
  for (std::size_t k = 0; k < num_classes; ++k) {
    out.class_ids.push_back(static_cast<Label>(k));
    for (std::size_t e = 0; e < dim; ++e) {
      out.centroids[k * dim + e] = static_cast<T>(sums[k * dim + e] / static_cast<double>(counts[k]));
    }
  }
  return out;
}

template <typename T>
double squared_distance(std::span<const T> a, std::span<const T> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc;
}

template <typename T>
std::vector<double> proto_posterior(std::span<const T> z, const BasicPrototypeSet<T>& protos) {
  return neg_distance_softmax(distances(z, protos));
}

std::size_t argmax_lowest(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < row.size(); ++k) {
    if (row[k] > row[best]) best = k;
  }
  return best;
}

template <typename T>
Label predict_embedding(std::span<const T> z, const BasicPrototypeSet<T>& protos) {
  const std::vector<double> p = proto_posterior(z, protos);
  return protos.class_ids[argmax_lowest(p)];
}

template <typename T>
double cross_entropy_loss(const BasicTensor<T>& probs, std::span<const Label> labels, BasicTensor<T>* grad,
                          double floor) {
  if (probs.rank() != 2) throw std::invalid_argument("probs must be [M,K], got " + shape_to_string(probs.dims()));
  const std::size_t rows = probs.dim(0), classes = probs.dim(1);
  check_labels(labels, rows, classes);
  if (grad != nullptr) *grad = BasicTensor<T>(probs.dims());
  double loss = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const double p = probs[i * classes + labels[i]];
    loss -= std::log(std::max(p, floor));
    if (grad != nullptr && p > floor) (*grad)[i * classes + labels[i]] = static_cast<T>(-1.0 / (p * rows));
  }
  return loss / static_cast<double>(rows);
}

template <typename T>
double proto_loss(const BasicTensor<T>& embeddings, std::span<const Label> labels, const BasicPrototypeSet<T>& protos) {
  const std::size_t rows = embeddings.dim(0), dim = embeddings.dim(1);
  check_labels(labels, rows, protos.num_classes());
  double loss = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    loss += neg_log_posterior(distances(std::span<const T>(embeddings.data() + i * dim, dim), protos), labels[i]);
  }
  return loss / static_cast<double>(rows);
}

template <typename T>
double proto_loss_self(const BasicTensor<T>& embeddings, std::span<const Label> labels, std::size_t num_classes,
                       BasicTensor<T>* grad) {
  const BasicPrototypeSet<T> protos = compute_prototypes(embeddings, labels, num_classes);
  const std::size_t rows = embeddings.dim(0), dim = embeddings.dim(1);
  const double inv_m = 1.0 / static_cast<double>(rows);

  std::vector<double> grad_z(rows * dim, 0.0);
  std::vector<double> grad_c(num_classes * dim, 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const T* z = embeddings.data() + i * dim;
    const auto d = distances(std::span<const T>(z, dim), protos);
    loss += neg_log_posterior(d, labels[i]);
    if (grad == nullptr) continue;
    const auto p = neg_distance_softmax(d);
    for (std::size_t k = 0; k < num_classes; ++k) {
      const double g_d = ((k == labels[i] ? 1.0 : 0.0) - p[k]) * inv_m;
      if (g_d == 0.0) continue;
      const T* c = protos.centroids.data() + k * dim;
      for (std::size_t e = 0; e < dim; ++e) {
        const double diff = 2.0 * (static_cast<double>(z[e]) - static_cast<double>(c[e]));
        grad_z[i * dim + e] += g_d * diff;
        grad_c[k * dim + e] -= g_d * diff;
      }
    }
  }
  if (grad != nullptr) {
    *grad = BasicTensor<T>(embeddings.dims());
    for (std::size_t i = 0; i < rows; ++i) {
      const std::size_t k = labels[i];
      const double share = 1.0 / static_cast<double>(protos.counts[k]);
      for (std::size_t e = 0; e < dim; ++e) {
        (*grad)[i * dim + e] = static_cast<T>(grad_z[i * dim + e] + share * grad_c[k * dim + e]);
      }
    }
  }
  return loss * inv_m;
}

template <typename T>
FscComponents fsc_objective(const BasicTensor<T>& probs, const BasicTensor<T>& embeddings, std::span<const Label> labels,
                            std::size_t num_classes, BasicTensor<T>* grad_probs, BasicTensor<T>* grad_embeddings) {
  FscComponents c;
  c.ce = cross_entropy_loss(probs, labels, grad_probs);
  c.proto = proto_loss_self(embeddings, labels, num_classes, grad_embeddings);
  c.total = c.ce + c.proto;
  return c;
}

#define AUTOFI_INSTANTIATE_FSC(T)                                                                                   \
  template struct BasicPrototypeSet<T>;                                                                            \
  template BasicPrototypeSet<T> compute_prototypes(const BasicTensor<T>&, std::span<const Label>, std::size_t);    \
  template double squared_distance(std::span<const T>, std::span<const T>);                                        \
  template std::vector<double> proto_posterior(std::span<const T>, const BasicPrototypeSet<T>&);                   \
  template Label predict_embedding(std::span<const T>, const BasicPrototypeSet<T>&);                               \
  template double cross_entropy_loss(const BasicTensor<T>&, std::span<const Label>, BasicTensor<T>*, double);      \
  template double proto_loss(const BasicTensor<T>&, std::span<const Label>, const BasicPrototypeSet<T>&);          \
  template double proto_loss_self(const BasicTensor<T>&, std::span<const Label>, std::size_t, BasicTensor<T>*);    \
  template FscComponents fsc_objective(const BasicTensor<T>&, const BasicTensor<T>&, std::span<const Label>,       \
                                       std::size_t, BasicTensor<T>*, BasicTensor<T>*);

AUTOFI_INSTANTIATE_FSC(float)
AUTOFI_INSTANTIATE_FSC(double)

#undef AUTOFI_INSTANTIATE_FSC

}  // namespace autofi::fsc
