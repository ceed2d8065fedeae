#include "autofi/gradsuite.hpp"

#include <random>

#include "autofi/fsc.hpp"
#include "autofi/gss.hpp"
#include "autofi/ops.hpp"

namespace autofi::gradsuite {

namespace {

TensorD random_tensor(Shape dims, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  TensorD t(std::move(dims));
  for (double& v : t.values()) v = n(rng);
  return t;
}

void store(ParamSetD* grads, const std::string& name, const TensorD& g) {
  if (grads != nullptr) grads->assign(name, g);
}

// Losses on softmax(logits) rows, chained back through the softmax.
template <typename F>
LossWithGrad on_probs_pair(F f) {
  return [f](const ParamSetD& p, ParamSetD* grads) {
    const TensorD p1 = softmax_rows(p.get("logits1"));
    const TensorD p2 = softmax_rows(p.get("logits2"));
    TensorD g1, g2;
    const double loss = f(p1, p2, grads ? &g1 : nullptr, grads ? &g2 : nullptr);
    if (grads != nullptr) {
      store(grads, "logits1", softmax_rows_backward(p1, g1));
      store(grads, "logits2", softmax_rows_backward(p2, g2));
    }
    return loss;
  };
}

LossWithGrad mutual_info(gss::MiSign sign) {
  return [sign](const ParamSetD& p, ParamSetD* grads) {
    const TensorD probs = softmax_rows(p.get("logits1"));
    TensorD g;
    const double loss = gss::mutual_info_loss(probs, sign, grads ? &g : nullptr);
    store(grads, "logits1", grads ? softmax_rows_backward(probs, g) : TensorD{});
    return loss;
  };
}

std::vector<fsc::Label> cyclic_labels(std::size_t rows, std::size_t classes) {
  std::vector<fsc::Label> y(rows);
  for (std::size_t i = 0; i < rows; ++i) y[i] = static_cast<fsc::Label>(i % classes);
  return y;
}

}  // namespace

std::vector<std::string> registered_losses() {
  return {"L_p", "L_m", "L_m_literal", "L_g", "L_c", "L_f", "gss_total"};
}

std::vector<LossCheck> run(std::uint64_t seed, std::size_t batch, std::size_t dim) {
  if (batch < 2 || dim < 2) throw std::invalid_argument("gradient suite needs batch >= 2 and dim >= 2");
  std::mt19937_64 rng(seed);
  ParamSetD logits;
  logits.add("logits1", random_tensor({batch, dim}, rng, 1.0));
  logits.add("logits2", random_tensor({batch, dim}, rng, 1.0));
  ParamSetD single;
  single.add("logits1", logits.get("logits1"));
  ParamSetD embeddings;
  embeddings.add("embeddings", random_tensor({batch, dim}, rng, 1.0));

  const std::size_t classes = std::min<std::size_t>(2, batch);
  const auto labels = cyclic_labels(batch, classes);
  const GradCheckOptions opts{1e-5, 200, seed};

  const LossWithGrad l_p = on_probs_pair([](const TensorD& a, const TensorD& b, TensorD* ga, TensorD* gb) {
    return gss::prob_consistency_loss(a, b, ga, gb);
  });
  const LossWithGrad l_g = on_probs_pair([](const TensorD& a, const TensorD& b, TensorD* ga, TensorD* gb) {
    const TensorD qa = gss::geometric_embedding(a), qb = gss::geometric_embedding(b);
    TensorD gqa, gqb;
    const double loss = gss::geometric_loss(qa, qb, ga ? &gqa : nullptr, gb ? &gqb : nullptr);
    if (ga != nullptr) {
      *ga = gss::geometric_embedding_backward(a, qa, gqa);
      *gb = gss::geometric_embedding_backward(b, qb, gqb);
    }
    return loss;
  });
  const LossWithGrad total = on_probs_pair([](const TensorD& a, const TensorD& b, TensorD* ga, TensorD* gb) {
    return gss::total_loss(a, b, gss::GssWeights{}, ga, gb).total;
  });
  const LossWithGrad l_c = [&labels](const ParamSetD& p, ParamSetD* grads) {
    const TensorD probs = softmax_rows(p.get("logits1"));
    TensorD g;
    const double loss = fsc::cross_entropy_loss(probs, labels, grads ? &g : nullptr);
    store(grads, "logits1", grads ? softmax_rows_backward(probs, g) : TensorD{});
    return loss;
  };
  const LossWithGrad l_f = [&labels, classes](const ParamSetD& p, ParamSetD* grads) {
    TensorD g;
    const double loss = fsc::proto_loss_self(p.get("embeddings"), labels, classes, grads ? &g : nullptr);
    store(grads, "embeddings", g);
    return loss;
  };

  return {
      {"L_p", grad_check(l_p, logits, opts)},
      {"L_m", grad_check(mutual_info(gss::MiSign::corrected), single, opts)},
      {"L_m_literal", grad_check(mutual_info(gss::MiSign::literal), single, opts)},
      {"L_g", grad_check(l_g, logits, opts)},
      {"L_c", grad_check(l_c, single, opts)},
      {"L_f", grad_check(l_f, embeddings, opts)},
      {"gss_total", grad_check(total, logits, opts)},
  };
}

}  // namespace autofi::gradsuite
