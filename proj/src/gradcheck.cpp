#include "autofi/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

namespace autofi {

namespace {

double checked(double v, const char* what) {
  if (!std::isfinite(v)) throw std::runtime_error(std::string("grad_check: non-finite loss at ") + what);
  return v;
}

}  // namespace

GradCheckReport grad_check(const LossWithGrad& loss, const ParamSetD& params, const GradCheckOptions& options) {
  if (!(options.eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");

  ParamSetD analytic = params.zeros_like();
  checked(loss(params, &analytic), "base point");

  GradCheckReport report;
  std::mt19937_64 rng(options.seed);
  ParamSetD probe = params;
  for (std::size_t t = 0; t < params.entries().size(); ++t) {
    const auto& entry = params.entries()[t];
    if (!entry.trainable) continue;
    const std::size_t n = entry.tensor.size();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (n > options.max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    std::span<double> values = probe.values_at(t);
    const std::span<const double> grad = analytic.entries()[t].tensor.values();
    for (std::size_t idx : coords) {
      const double original = values[idx];
      values[idx] = original + options.eps;
      const double up = checked(loss(probe, nullptr), "+eps");
      values[idx] = original - options.eps;
      const double down = checked(loss(probe, nullptr), "-eps");
      values[idx] = original;

      const double numeric = (up - down) / (2.0 * options.eps);
      const double a = grad[idx];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      ++report.coords_checked;
      if (err >= report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_param = entry.name;
        report.worst_index = idx;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace autofi
