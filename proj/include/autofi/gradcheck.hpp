#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "autofi/tensor.hpp"

namespace autofi {

/// Loss evaluated in float64. When `grads` is non-null it has the same layout
/// as the parameters and must be filled with the analytic gradient.
using LossWithGrad = std::function<double(const ParamSetD& params, ParamSetD* grads)>;

struct GradCheckOptions {
  double eps = 1e-4;
  std::size_t max_coords_per_tensor = 200;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coords_checked = 0;
};

/// Compares the analytic gradient against central differences on a seeded
/// sample of coordinates of every trainable tensor. The per-coordinate error
/// is |a - n| / max(1, |a|, |n|).
GradCheckReport grad_check(const LossWithGrad& loss, const ParamSetD& params, const GradCheckOptions& options = {});

}  // namespace autofi
