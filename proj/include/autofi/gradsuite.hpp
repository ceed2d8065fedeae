#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "autofi/gradcheck.hpp"

// The registered loss gradients, checked against central differences on
// random float64 batches.

namespace autofi::gradsuite {

inline constexpr double kTolerance = 1e-4;

struct LossCheck {
  std::string name;
  GradCheckReport report;

  bool passed() const { return report.max_rel_error <= kTolerance; }
};

/// Names in the order run() reports them.
std::vector<std::string> registered_losses();

/// One check per registered loss on a batch of `batch` rows of width `dim`.
std::vector<LossCheck> run(std::uint64_t seed, std::size_t batch = 4, std::size_t dim = 8);

}  // namespace autofi::gradsuite
