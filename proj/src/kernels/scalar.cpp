#include "autofi/kernels.hpp"

namespace autofi::kernels {
namespace {

float dot_scalar(const float* a, const float* b, std::size_t n) { return ref::dot(a, b, n); }
void axpy_scalar(float alpha, const float* x, float* y, std::size_t n) { ref::axpy(alpha, x, y, n); }
void gemm_scalar(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
  ref::gemm(m, n, k, a, b, c);
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{Isa::scalar, &dot_scalar, &axpy_scalar, &gemm_scalar};
  return table;
}

}  // namespace autofi::kernels
