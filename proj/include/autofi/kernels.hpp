#pragma once

#include <cstddef>
#include <type_traits>

// Inner-loop kernels behind every dense and convolutional layer.
//
// Each kernel has a portable scalar reference and, on x86-64, an AVX2+FMA
// variant compiled in its own translation unit. The variant is picked once
// per process from the CPU's feature bits; AUTOFI_ISA=scalar forces the
// reference path. float64 always runs the reference templates.

namespace autofi::kernels {

enum class Isa { scalar, avx2 };

const char* isa_name(Isa isa);

struct KernelTable {
  Isa isa;
  float (*dot)(const float* a, const float* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(float alpha, const float* x, float* y, std::size_t n);
  // C[m x n] += A[m x k] * B[k x n], all row-major and contiguous
  void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c);
};

const KernelTable& scalar_table();
/// nullptr when the build or the CPU lacks AVX2/FMA.
const KernelTable* avx2_table();
/// Table used by the layer code. Fixed for the lifetime of the process.
const KernelTable& active();

namespace ref {

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T acc{0};
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T{0}) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace ref

template <typename T>
inline T dot(const T* a, const T* b, std::size_t n) {
  if constexpr (std::is_same_v<T, float>) {
    return active().dot(a, b, n);
  } else {
    return ref::dot(a, b, n);
  }
}

template <typename T>
inline void axpy(T alpha, const T* x, T* y, std::size_t n) {
  if constexpr (std::is_same_v<T, float>) {
    active().axpy(alpha, x, y, n);
  } else {
    ref::axpy(alpha, x, y, n);
  }
}

template <typename T>
inline void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  if constexpr (std::is_same_v<T, float>) {
    active().gemm(m, n, k, a, b, c);
  } else {
    ref::gemm(m, n, k, a, b, c);
  }
}

/// out[cols x rows] = in[rows x cols]^T
template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* in, T* out) {
  constexpr std::size_t tile = 16;
  for (std::size_t i0 = 0; i0 < rows; i0 += tile) {
    for (std::size_t j0 = 0; j0 < cols; j0 += tile) {
      const std::size_t i1 = i0 + tile < rows ? i0 + tile : rows;
      const std::size_t j1 = j0 + tile < cols ? j0 + tile : cols;
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) out[j * rows + i] = in[i * cols + j];
    }
  }
}

}  // namespace autofi::kernels
