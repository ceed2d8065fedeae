#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "autofi/tensor.hpp"

namespace autofi {

struct Extent2 {
  std::size_t h = 1;
  std::size_t w = 1;
  bool operator==(const Extent2&) const = default;
};

/// floor((in - window) / stride) + 1; throws when window > in.
std::size_t valid_extent(std::size_t in, std::size_t window, std::size_t stride, const char* axis);

// Valid (unpadded) cross-correlation: input [C,H,W], kernels [F,C,kh,kw],
// bias [F] -> [F,H',W'].
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernels, const BasicTensor<T>& bias,
                      Extent2 stride);

/// Accumulates into grad_kernels / grad_bias (either may be empty) and returns
/// the gradient w.r.t. the input, or an empty tensor when want_input is false.
template <typename T>
BasicTensor<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& kernels, Extent2 stride,
                               const BasicTensor<T>& grad_out, std::span<T> grad_kernels, std::span<T> grad_bias,
                               bool want_input = true);

template <typename T>
struct PoolResult {
  BasicTensor<T> output;
  std::vector<std::size_t> argmax;  // flat input index per output cell
};

template <typename T>
PoolResult<T> maxpool2d(const BasicTensor<T>& input, Extent2 window, Extent2 stride);

template <typename T>
BasicTensor<T> maxpool2d_backward(const Shape& input_dims, const std::vector<std::size_t>& argmax,
                                  const BasicTensor<T>& grad_out);

template <typename T>
void relu_inplace(BasicTensor<T>& x);
/// Masks grad by output > 0.
template <typename T>
void relu_backward_inplace(const BasicTensor<T>& output, BasicTensor<T>& grad);

// output[m] = weight[m,n] * input[n] + bias[m]
template <typename T>
BasicTensor<T> dense(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias);

/// Row-wise dense layer: input [B,n] -> [B,m].
template <typename T>
BasicTensor<T> dense_rows(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias);

/// Accumulates parameter gradients, returns grad w.r.t. input [B,n].
template <typename T>
BasicTensor<T> dense_rows_backward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                                   const BasicTensor<T>& grad_out, std::span<T> grad_weight,
                                   std::span<T> grad_bias);

/// Max-shifted softmax over the last axis of a [B,D] tensor.
template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& logits);

/// grad_logits = p * (g - <g, p>) row by row.
template <typename T>
BasicTensor<T> softmax_rows_backward(const BasicTensor<T>& probs, const BasicTensor<T>& grad_probs);

}  // namespace autofi
