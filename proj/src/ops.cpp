#include "autofi/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "autofi/kernels.hpp"

namespace autofi {

std::size_t valid_extent(std::size_t in, std::size_t window, std::size_t stride, const char* axis) {
  if (stride == 0) throw std::invalid_argument(std::string("stride along ") + axis + " must be positive");
  if (window == 0 || window > in) {
    throw std::invalid_argument(std::string("window ") + std::to_string(window) + " does not fit input " + axis +
                                " of " + std::to_string(in));
  }
  return (in - window) / stride + 1;
}

namespace {

struct ConvGeometry {
  std::size_t channels, height, width;
  std::size_t filters, kh, kw;
  std::size_t out_h, out_w;
  std::size_t patch() const { return channels * kh * kw; }
  std::size_t cells() const { return out_h * out_w; }
};

template <typename T>
ConvGeometry conv_geometry(const BasicTensor<T>& input, const BasicTensor<T>& kernels, Extent2 stride) {
  if (input.rank() != 3) throw std::invalid_argument("conv2d input must be [C,H,W], got " + shape_to_string(input.dims()));
  if (kernels.rank() != 4) {
    throw std::invalid_argument("conv2d kernels must be [F,C,kh,kw], got " + shape_to_string(kernels.dims()));
  }
  if (kernels.dim(1) != input.dim(0)) {
    throw std::invalid_argument("conv2d channel mismatch: input C=" + std::to_string(input.dim(0)) +
                                " but kernels C=" + std::to_string(kernels.dim(1)));
  }
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), kernels.dim(0), kernels.dim(2), kernels.dim(3), 0, 0};
  g.out_h = valid_extent(g.height, g.kh, stride.h, "H");
  g.out_w = valid_extent(g.width, g.kw, stride.w, "W");
  return g;
}

// Patch matrix in [cells, patch] layout: one receptive field per row.
template <typename T>
std::vector<T> im2row(const BasicTensor<T>& input, const ConvGeometry& g, Extent2 stride) {
  std::vector<T> rows(g.cells() * g.patch());
  const T* in = input.data();
  T* dst = rows.data();
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const T* src = in + (c * g.height + oy * stride.h + ky) * g.width + ox * stride.w;
          for (std::size_t kx = 0; kx < g.kw; ++kx) *dst++ = src[kx];
        }
      }
    }
  }
  return rows;
}

template <typename T>
void row2im_add(const std::vector<T>& rows, const ConvGeometry& g, Extent2 stride, BasicTensor<T>& grad_in) {
  T* out = grad_in.data();
  const T* src = rows.data();
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          T* dst = out + (c * g.height + oy * stride.h + ky) * g.width + ox * stride.w;
          for (std::size_t kx = 0; kx < g.kw; ++kx) dst[kx] += *src++;
        }
      }
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernels, const BasicTensor<T>& bias,
                      Extent2 stride) {
  const ConvGeometry g = conv_geometry(input, kernels, stride);
  if (bias.rank() != 1 || bias.dim(0) != g.filters) {
    throw std::invalid_argument("conv2d bias must be [" + std::to_string(g.filters) + "], got " +
                                shape_to_string(bias.dims()));
  }
  const std::vector<T> rows = im2row(input, g, stride);
  std::vector<T> kernels_t(kernels.size());
  kernels::transpose(g.filters, g.patch(), kernels.data(), kernels_t.data());
  std::vector<T> out_t(g.cells() * g.filters);
  for (std::size_t n = 0; n < g.cells(); ++n) std::copy_n(bias.data(), g.filters, out_t.data() + n * g.filters);
  kernels::gemm<T>(g.cells(), g.filters, g.patch(), rows.data(), kernels_t.data(), out_t.data());
  BasicTensor<T> out({g.filters, g.out_h, g.out_w});
  kernels::transpose(g.cells(), g.filters, out_t.data(), out.data());
  return out;
}

template <typename T>
BasicTensor<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& kernels, Extent2 stride,
                               const BasicTensor<T>& grad_out, std::span<T> grad_kernels, std::span<T> grad_bias,
                               bool want_input) {
  const ConvGeometry g = conv_geometry(input, kernels, stride);
  if (grad_out.dims() != Shape{g.filters, g.out_h, g.out_w}) {
    throw std::invalid_argument("conv2d_backward grad_out has shape " + shape_to_string(grad_out.dims()));
  }
  if (!grad_bias.empty()) {
    if (grad_bias.size() != g.filters) throw std::invalid_argument("conv2d_backward: grad_bias size mismatch");
    for (std::size_t f = 0; f < g.filters; ++f) {
      const T* row = grad_out.data() + f * g.cells();
      T acc{0};
      for (std::size_t n = 0; n < g.cells(); ++n) acc += row[n];
      grad_bias[f] += acc;
    }
  }
  if (grad_kernels.empty() && !want_input) return {};

  const std::vector<T> rows = im2row(input, g, stride);
  if (!grad_kernels.empty()) {
    if (grad_kernels.size() != kernels.size()) throw std::invalid_argument("conv2d_backward: grad_kernels size mismatch");
    kernels::gemm<T>(g.filters, g.patch(), g.cells(), grad_out.data(), rows.data(), grad_kernels.data());
  }
  if (!want_input) return {};

  std::vector<T> grad_out_t(grad_out.size());
  kernels::transpose(g.filters, g.cells(), grad_out.data(), grad_out_t.data());
  std::vector<T> drows(rows.size(), T{0});
  kernels::gemm<T>(g.cells(), g.patch(), g.filters, grad_out_t.data(), kernels.data(), drows.data());
  BasicTensor<T> grad_in(input.dims());
  row2im_add(drows, g, stride, grad_in);
  return grad_in;
}

template <typename T>
PoolResult<T> maxpool2d(const BasicTensor<T>& input, Extent2 window, Extent2 stride) {
  if (input.rank() != 3) {
    throw std::invalid_argument("maxpool2d input must be [C,H,W], got " + shape_to_string(input.dims()));
  }
  const std::size_t channels = input.dim(0), height = input.dim(1), width = input.dim(2);
  const std::size_t oh = valid_extent(height, window.h, stride.h, "H");
  const std::size_t ow = valid_extent(width, window.w, stride.w, "W");
  PoolResult<T> r{BasicTensor<T>({channels, oh, ow}), std::vector<std::size_t>(channels * oh * ow)};
  std::size_t o = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
        std::size_t best = (c * height + oy * stride.h) * width + ox * stride.w;
        for (std::size_t ky = 0; ky < window.h; ++ky) {
          for (std::size_t kx = 0; kx < window.w; ++kx) {
            const std::size_t idx = (c * height + oy * stride.h + ky) * width + ox * stride.w + kx;
            if (input[idx] > input[best]) best = idx;
          }
        }
        r.output[o] = input[best];
        r.argmax[o] = best;
      }
    }
  }
  return r;
}

template <typename T>
BasicTensor<T> maxpool2d_backward(const Shape& input_dims, const std::vector<std::size_t>& argmax,
                                  const BasicTensor<T>& grad_out) {
  if (argmax.size() != grad_out.size()) throw std::invalid_argument("maxpool2d_backward: argmax/grad size mismatch");
  BasicTensor<T> grad_in(input_dims);
  for (std::size_t o = 0; o < argmax.size(); ++o) grad_in[argmax[o]] += grad_out[o];
  return grad_in;
}

template <typename T>
void relu_inplace(BasicTensor<T>& x) {
  for (T& v : x.values()) v = v > T{0} ? v : T{0};
}

template <typename T>
void relu_backward_inplace(const BasicTensor<T>& output, BasicTensor<T>& grad) {
  if (output.size() != grad.size()) throw std::invalid_argument("relu_backward: size mismatch");
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(output[i] > T{0})) grad[i] = T{0};
  }
}

namespace {

template <typename T>
void check_dense(const BasicTensor<T>& weight, const BasicTensor<T>& bias, std::size_t in_features) {
  if (weight.rank() != 2) throw std::invalid_argument("dense weight must be [m,n], got " + shape_to_string(weight.dims()));
  if (weight.dim(1) != in_features) {
    throw std::invalid_argument("dense input length " + std::to_string(in_features) + " does not match weight n=" +
                                std::to_string(weight.dim(1)));
  }
  if (bias.rank() != 1 || bias.dim(0) != weight.dim(0)) {
    throw std::invalid_argument("dense bias must be [" + std::to_string(weight.dim(0)) + "], got " +
                                shape_to_string(bias.dims()));
  }
}

}  // namespace

template <typename T>
BasicTensor<T> dense(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
  if (input.rank() != 1) throw std::invalid_argument("dense input must be a vector, got " + shape_to_string(input.dims()));
  check_dense(weight, bias, input.dim(0));
  const std::size_t m = weight.dim(0), n = weight.dim(1);
  BasicTensor<T> out({m});
  for (std::size_t i = 0; i < m; ++i) out[i] = bias[i] + kernels::dot<T>(weight.data() + i * n, input.data(), n);
  return out;
}

template <typename T>
BasicTensor<T> dense_rows(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
  if (input.rank() != 2) throw std::invalid_argument("dense_rows input must be [B,n], got " + shape_to_string(input.dims()));
  check_dense(weight, bias, input.dim(1));
  const std::size_t rows = input.dim(0), m = weight.dim(0), n = weight.dim(1);
  BasicTensor<T> out({rows, m});
  for (std::size_t b = 0; b < rows; ++b) std::copy_n(bias.data(), m, out.data() + b * m);
  std::vector<T> w_t(weight.size());
  kernels::transpose(m, n, weight.data(), w_t.data());
  kernels::gemm<T>(rows, m, n, input.data(), w_t.data(), out.data());
  return out;
}

template <typename T>
BasicTensor<T> dense_rows_backward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                                   const BasicTensor<T>& grad_out, std::span<T> grad_weight,
                                   std::span<T> grad_bias) {
  const std::size_t rows = input.dim(0), m = weight.dim(0), n = weight.dim(1);
  if (grad_out.dims() != Shape{rows, m}) {
    throw std::invalid_argument("dense_rows_backward grad_out has shape " + shape_to_string(grad_out.dims()));
  }
  if (!grad_bias.empty()) {
    if (grad_bias.size() != m) throw std::invalid_argument("dense_rows_backward: grad_bias size mismatch");
    for (std::size_t b = 0; b < rows; ++b) {
      for (std::size_t i = 0; i < m; ++i) grad_bias[i] += grad_out[b * m + i];
    }
  }
  if (!grad_weight.empty()) {
    if (grad_weight.size() != weight.size()) throw std::invalid_argument("dense_rows_backward: grad_weight size mismatch");
    std::vector<T> g_t(grad_out.size());
    kernels::transpose(rows, m, grad_out.data(), g_t.data());
    kernels::gemm<T>(m, n, rows, g_t.data(), input.data(), grad_weight.data());
  }
  BasicTensor<T> grad_in({rows, n});
  kernels::gemm<T>(rows, n, m, grad_out.data(), weight.data(), grad_in.data());
  return grad_in;
}

template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& logits) {
  if (logits.rank() != 2) throw std::invalid_argument("softmax_rows expects [B,D], got " + shape_to_string(logits.dims()));
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  BasicTensor<T> out(logits.dims());
  for (std::size_t b = 0; b < rows; ++b) {
    const T* in = logits.data() + b * cols;
    T* o = out.data() + b * cols;
    const T mx = *std::max_element(in, in + cols);
    double sum = 0.0;
    for (std::size_t d = 0; d < cols; ++d) {
      o[d] = std::exp(in[d] - mx);
      sum += o[d];
    }
    for (std::size_t d = 0; d < cols; ++d) o[d] = static_cast<T>(o[d] / sum);
  }
  return out;
}

template <typename T>
BasicTensor<T> softmax_rows_backward(const BasicTensor<T>& probs, const BasicTensor<T>& grad_probs) {
  if (probs.dims() != grad_probs.dims()) throw std::invalid_argument("softmax_rows_backward: shape mismatch");
  const std::size_t rows = probs.dim(0), cols = probs.dim(1);
  BasicTensor<T> out(probs.dims());
  for (std::size_t b = 0; b < rows; ++b) {
    const T* p = probs.data() + b * cols;
    const T* g = grad_probs.data() + b * cols;
    double inner = 0.0;
    for (std::size_t d = 0; d < cols; ++d) inner += static_cast<double>(p[d]) * g[d];
    for (std::size_t d = 0; d < cols; ++d) out[b * cols + d] = static_cast<T>(p[d] * (g[d] - inner));
  }
  return out;
}

#define AUTOFI_INSTANTIATE_OPS(T)                                                                                   \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, Extent2);    \
  template BasicTensor<T> conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&, Extent2,                   \
                                          const BasicTensor<T>&, std::span<T>, std::span<T>, bool);          \
  template PoolResult<T> maxpool2d(const BasicTensor<T>&, Extent2, Extent2);                                       \
  template BasicTensor<T> maxpool2d_backward(const Shape&, const std::vector<std::size_t>&, const BasicTensor<T>&); \
  template void relu_inplace(BasicTensor<T>&);                                                                     \
  template void relu_backward_inplace(const BasicTensor<T>&, BasicTensor<T>&);                                     \
  template BasicTensor<T> dense(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);              \
  template BasicTensor<T> dense_rows(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);         \
  template BasicTensor<T> dense_rows_backward(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, \
                                              std::span<T>, std::span<T>);                                         \
  template BasicTensor<T> softmax_rows(const BasicTensor<T>&);                                                     \
  template BasicTensor<T> softmax_rows_backward(const BasicTensor<T>&, const BasicTensor<T>&);

AUTOFI_INSTANTIATE_OPS(float)
AUTOFI_INSTANTIATE_OPS(double)

#undef AUTOFI_INSTANTIATE_OPS

}  // namespace autofi
