#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace autofi {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& dims);
std::size_t shape_numel(const Shape& dims);

/// Dense row-major tensor with value semantics.
///
/// The element type is a template parameter so that the same layer code runs
/// in float32 (training, inference) and float64 (gradient verification).
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape dims, T fill = T{0}) : dims_(std::move(dims)) {
    for (std::size_t d : dims_) {
      if (d == 0) throw std::invalid_argument("tensor dims must be positive: " + shape_to_string(dims_));
    }
    data_.assign(shape_numel(dims_), fill);
  }

  BasicTensor(Shape dims, std::vector<T> values) : dims_(std::move(dims)), data_(std::move(values)) {
    if (shape_numel(dims_) != data_.size()) {
      throw std::invalid_argument("tensor of shape " + shape_to_string(dims_) + " cannot hold " +
                                  std::to_string(data_.size()) + " values");
    }
  }

  const Shape& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::size_t i, std::size_t j) { return data_[i * dims_[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const { return data_[i * dims_[1] + j]; }
  T& at(std::size_t i, std::size_t j, std::size_t k) { return data_[(i * dims_[1] + j) * dims_[2] + k]; }
  const T& at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * dims_[1] + j) * dims_[2] + k];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Same data viewed under new dims; element count must match.
  BasicTensor reshaped(Shape dims) const& { return BasicTensor(std::move(dims), data_); }
  BasicTensor reshaped(Shape dims) && { return BasicTensor(std::move(dims), std::move(data_)); }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(dims_, std::move(out));
  }

  bool operator==(const BasicTensor& other) const = default;

 private:
  Shape dims_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

template <typename T>
bool all_finite(const BasicTensor<T>& t);

/// Ordered name -> tensor map. Names are unique and shapes are fixed once an
/// entry exists; only element values may change afterwards.
template <typename T>
class BasicParamSet {
 public:
  struct Entry {
    std::string name;
    BasicTensor<T> tensor;
    bool trainable = true;
  };

  void add(std::string name, BasicTensor<T> tensor, bool trainable = true);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t size() const noexcept { return entries_.size(); }

  const BasicTensor<T>& get(const std::string& name) const { return entries_[index_of(name)].tensor; }
  std::span<T> values(const std::string& name) { return entries_[index_of(name)].tensor.values(); }
  bool trainable(const std::string& name) const { return entries_[index_of(name)].trainable; }

  /// Replace the values of an entry; the shape must match exactly.
  void assign(const std::string& name, const BasicTensor<T>& tensor);

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::span<T> values_at(std::size_t i) { return entries_[i].tensor.values(); }

  /// Zero-filled set with the same names, shapes, and flags.
  BasicParamSet zeros_like() const;

  /// Entries whose name begins with `prefix`, with the prefix removed.
  BasicParamSet extract(const std::string& prefix) const;
  /// Append every entry of `other` under `prefix`.
  void merge(const BasicParamSet& other, const std::string& prefix);

  template <typename U>
  BasicParamSet<U> cast() const {
    BasicParamSet<U> out;
    for (const auto& e : entries_) out.add(e.name, e.tensor.template cast<U>(), e.trainable);
    return out;
  }

  bool operator==(const BasicParamSet& other) const;

 private:
  std::size_t index_of(const std::string& name) const;

  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

using ParamSet = BasicParamSet<float>;
using ParamSetD = BasicParamSet<double>;

}  // namespace autofi
