#include "autofi/tensor.hpp"

#include <cmath>

namespace autofi {

std::string shape_to_string(const Shape& dims) {
  std::string out = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(dims[i]);
  }
  return out + "]";
}

std::size_t shape_numel(const Shape& dims) {
  if (dims.empty()) return 0;
  std::size_t n = 1;
  for (std::size_t d : dims) n *= d;
  return n;
}

template <typename T>
bool all_finite(const BasicTensor<T>& t) {
  for (T v : t.values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
void BasicParamSet<T>::add(std::string name, BasicTensor<T> tensor, bool trainable) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back(Entry{std::move(name), std::move(tensor), trainable});
}

template <typename T>
std::size_t BasicParamSet<T>::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return it->second;
}

template <typename T>
void BasicParamSet<T>::assign(const std::string& name, const BasicTensor<T>& tensor) {
  auto& entry = entries_[index_of(name)];
  if (entry.tensor.dims() != tensor.dims()) {
    throw std::invalid_argument("parameter '" + name + "' has shape " + shape_to_string(entry.tensor.dims()) +
                                ", cannot assign " + shape_to_string(tensor.dims()));
  }
  entry.tensor = tensor;
}

template <typename T>
BasicParamSet<T> BasicParamSet<T>::zeros_like() const {
  BasicParamSet out;
  for (const auto& e : entries_) out.add(e.name, BasicTensor<T>(e.tensor.dims()), e.trainable);
  return out;
}

template <typename T>
BasicParamSet<T> BasicParamSet<T>::extract(const std::string& prefix) const {
  BasicParamSet out;
  for (const auto& e : entries_) {
    if (e.name.rfind(prefix, 0) == 0) out.add(e.name.substr(prefix.size()), e.tensor, e.trainable);
  }
  return out;
}

template <typename T>
void BasicParamSet<T>::merge(const BasicParamSet& other, const std::string& prefix) {
  for (const auto& e : other.entries_) add(prefix + e.name, e.tensor, e.trainable);
}

template <typename T>
bool BasicParamSet<T>::operator==(const BasicParamSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.trainable != b.trainable || !(a.tensor == b.tensor)) return false;
  }
  return true;
}

template bool all_finite(const BasicTensor<float>&);
template bool all_finite(const BasicTensor<double>&);
template class BasicParamSet<float>;
template class BasicParamSet<double>;

}  // namespace autofi
