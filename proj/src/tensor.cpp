#include "kgadapt/tensor.hpp"

#include <cmath>
#include <sstream>

#include "kgadapt/errors.hpp"

namespace kgadapt {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(std::move(shape)) {
  for (auto e : shape_)
    if (e == 0) throw ShapeError("tensor: zero extent in shape " + shape_str(shape_));
  data_.assign(shape_numel(shape_), fill);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto e : shape_)
    if (e == 0) throw ShapeError("tensor: zero extent in shape " + shape_str(shape_));
  if (shape_numel(shape_) != data_.size())
    throw ShapeError("tensor: shape " + shape_str(shape_) + " does not match " +
                     std::to_string(data_.size()) + " values");
}

template <typename T>
std::size_t BasicTensor<T>::rows() const {
  if (shape_.size() <= 1) return 1;
  return data_.size() / shape_.back();
}

template <typename T>
std::size_t BasicTensor<T>::cols() const {
  return shape_.empty() ? 1 : shape_.back();
}

template <typename T>
T BasicTensor<T>::item() const {
  if (data_.size() != 1) throw ShapeError("item: tensor " + shape_str(shape_) + " is not a scalar");
  return data_[0];
}

template <typename T>
bool BasicTensor<T>::all_finite() const {
  for (auto v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

template <typename T>
void BasicTensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
  return BasicTensor(std::move(shape), data_);
}

template <typename T>
void BasicParamSet<T>::add(const std::string& name, BasicTensor<T> value, bool trainable) {
  if (!entries_.emplace(name, ParamEntry<T>{std::move(value), trainable}).second)
    throw ConfigError("parameter '" + name + "' already exists");
}

template <typename T>
const BasicTensor<T>& BasicParamSet<T>::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second.value;
}

template <typename T>
BasicTensor<T>& BasicParamSet<T>::mutable_value(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second.value;
}

template <typename T>
bool BasicParamSet<T>::trainable(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second.trainable;
}

template <typename T>
void BasicParamSet<T>::set_trainable(const std::string& name, bool trainable) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
  it->second.trainable = trainable;
}

template <typename T>
void BasicParamSet<T>::set_all_trainable(bool trainable) {
  for (auto& [_, e] : entries_) e.trainable = trainable;
}

template <typename T>
std::size_t BasicParamSet<T>::set_trainable_prefix(const std::string& prefix, bool trainable) {
  std::size_t n = 0;
  for (auto& [name, e] : entries_) {
    if (name.starts_with(prefix)) {
      e.trainable = trainable;
      ++n;
    }
  }
  return n;
}

template <typename T>
void BasicParamSet<T>::erase_prefix(const std::string& prefix) {
  std::erase_if(entries_, [&](const auto& kv) { return kv.first.starts_with(prefix); });
}

template <typename T>
std::vector<std::string> BasicParamSet<T>::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

template <typename T>
std::vector<std::string> BasicParamSet<T>::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& [name, e] : entries_)
    if (e.trainable) out.push_back(name);
  return out;
}

template <typename T>
std::size_t BasicParamSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, e] : entries_) n += e.value.numel();
  return n;
}

template <typename T>
std::size_t BasicParamSet<T>::scalar_count_prefix(const std::string& prefix) const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries_)
    if (name.starts_with(prefix)) n += e.value.numel();
  return n;
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template class BasicParamSet<float>;
template class BasicParamSet<double>;

}  // namespace kgadapt
