#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace kgadapt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major tensor. Extents are positive; a rank-0 shape is a scalar.
template <typename T>
class BasicTensor {
 public:
  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T(0));
  BasicTensor(Shape shape, std::vector<T> data);

  static BasicTensor scalar(T value) { return BasicTensor(Shape{}, std::vector<T>{value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  bool empty() const { return data_.empty(); }

  // Matrix view of the tensor: rank-1 tensors are a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  T* raw() { return data_.data(); }
  const T* raw() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }
  T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  T at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  T item() const;

  bool all_finite() const;
  void fill(T value);
  BasicTensor reshaped(Shape shape) const;

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

template <typename T>
struct ParamEntry {
  BasicTensor<T> value;
  bool trainable = true;
};

/// Named parameter tensors. Iteration order is lexicographic by name.
template <typename T>
class BasicParamSet {
 public:
  using Map = std::map<std::string, ParamEntry<T>>;

  void add(const std::string& name, BasicTensor<T> value, bool trainable = true);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const BasicTensor<T>& get(const std::string& name) const;
  BasicTensor<T>& mutable_value(const std::string& name);
  bool trainable(const std::string& name) const;
  void set_trainable(const std::string& name, bool trainable);
  void set_all_trainable(bool trainable);
  /// Sets the flag on every entry whose name starts with `prefix`; returns how many matched.
  std::size_t set_trainable_prefix(const std::string& prefix, bool trainable);
  void erase_prefix(const std::string& prefix);

  std::vector<std::string> names() const;
  std::vector<std::string> trainable_names() const;
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  std::size_t scalar_count_prefix(const std::string& prefix) const;

  typename Map::const_iterator begin() const { return entries_.begin(); }
  typename Map::const_iterator end() const { return entries_.end(); }

  template <typename U>
  BasicParamSet<U> cast() const {
    BasicParamSet<U> out;
    for (const auto& [name, e] : entries_) out.add(name, e.value.template cast<U>(), e.trainable);
    return out;
  }

  friend bool operator==(const BasicParamSet& a, const BasicParamSet& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    auto it = b.entries_.begin();
    for (const auto& [name, e] : a.entries_) {
      if (name != it->first || !(e.value == it->second.value)) return false;
      ++it;
    }
    return true;
  }

 private:
  Map entries_;
};

using ParamSet = BasicParamSet<float>;

}  // namespace kgadapt
