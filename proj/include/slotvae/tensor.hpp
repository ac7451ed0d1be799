// Dense row-major tensor with shared storage. Reshape is metadata-only;
// copies are shallow, use clone() for a deep copy.
#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "slotvae/denormals.hpp"

namespace slotvae {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(shape_numel(shape_), T(0))) {}
  Tensor(Shape shape, std::vector<T> values)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(std::move(values))) {
    if ((int64_t)data_->size() != shape_numel(shape_))
      throw std::invalid_argument("Tensor: value count does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
  }
  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  int64_t dim(int i) const { return shape_.at(i < 0 ? shape_.size() + i : i); }
  int ndim() const { return (int)shape_.size(); }
  int64_t numel() const { return data_ ? (int64_t)data_->size() : 0; }
  bool defined() const { return (bool)data_; }

  T* data() { return data_->data(); }
  const T* data() const { return data_->data(); }
  T& operator[](int64_t i) { return (*data_)[i]; }
  const T& operator[](int64_t i) const { return (*data_)[i]; }

  void fill(T v) { std::fill(data_->begin(), data_->end(), v); }

  Tensor reshape(Shape s) const {
    int64_t n = 1;
    int infer = -1;
    for (size_t i = 0; i < s.size(); ++i) {
      if (s[i] == -1) {
        if (infer >= 0) throw std::invalid_argument("reshape: more than one -1");
        infer = (int)i;
      } else {
        n *= s[i];
      }
    }
    if (infer >= 0) s[infer] = numel() / n;
    if (shape_numel(s) != numel())
      throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " + shape_str(s));
    Tensor t;
    t.shape_ = std::move(s);
    t.data_ = data_;
    return t;
  }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<T>>(*data_);
    return t;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> t{shape_};
    for (int64_t i = 0; i < numel(); ++i) t[i] = static_cast<U>((*data_)[i]);
    return t;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
};

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (int64_t i = 0; i < t.numel(); ++i)
    if (!std::isfinite((double)t[i])) return false;
  return true;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
  T m = 0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, (T)std::abs(a[i] - b[i]));
  return m;
}

}  // namespace slotvae
