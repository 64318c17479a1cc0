#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "earfa/errors.hpp"

namespace earfa {

struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) *
           static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

// Dense NCHW array. Copies share storage; writes through mutable accessors
// detach first, so a Tensor behaves as a value.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : Tensor(Shape{0, 0, 0, 0}) {}
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(validated(shape)), data_(std::make_shared<std::vector<T>>(shape_.numel(), fill)) {}
  Tensor(Shape shape, std::vector<T> values) : shape_(validated(shape)) {
    if (values.size() != shape_.numel()) {
      throw DimensionError("tensor data length " + std::to_string(values.size()) +
                           " does not match shape " + shape_.str());
    }
    data_ = std::make_shared<std::vector<T>>(std::move(values));
  }

  static Tensor zeros(Shape s) { return Tensor(s); }
  static Tensor ones(Shape s) { return Tensor(s, T(1)); }
  static Tensor full(Shape s, T v) { return Tensor(s, v); }
  static Tensor scalar(T v) { return Tensor(Shape{1, 1, 1, 1}, v); }

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t numel() const { return shape_.numel(); }

  std::span<const T> data() const { return {data_->data(), data_->size()}; }
  std::span<T> mutable_data() {
    detach();
    return {data_->data(), data_->size()};
  }
  const T* ptr() const { return data_->data(); }
  T* mutable_ptr() {
    detach();
    return data_->data();
  }

  std::size_t offset(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  T at(int n, int c, int y, int x) const { return (*data_)[offset(n, c, y, x)]; }
  T& at(int n, int c, int y, int x) { return mutable_ptr()[offset(n, c, y, x)]; }

  // Plane (n, c) as a contiguous h*w span.
  std::span<const T> plane(int n, int c) const {
    return {data_->data() + offset(n, c, 0, 0), shape_.plane()};
  }

  T item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_.str());
    return (*data_)[0];
  }

  Tensor reshaped(Shape s) const {
    if (s.numel() != numel()) {
      throw DimensionError("cannot reshape " + shape_.str() + " to " + s.str());
    }
    Tensor out = *this;
    out.shape_ = s;
    return out;
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> v(data_->begin(), data_->end());
    return Tensor<U>(shape_, std::move(v));
  }

  Tensor clone() const {
    Tensor out = *this;
    out.data_ = std::make_shared<std::vector<T>>(*data_);
    return out;
  }

  bool shares_storage(const Tensor& other) const { return data_ == other.data_; }

  bool all_finite() const;

 private:
  static Shape validated(Shape s) {
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) {
      throw DimensionError("negative extent in shape " + s.str());
    }
    return s;
  }
  void detach() {
    if (data_.use_count() > 1) data_ = std::make_shared<std::vector<T>>(*data_);
  }

  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// Debug-build finiteness check used by operators on their outputs.
template <class T>
inline void debug_check_finite([[maybe_unused]] const Tensor<T>& t, [[maybe_unused]] const char* op) {
#ifndef NDEBUG
  if (!t.all_finite()) throw NumericError(std::string(op) + " produced a non-finite value");
#endif
}

}  // namespace earfa
