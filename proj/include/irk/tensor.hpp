#pragma once

#include <algorithm>
#include <utility>

#include "irk/common.hpp"
#include "irk/rng.hpp"

namespace irk {

// Shaped numeric array. Shape is fixed at construction; `values` and the
// optional `grad` buffer are freely mutable. T is float in training and
// double in check mode.
template <typename T>
class Tensor {
 public:
  std::vector<T> values;
  std::vector<T> grad;  // empty, or numel() entries

  Tensor() = default;

  explicit Tensor(Shape shape) : values(size_t(irk::numel(shape)), T(0)), shape_(std::move(shape)) {}

  Tensor(Shape shape, std::vector<T> vals) : values(std::move(vals)), shape_(std::move(shape)) {
    if (int64_t(values.size()) != irk::numel(shape_))
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, T v) {
    Tensor t(std::move(shape));
    std::fill(t.values.begin(), t.values.end(), v);
    return t;
  }

  static Tensor randn(Shape shape, Rng& rng, double std_dev) {
    Tensor t(std::move(shape));
    for (auto& v : t.values) v = T(rng.normal() * std_dev);
    return t;
  }

  static Tensor trunc_normal(Shape shape, Rng& rng, double std_dev) {
    Tensor t(std::move(shape));
    for (auto& v : t.values) v = T(rng.trunc_normal(std_dev));
    return t;
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return int(shape_.size()); }
  int dim(int i) const { return shape_[size_t(i)]; }
  int64_t numel() const { return int64_t(values.size()); }

  int rows() const { return rank() == 2 ? shape_[0] : 1; }
  int cols() const { return shape_.empty() ? 0 : shape_.back(); }

  T& at(int i) { return values[size_t(i)]; }
  T at(int i) const { return values[size_t(i)]; }
  T& at(int r, int c) { return values[size_t(r) * size_t(cols()) + size_t(c)]; }
  T at(int r, int c) const { return values[size_t(r) * size_t(cols()) + size_t(c)]; }

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), T(0));
  }

  void zero_grad() {
    std::fill(grad.begin(), grad.end(), T(0));
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (size_t i = 0; i < values.size(); ++i) out.values[i] = U(values[i]);
    return out;
  }

 private:
  Shape shape_;
};

}  // namespace irk
