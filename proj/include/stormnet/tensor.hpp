#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "stormnet/error.hpp"

namespace stormnet {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major array of doubles. A plain value: copying copies the data.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    check_dims();
  }

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims();
    if (data_.size() != shape_size(shape_)) {
      throw ShapeMismatch("data length " + std::to_string(data_.size()) +
                          " does not fill shape " + shape_str(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t m = rows.size();
    const std::size_t n = m ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(m * n);
    for (const auto& r : rows) {
      if (r.size() != n) throw ShapeMismatch("ragged matrix literal");
      data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor(Shape{m, n}, std::move(data));
  }

  static Tensor vector(std::initializer_list<double> values) {
    return Tensor(Shape{values.size()}, std::vector<double>(values));
  }

  /// Uniform(-bound, bound) entries drawn from `rng`.
  template <class Rng>
  static Tensor uniform(Shape shape, double bound, Rng& rng) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : t.data_) v = dist(rng);
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }

  /// Rows/cols of the tensor viewed as a matrix: leading dims folded into rows.
  std::size_t rows() const { return rank() <= 1 ? 1 : size() / shape_.back(); }
  std::size_t cols() const { return rank() == 0 ? 0 : shape_.back(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  double item() const {
    if (size() != 1) throw ShapeMismatch("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
  }

  Tensor reshaped(Shape shape) const {
    Tensor t = *this;
    if (shape_size(shape) != size()) {
      throw ShapeMismatch("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    t.shape_ = std::move(shape);
    return t;
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_dims() const {
    for (std::size_t d : shape_)
      if (d == 0) throw ShapeMismatch("zero-sized dimension in " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
};

}  // namespace stormnet
