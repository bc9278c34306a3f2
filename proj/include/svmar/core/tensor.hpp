#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "svmar/core/error.hpp"

namespace svmar {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

/// Dense row-major array of doubles with an arbitrary shape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    require_shape(shape_size(shape_) == data_.size(),
                  "tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                      shape_str(shape_));
  }

  static Tensor scalar(double v) { return Tensor(Shape{1}, v); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::vector<double>& vec() noexcept { return data_; }
  const std::vector<double>& vec() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  /// Same data, new shape with equal element count.
  Tensor reshaped(Shape s) const& { return Tensor(std::move(s), data_); }
  Tensor reshaped(Shape s) && { return Tensor(std::move(s), std::move(data_)); }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Two-dimensional grid tagged with its domain so images and sinograms cannot be mixed up.
template <class Tag>
class Grid {
 public:
  Grid() = default;
  Grid(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Grid(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require_shape(data_.size() == rows_ * cols_, "grid data size does not match rows*cols");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::vector<double>& vec() noexcept { return data_; }
  const std::vector<double>& vec() const noexcept { return data_; }

  bool same_shape(const Grid& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }
  template <class OtherTag>
  bool same_shape(const Grid<OtherTag>& o) const noexcept {
    return rows_ == o.rows() && cols_ == o.cols();
  }

  Tensor to_tensor() const { return Tensor(Shape{rows_, cols_}, data_); }
  static Grid from_tensor(const Tensor& t) {
    require_shape(t.rank() == 2 || (t.rank() == 3 && t.dim(0) == 1),
                  "expected a 2-D tensor, got " + shape_str(t.shape()));
    const std::size_t r = t.dim(t.rank() - 2);
    const std::size_t c = t.dim(t.rank() - 1);
    return Grid(r, c, t.vec());
  }

  bool operator==(const Grid&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct ImageTag {};
struct ImageMaskTag {};
struct SinogramTag {};
struct SinoMaskTag {};

/// CT image, H rows by W columns. Row 0 is the top of the field of view.
using Image = Grid<ImageTag>;
/// Binary image-domain mask (metal support).
using ImageMask = Grid<ImageMaskTag>;
/// Sinogram: Nb detector-bin rows by Np view columns.
using Sinogram = Grid<SinogramTag>;
/// Binary sinogram-domain mask (metal trace, missing views).
using SinoMask = Grid<SinoMaskTag>;

template <class T>
bool all_finite(const T& x) {
  for (double v : x.values())
    if (!std::isfinite(v)) return false;
  return true;
}

template <class T>
bool is_binary(const T& x) {
  for (double v : x.values())
    if (v != 0.0 && v != 1.0) return false;
  return true;
}

template <class A, class B>
double dot(const A& a, const B& b) {
  require_shape(a.size() == b.size(), "dot: size mismatch");
  double s = 0.0;
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  return s;
}

template <class A>
double l2_norm(const A& a) {
  return std::sqrt(dot(a, a));
}

template <class A>
double max_abs(const A& a) {
  double m = 0.0;
  for (double v : a.values()) m = std::max(m, std::abs(v));
  return m;
}

/// ||a - b|| / max(||b||, tiny)
template <class A, class B>
double relative_l2(const A& a, const B& b) {
  require_shape(a.size() == b.size(), "relative_l2: size mismatch");
  double num = 0.0, den = 0.0;
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) {
    num += (av[i] - bv[i]) * (av[i] - bv[i]);
    den += bv[i] * bv[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

}  // namespace svmar
