#pragma once

#include <cmath>
#include <numbers>
#include <utility>

#include "svmar/core/error.hpp"
#include "svmar/core/tensor.hpp"

namespace svmar {

enum class Interp { nearest, bilinear };

/// cos/sin with exact values at multiples of pi/2, so quarter turns are pure permutations.
inline std::pair<double, double> exact_cos_sin(double theta) {
  const double q = theta / (std::numbers::pi / 2.0);
  const double r = std::round(q);
  if (std::abs(q - r) < 1e-12) {
    switch (((static_cast<long long>(r) % 4) + 4) % 4) {
      case 0: return {1.0, 0.0};
      case 1: return {0.0, 1.0};
      case 2: return {-1.0, 0.0};
      default: return {0.0, -1.0};
    }
  }
  return {std::cos(theta), std::sin(theta)};
}

namespace detail {

// Sample a row-major HxW array at fractional (row, col) with zero outside.
inline double sample(const double* src, std::size_t H, std::size_t W, double fi, double fj, Interp interp) {
  if (interp == Interp::nearest) {
    const double ri = std::round(fi), rj = std::round(fj);
    if (ri < 0 || rj < 0 || ri > static_cast<double>(H - 1) || rj > static_cast<double>(W - 1)) return 0.0;
    return src[static_cast<std::size_t>(ri) * W + static_cast<std::size_t>(rj)];
  }
  const double i0f = std::floor(fi), j0f = std::floor(fj);
  const double wi = fi - i0f, wj = fj - j0f;
  const long i0 = static_cast<long>(i0f), j0 = static_cast<long>(j0f);
  const long h = static_cast<long>(H), w = static_cast<long>(W);
  double v = 0.0;
  auto at = [&](long i, long j, double wt) {
    if (wt != 0.0 && i >= 0 && j >= 0 && i < h && j < w) v += wt * src[i * w + j];
  };
  at(i0, j0, (1 - wi) * (1 - wj));
  at(i0, j0 + 1, (1 - wi) * wj);
  at(i0 + 1, j0, wi * (1 - wj));
  at(i0 + 1, j0 + 1, wi * wj);
  return v;
}

}  // namespace detail

/// Rotate each HxW plane of a row-major stack about the plane centre:
/// out(x) = in(U^-1 x), U = [[cos, sin], [-sin, cos]], x = (column right, row up).
inline void rotate_planes(const double* src, double* dst, std::size_t planes, std::size_t H, std::size_t W,
                          double theta, Interp interp) {
  require(std::isfinite(theta), "rotate: non-finite angle");
  const auto [c, s] = exact_cos_sin(theta);
  const double ci = 0.5 * static_cast<double>(H - 1), cj = 0.5 * static_cast<double>(W - 1);
  for (std::size_t i = 0; i < H; ++i) {
    const double y = ci - static_cast<double>(i);
    for (std::size_t j = 0; j < W; ++j) {
      const double x = static_cast<double>(j) - cj;
      const double sx = c * x - s * y;
      const double sy = s * x + c * y;
      const double fi = ci - sy, fj = cj + sx;
      for (std::size_t p = 0; p < planes; ++p)
        dst[p * H * W + i * W + j] = detail::sample(src + p * H * W, H, W, fi, fj, interp);
    }
  }
}

template <class Tag>
Grid<Tag> rotate_image(const Grid<Tag>& img, double theta, Interp interp = Interp::bilinear) {
  Grid<Tag> out(img.rows(), img.cols());
  rotate_planes(img.data(), out.data(), 1, img.rows(), img.cols(), theta, interp);
  return out;
}

/// Rotate every trailing HxW plane of a tensor of rank >= 2.
inline Tensor rotate_tensor(const Tensor& t, double theta, Interp interp = Interp::bilinear) {
  require_shape(t.rank() >= 2, "rotate_tensor: rank must be >= 2");
  const std::size_t H = t.dim(t.rank() - 2), W = t.dim(t.rank() - 1);
  Tensor out(t.shape());
  rotate_planes(t.data(), out.data(), t.size() / (H * W), H, W, theta, interp);
  return out;
}

}  // namespace svmar
