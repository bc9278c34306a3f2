#pragma once

#include <cmath>
#include <vector>

#include "svmar/core/error.hpp"
#include "svmar/core/tensor.hpp"

namespace svmar {

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(peak^2 / MSE), capped at 99 dB.
inline double psnr(const Image& x, const Image& ref, double peak = 1.0) {
  require_shape(x.same_shape(ref), "psnr: shape mismatch");
  require(peak > 0.0, "psnr: peak must be positive");
  double mse = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) mse += (x[i] - ref[i]) * (x[i] - ref[i]);
  mse /= static_cast<double>(x.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double peak = 1.0;
};

namespace detail {

inline std::vector<double> gaussian_window(int n, double sigma) {
  std::vector<double> g(static_cast<std::size_t>(n));
  const double c = 0.5 * (n - 1);
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    g[static_cast<std::size_t>(i)] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
    s += g[static_cast<std::size_t>(i)];
  }
  for (double& v : g) v /= s;
  return g;
}

// Separable 'valid' filtering of an H x W buffer.
inline std::vector<double> filter_valid(const std::vector<double>& a, std::size_t H, std::size_t W,
                                        const std::vector<double>& g) {
  const std::size_t n = g.size(), Wo = W - n + 1, Ho = H - n + 1;
  std::vector<double> tmp(H * Wo), out(Ho * Wo);
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < Wo; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < n; ++t) s += g[t] * a[i * W + j + t];
      tmp[i * Wo + j] = s;
    }
  for (std::size_t i = 0; i < Ho; ++i)
    for (std::size_t j = 0; j < Wo; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < n; ++t) s += g[t] * tmp[(i + t) * Wo + j];
      out[i * Wo + j] = s;
    }
  return out;
}

}  // namespace detail

/// Mean local SSIM over all window positions fully inside the image (Gaussian weighting).
inline double ssim(const Image& x, const Image& ref, const SsimOptions& o = {}) {
  require_shape(x.same_shape(ref), "ssim: shape mismatch");
  require(o.window >= 1 && x.rows() >= static_cast<std::size_t>(o.window) &&
              x.cols() >= static_cast<std::size_t>(o.window),
          "ssim: image smaller than window");
  const std::size_t H = x.rows(), W = x.cols();
  const auto g = detail::gaussian_window(o.window, o.sigma);
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = ref[i] * ref[i];
    xy[i] = x[i] * ref[i];
  }
  const auto mx = detail::filter_valid(x.vec(), H, W, g), my = detail::filter_valid(ref.vec(), H, W, g);
  const auto sxx = detail::filter_valid(xx, H, W, g), syy = detail::filter_valid(yy, H, W, g),
             sxy = detail::filter_valid(xy, H, W, g);
  const double c1 = (o.k1 * o.peak) * (o.k1 * o.peak), c2 = (o.k2 * o.peak) * (o.k2 * o.peak);
  double acc = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
    acc += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2)) /
           ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return acc / static_cast<double>(mx.size());
}

}  // namespace svmar
