#pragma once

// Equiangular fan-beam filtered backprojection over a full 2*pi scan:
// cosine pre-weighting, ramp filtering along bins by zero-padded FFT
// convolution, and 1/L^2 distance-weighted backprojection.

#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>
#include <vector>

#include <fftw3.h>

#include "svmar/core/error.hpp"
#include "svmar/core/tensor.hpp"
#include "svmar/projector/geometry.hpp"

namespace svmar {

enum class FbpWindow { ramlak, hann };

namespace detail {

// FFTW's planner is not re-entrant.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    in_ = fftw_alloc_real(n);
    out_ = fftw_alloc_complex(n / 2 + 1);
    std::lock_guard lock(fftw_planner_mutex());
    fwd_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
    inv_ = fftw_plan_dft_c2r_1d(static_cast<int>(n), out_, in_, FFTW_ESTIMATE);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;
  ~RealFft() {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
    fftw_free(in_);
    fftw_free(out_);
  }

  double* real() noexcept { return in_; }
  std::complex<double>* spectrum() noexcept { return reinterpret_cast<std::complex<double>*>(out_); }
  void forward() { fftw_execute(fwd_); }
  void inverse() { fftw_execute(inv_); }  // unnormalised
  std::size_t size() const noexcept { return n_; }

 private:
  std::size_t n_;
  double* in_;
  fftw_complex* out_;
  fftw_plan fwd_, inv_;
};

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace detail

/// Discrete equiangular ramp kernel g(n*a) = 0.5 * (n a / sin(n a))^2 * h(n a).
inline double fan_ramp_kernel(long n, double pitch) {
  if (n == 0) return 1.0 / (8.0 * pitch * pitch);
  if (n % 2 == 0) return 0.0;
  const double ga = static_cast<double>(n) * pitch;
  const double ratio = ga / std::sin(ga);
  const double h = -1.0 / (std::numbers::pi * std::numbers::pi * ga * ga);
  return 0.5 * ratio * ratio * h;
}

/// Filter each view of a weighted sinogram; result is q (Nb x Np) ready for backprojection.
inline Sinogram fbp_filter(const Sinogram& sino, const FanBeamGeometry& geom, FbpWindow window) {
  const std::size_t nb = geom.n_bins, np = geom.n_views;
  const std::size_t npad = detail::next_pow2(2 * nb);
  detail::RealFft fft(npad);

  std::fill(fft.real(), fft.real() + npad, 0.0);
  for (long n = -static_cast<long>(nb) + 1; n < static_cast<long>(nb); ++n) {
    const std::size_t idx = static_cast<std::size_t>((n + static_cast<long>(npad)) % static_cast<long>(npad));
    fft.real()[idx] = fan_ramp_kernel(n, geom.detector_pitch);
  }
  fft.forward();
  std::vector<std::complex<double>> kernel(fft.spectrum(), fft.spectrum() + npad / 2 + 1);
  if (window == FbpWindow::hann)
    for (std::size_t k = 0; k < kernel.size(); ++k)
      kernel[k] *= 0.5 * (1.0 + std::cos(2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(npad)));

  Sinogram q(nb, np);
  const double scale = geom.detector_pitch / static_cast<double>(npad);
  for (std::size_t v = 0; v < np; ++v) {
    std::fill(fft.real(), fft.real() + npad, 0.0);
    for (std::size_t b = 0; b < nb; ++b)
      fft.real()[b] = sino(b, v) * geom.dso * std::cos(geom.fan_angle(b));
    fft.forward();
    for (std::size_t k = 0; k < kernel.size(); ++k) fft.spectrum()[k] *= kernel[k];
    fft.inverse();
    for (std::size_t b = 0; b < nb; ++b) q(b, v) = fft.real()[b] * scale;
  }
  return q;
}

/// Filtered backprojection. The sinogram must be complete: missing views are the caller's job.
inline Image fbp(const Sinogram& sino, const FanBeamGeometry& geom, ImageShape shape,
                 FbpWindow window = FbpWindow::ramlak) {
  geom.validate();
  require(geom.n_bins >= 4, "fbp: need at least 4 detector bins");
  require_shape(sino.rows() == geom.n_bins && sino.cols() == geom.n_views, "fbp: sinogram shape mismatch");
  check_image_dims(shape.rows, shape.cols);

  const Sinogram q = fbp_filter(sino, geom, window);
  const std::size_t nb = geom.n_bins, np = geom.n_views;
  const double dbeta = 2.0 * std::numbers::pi / static_cast<double>(np);
  const double mid = 0.5 * static_cast<double>(nb - 1);

  Image out(shape.rows, shape.cols);
  std::vector<double> xs(shape.cols), ys(shape.rows);
  for (std::size_t j = 0; j < shape.cols; ++j) xs[j] = pixel_x(j, shape.cols, geom.fov);
  for (std::size_t i = 0; i < shape.rows; ++i) ys[i] = pixel_y(i, shape.rows, geom.fov);

  for (std::size_t v = 0; v < np; ++v) {
    const double cb = std::cos(geom.view_angles[v]), sb = std::sin(geom.view_angles[v]);
    const double sx = geom.dso * cb, sy = geom.dso * sb;
    const double cx = -cb, cy = -sb;
    for (std::size_t i = 0; i < shape.rows; ++i)
      for (std::size_t j = 0; j < shape.cols; ++j) {
        const double ux = xs[j] - sx, uy = ys[i] - sy;
        const double l2 = ux * ux + uy * uy;
        const double gamma = std::atan2(cx * uy - cy * ux, cx * ux + cy * uy);
        const double fb = gamma / geom.detector_pitch + mid;
        const double b0f = std::floor(fb);
        const long b0 = static_cast<long>(b0f);
        const double w = fb - b0f;
        double val = 0.0;
        if (b0 >= 0 && b0 < static_cast<long>(nb)) val += (1.0 - w) * q(static_cast<std::size_t>(b0), v);
        if (b0 + 1 >= 0 && b0 + 1 < static_cast<long>(nb)) val += w * q(static_cast<std::size_t>(b0 + 1), v);
        out(i, j) += dbeta * val / l2;
      }
  }
  return out;
}

}  // namespace svmar
