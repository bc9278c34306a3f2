#pragma once

// Fan-beam forward projection by interpolating ray marching (half-pixel
// steps, bilinear weights) and its exact transpose. Both directions walk
// the same rays through trace_ray(), so the weights are shared bit for bit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "svmar/core/error.hpp"
#include "svmar/core/tensor.hpp"
#include "svmar/projector/geometry.hpp"

namespace svmar {

class FanBeamProjector {
 public:
  FanBeamProjector(FanBeamGeometry geom, ImageShape shape) : geom_(std::move(geom)), shape_(shape) {
    geom_.validate();
    check_image_dims(shape_.rows, shape_.cols);
    const double H = static_cast<double>(shape_.rows), W = static_cast<double>(shape_.cols);
    inv_px_x_ = W / geom_.fov;
    inv_px_y_ = H / geom_.fov;
    cj_ = 0.5 * W - 0.5;
    ci_ = 0.5 * H - 0.5;
    step_ = 0.5 * std::min(geom_.fov / W, geom_.fov / H);
    half_box_ = 0.5 * geom_.fov + std::max(geom_.fov / W, geom_.fov / H);
    src_.resize(geom_.n_views);
    for (std::size_t v = 0; v < geom_.n_views; ++v)
      src_[v] = {std::cos(geom_.view_angles[v]), std::sin(geom_.view_angles[v])};
    fan_.resize(geom_.n_bins);
    for (std::size_t b = 0; b < geom_.n_bins; ++b) {
      const double g = geom_.fan_angle(b);
      fan_[b] = {std::cos(g), std::sin(g)};
    }
  }

  const FanBeamGeometry& geometry() const noexcept { return geom_; }
  ImageShape image_shape() const noexcept { return shape_; }

  /// Calls visit(pixel_index, weight) for every (pixel, weight) pair of ray (view, bin).
  template <class Visit>
  void trace_ray(std::size_t view, std::size_t bin, Visit&& visit) const {
    const auto [cb, sb] = src_[view];
    const double sx = geom_.dso * cb, sy = geom_.dso * sb;
    const double cx = -cb, cy = -sb;
    const auto [cg, sg] = fan_[bin];
    const double dx = cx * cg - cy * sg;
    const double dy = cx * sg + cy * cg;

    double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
    if (!clip(sx, dx, t0, t1) || !clip(sy, dy, t0, t1)) return;
    const long k0 = static_cast<long>(std::ceil(t0 / step_));
    const long k1 = static_cast<long>(std::floor(t1 / step_));
    const long H = static_cast<long>(shape_.rows), W = static_cast<long>(shape_.cols);
    for (long k = k0; k <= k1; ++k) {
      const double t = static_cast<double>(k) * step_;
      const double fj = (sx + t * dx) * inv_px_x_ + cj_;
      const double fi = ci_ - (sy + t * dy) * inv_px_y_;
      const double j0f = std::floor(fj), i0f = std::floor(fi);
      const double wj = fj - j0f, wi = fi - i0f;
      const long j0 = static_cast<long>(j0f), i0 = static_cast<long>(i0f);
      const bool jin0 = j0 >= 0 && j0 < W, jin1 = j0 + 1 >= 0 && j0 + 1 < W;
      if (i0 >= 0 && i0 < H) {
        if (jin0) visit(static_cast<std::size_t>(i0 * W + j0), step_ * (1.0 - wi) * (1.0 - wj));
        if (jin1) visit(static_cast<std::size_t>(i0 * W + j0 + 1), step_ * (1.0 - wi) * wj);
      }
      if (i0 + 1 >= 0 && i0 + 1 < H) {
        if (jin0) visit(static_cast<std::size_t>((i0 + 1) * W + j0), step_ * wi * (1.0 - wj));
        if (jin1) visit(static_cast<std::size_t>((i0 + 1) * W + j0 + 1), step_ * wi * wj);
      }
    }
  }

  /// Stores every ray's merged (pixel, weight) list so later applications skip the ray marching.
  /// Duplicate pixels along a ray are summed, which only reorders the floating-point additions.
  void precompute() {
    if (cached()) return;
    const std::size_t np = geom_.n_views, nb = geom_.n_bins;
    std::vector<double> acc(shape_.rows * shape_.cols, 0.0);
    std::vector<char> seen(acc.size(), 0);
    std::vector<std::uint32_t> touched;
    row_ptr_.assign(nb * np + 1, 0);
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t v = 0; v < np; ++v) {
        touched.clear();
        trace_ray(v, b, [&](std::size_t idx, double w) {
          if (!seen[idx]) {
            seen[idx] = 1;
            touched.push_back(static_cast<std::uint32_t>(idx));
          }
          acc[idx] += w;
        });
        std::sort(touched.begin(), touched.end());
        for (std::uint32_t idx : touched) {
          if (acc[idx] != 0.0) {
            col_.push_back(idx);
            val_.push_back(acc[idx]);
          }
          acc[idx] = 0.0;
          seen[idx] = 0;
        }
        row_ptr_[b * np + v + 1] = col_.size();
      }
  }
  bool cached() const noexcept { return !row_ptr_.empty(); }

  /// Raw forward projection of a row-major image buffer into an Nb x Np buffer.
  void forward(const double* img, double* sino) const {
    const std::size_t np = geom_.n_views;
    if (cached()) {
      const std::size_t n = geom_.n_bins * np;
      for (std::size_t r = 0; r < n; ++r) {
        double acc = 0.0;
        for (std::size_t e = row_ptr_[r]; e < row_ptr_[r + 1]; ++e) acc += val_[e] * img[col_[e]];
        sino[r] = acc;
      }
      return;
    }
    for (std::size_t v = 0; v < np; ++v)
      for (std::size_t b = 0; b < geom_.n_bins; ++b) {
        double acc = 0.0;
        trace_ray(v, b, [&](std::size_t idx, double w) { acc += w * img[idx]; });
        sino[b * np + v] = acc;
      }
  }

  /// Raw transpose: img must be zeroed by the caller.
  void backward(const double* sino, double* img) const {
    const std::size_t np = geom_.n_views;
    if (cached()) {
      const std::size_t n = geom_.n_bins * np;
      for (std::size_t r = 0; r < n; ++r) {
        const double y = sino[r];
        if (y == 0.0) continue;
        for (std::size_t e = row_ptr_[r]; e < row_ptr_[r + 1]; ++e) img[col_[e]] += val_[e] * y;
      }
      return;
    }
    for (std::size_t v = 0; v < np; ++v)
      for (std::size_t b = 0; b < geom_.n_bins; ++b) {
        const double y = sino[b * np + v];
        if (y == 0.0) continue;
        trace_ray(v, b, [&](std::size_t idx, double w) { img[idx] += w * y; });
      }
  }

  Sinogram forward(const Image& img) const {
    require_shape(shape_of(img) == shape_, "forward_project: image shape does not match projector");
    Sinogram s(geom_.n_bins, geom_.n_views);
    forward(img.data(), s.data());
    return s;
  }

  Image backward(const Sinogram& sino) const {
    require_shape(sino.rows() == geom_.n_bins && sino.cols() == geom_.n_views,
                  "back_project: sinogram shape does not match geometry");
    Image img(shape_.rows, shape_.cols);
    backward(sino.data(), img.data());
    return img;
  }

 private:
  // Slab clip of origin + t*dir against [-half_box_, half_box_].
  bool clip(double origin, double dir, double& t0, double& t1) const {
    if (std::abs(dir) < 1e-15) return std::abs(origin) <= half_box_;
    double a = (-half_box_ - origin) / dir, b = (half_box_ - origin) / dir;
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
    return t0 <= t1;
  }

  struct CosSin {
    double c, s;
  };

  FanBeamGeometry geom_;
  ImageShape shape_;
  double inv_px_x_ = 0, inv_px_y_ = 0, cj_ = 0, ci_ = 0, step_ = 0, half_box_ = 0;
  std::vector<CosSin> src_, fan_;
  std::vector<std::size_t> row_ptr_;  // ray r = b * Np + v
  std::vector<std::uint32_t> col_;
  std::vector<double> val_;
};

inline Sinogram forward_project(const Image& img, const FanBeamGeometry& geom) {
  return FanBeamProjector(geom, shape_of(img)).forward(img);
}

inline Image back_project(const Sinogram& sino, const FanBeamGeometry& geom, ImageShape shape) {
  return FanBeamProjector(geom, shape).backward(sino);
}

/// Tr = 1 where the projection of the metal support exceeds eps.
inline SinoMask metal_trace(const ImageMask& mask, const FanBeamGeometry& geom, double eps = 1e-8) {
  require(eps > 0.0, "metal_trace: eps must be positive");
  const Image m(mask.rows(), mask.cols(), mask.vec());
  const Sinogram p = forward_project(m, geom);
  SinoMask tr(p.rows(), p.cols());
  for (std::size_t k = 0; k < p.size(); ++k) tr[k] = p[k] > eps ? 1.0 : 0.0;
  return tr;
}

/// Power-iteration estimate of ||P^T P||_2. Starts from the all-ones image, which has a positive
/// component on the leading eigenvector since P^T P is entrywise non-negative. The estimate
/// ||A x_k|| with unit x_k is non-decreasing in k.
inline double operator_norm_estimate(const FanBeamProjector& proj, int iters = 50) {
  require(iters >= 10, "operator_norm_estimate: iters must be >= 10");
  const ImageShape shape = proj.image_shape();
  const auto& geom = proj.geometry();
  const std::size_t n = shape.rows * shape.cols;
  std::vector<double> x(n, 1.0 / std::sqrt(static_cast<double>(n)));
  std::vector<double> s(geom.n_bins * geom.n_views), ax(n);
  double est = 0.0;
  for (int it = 0; it < iters; ++it) {
    proj.forward(x.data(), s.data());
    std::fill(ax.begin(), ax.end(), 0.0);
    proj.backward(s.data(), ax.data());
    double nrm = 0.0;
    for (double v : ax) nrm += v * v;
    nrm = std::sqrt(nrm);
    if (nrm == 0.0) return 0.0;
    est = std::max(est, nrm);
    for (std::size_t i = 0; i < n; ++i) x[i] = ax[i] / nrm;
  }
  return est;
}

inline double operator_norm_estimate(const FanBeamGeometry& geom, ImageShape shape, int iters = 50) {
  FanBeamProjector proj(geom, shape);
  if (iters > 10) proj.precompute();
  return operator_norm_estimate(proj, iters);
}

}  // namespace svmar
