#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "svmar/core/error.hpp"
#include "svmar/core/tensor.hpp"

namespace svmar {

/// Default physical width of the square field of view.
inline constexpr double kDefaultFov = 2.0;
inline constexpr double kPhantomClipMax = 1.2;

/// Ellipse in the unit square [-1,1]^2 (scaled to the field of view on rendering).
struct Ellipse {
  double cx = 0.0;
  double cy = 0.0;
  double a = 0.5;      // semi-axis along the rotated x direction
  double b = 0.5;      // semi-axis along the rotated y direction
  double angle = 0.0;  // radians, counter-clockwise
  double intensity = 1.0;

  /// Squared elliptical radius: <= 1 inside.
  double level(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = c * dx + s * dy;
    const double v = -s * dx + c * dy;
    return (u * u) / (a * a) + (v * v) / (b * b);
  }
  bool contains(double x, double y) const { return level(x, y) <= 1.0; }
};

struct PhantomSpec {
  std::vector<Ellipse> ellipses;
  std::size_t pixels = 0;  // masks only: exact support size around the first ellipse (0: rasterise)
};

/// Physical x coordinate (in unit-square units, i.e. fov = 2) of column j.
inline double pixel_x(std::size_t j, std::size_t W, double fov = kDefaultFov) {
  return ((static_cast<double>(j) + 0.5) / static_cast<double>(W) - 0.5) * fov;
}

/// Physical y coordinate of row i. Row 0 is at the top (largest y).
inline double pixel_y(std::size_t i, std::size_t H, double fov = kDefaultFov) {
  return (0.5 - (static_cast<double>(i) + 0.5) / static_cast<double>(H)) * fov;
}

inline void check_image_dims(std::size_t H, std::size_t W) {
  require(H >= 8 && W >= 8, "image dimensions must be at least 8x8");
}

/// Sum of the intensities of all ellipses containing each pixel centre, clipped to [0, 1.2].
inline Image render_phantom(const PhantomSpec& spec, std::size_t H, std::size_t W) {
  require(!spec.ellipses.empty(), "invalid phantom spec: no ellipses");
  check_image_dims(H, W);
  Image img(H, W);
  for (std::size_t i = 0; i < H; ++i) {
    const double y = pixel_y(i, H);
    for (std::size_t j = 0; j < W; ++j) {
      const double x = pixel_x(j, W);
      double v = 0.0;
      for (const auto& e : spec.ellipses)
        if (e.contains(x, y)) v += e.intensity;
      img(i, j) = std::clamp(v, 0.0, kPhantomClipMax);
    }
  }
  return img;
}

/// Binary mask of all pixel centres inside any of the ellipses (intensities ignored). With
/// spec.pixels > 0 the mask is instead the spec.pixels pixel centres of lowest elliptical radius
/// with respect to the first ellipse (ties by raster order), so its size is exact.
inline ImageMask render_mask(const PhantomSpec& spec, std::size_t H, std::size_t W) {
  require(!spec.ellipses.empty(), "invalid mask spec: no ellipses");
  check_image_dims(H, W);
  ImageMask m(H, W);
  if (spec.pixels > 0) {
    require(spec.pixels <= H * W, "invalid mask spec: more pixels than the image holds");
    std::vector<std::pair<double, std::size_t>> order(H * W);
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j)
        order[i * W + j] = {spec.ellipses[0].level(pixel_x(j, W), pixel_y(i, H)), i * W + j};
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(spec.pixels), order.end());
    for (std::size_t k = 0; k < spec.pixels; ++k) m[order[k].second] = 1.0;
    return m;
  }
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      for (const auto& e : spec.ellipses)
        if (e.contains(pixel_x(j, W), pixel_y(i, H))) {
          m(i, j) = 1.0;
          break;
        }
  return m;
}

inline PhantomSpec disk_phantom(double radius, double intensity = 1.0, double cx = 0.0, double cy = 0.0) {
  return PhantomSpec{{Ellipse{cx, cy, radius, radius, 0.0, intensity}}};
}

/// Modified Shepp-Logan phantom (Toft's high-contrast variant, values in [0,1]).
inline PhantomSpec shepp_logan() {
  constexpr double d = std::numbers::pi / 180.0;
  return PhantomSpec{{
      {0.0, 0.0, 0.69, 0.92, 0.0, 1.0},
      {0.0, -0.0184, 0.6624, 0.874, 0.0, -0.8},
      {0.22, 0.0, 0.11, 0.31, -18.0 * d, -0.2},
      {-0.22, 0.0, 0.16, 0.41, 18.0 * d, -0.2},
      {0.0, 0.35, 0.21, 0.25, 0.0, 0.1},
      {0.0, 0.1, 0.046, 0.046, 0.0, 0.1},
      {0.0, -0.1, 0.046, 0.046, 0.0, 0.1},
      {-0.08, -0.605, 0.046, 0.023, 0.0, 0.1},
      {0.0, -0.605, 0.023, 0.023, 0.0, 0.1},
      {0.06, -0.605, 0.023, 0.046, 0.0, 0.1},
  }};
}

/// Ten-ellipse head phantom with all-positive intensities, so its support is the outer skull ellipse.
inline PhantomSpec head_phantom() {
  PhantomSpec p = shepp_logan();
  for (auto& e : p.ellipses) e.intensity = std::abs(e.intensity) * 0.5;
  p.ellipses[0].intensity = 1.0;
  p.ellipses[1].intensity = -0.6;
  return p;
}

/// Random anatomy-like phantom: a body ellipse with interior structures, inside the inscribed disk.
template <class Rng>
PhantomSpec random_phantom(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PhantomSpec p;
  const double ba = 0.62 + 0.2 * u(rng), bb = 0.55 + 0.2 * u(rng);
  const double rot = std::numbers::pi * u(rng);
  p.ellipses.push_back({0.0, 0.0, ba, bb, rot, 0.75 + 0.15 * u(rng)});
  p.ellipses.push_back({0.0, 0.0, ba - 0.05, bb - 0.05, rot, -0.35});
  const int n = 3 + static_cast<int>(u(rng) * 5);
  for (int k = 0; k < n; ++k) {
    const double r = 0.45 * std::sqrt(u(rng));
    const double t = 2.0 * std::numbers::pi * u(rng);
    const double a = 0.05 + 0.15 * u(rng), b = 0.05 + 0.15 * u(rng);
    const double val = (u(rng) < 0.3 ? -0.15 : 0.1 + 0.35 * u(rng));
    p.ellipses.push_back({r * std::cos(t), r * std::sin(t), a, b, std::numbers::pi * u(rng), val});
  }
  return p;
}

/// Elliptical metal implant whose mask on an HxW grid has exactly round(pixels) pixels.
inline PhantomSpec metal_disk_spec(double pixels, std::size_t H, double cx, double cy, double aspect = 1.0) {
  require(pixels >= 1.0, "metal size must be at least one pixel");
  const double pix = kDefaultFov / static_cast<double>(H);
  const double area = pixels * pix * pix;
  const double r = std::sqrt(area / (std::numbers::pi * aspect));
  return PhantomSpec{{Ellipse{cx, cy, r * aspect, r, 0.0, 1.0}}, static_cast<std::size_t>(std::lround(pixels))};
}

inline std::size_t count_ones(const ImageMask& m) {
  return static_cast<std::size_t>(std::count(m.vec().begin(), m.vec().end(), 1.0));
}

/// Mask of pixel centres within radius (fraction of the half-FOV) of the image centre.
inline Image disk_window(std::size_t H, std::size_t W, double radius = 1.0) {
  Image w(H, W);
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      const double x = pixel_x(j, W), y = pixel_y(i, H);
      w(i, j) = (x * x + y * y <= radius * radius) ? 1.0 : 0.0;
    }
  return w;
}

/// Place mu_metal wherever the mask is set.
inline Image insert_metal(const Image& img, const ImageMask& mask, double mu_metal) {
  require_shape(img.same_shape(mask), "insert_metal: image and mask shapes differ");
  require(is_binary(mask), "insert_metal: mask is not binary");
  Image out = img;
  for (std::size_t k = 0; k < out.size(); ++k)
    require(mask[k] == 1.0 || img[k] < mu_metal, "insert_metal: mu_metal must exceed the image maximum");
  for (std::size_t k = 0; k < out.size(); ++k)
    if (mask[k] == 1.0) out[k] = mu_metal;
  return out;
}

}  // namespace svmar
