#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "svmar/core/error.hpp"
#include "svmar/core/rotate.hpp"
#include "svmar/core/tensor.hpp"

namespace svmar::eq {

/// Maps index m in [0, p) to a signed frequency in [-p/2, p/2), with m = 0 the constant mode.
inline int centered_frequency(int m, int p) { return m < (p + 1) / 2 ? m : m - p; }

/// 1 inside radius h/2 - 1/2, raised-cosine rolloff to 0 at h/2.
inline double radial_mask(double r, int h) {
  const double outer = 0.5 * h, inner = outer - 0.5;
  if (r <= inner) return 1.0;
  if (r >= outer) return 0.0;
  return 0.5 * (1.0 + std::cos(std::numbers::pi * (r - inner) / (outer - inner)));
}

/// Cosine and sine Fourier maps on an h x h grid, sampled at U_theta^-1 x.
/// maps has shape (2, p, p, h, h): family 0 is cosine, family 1 is sine.
/// Filter tap (row a, col b) sits at x = (b - h/2, h/2 - a) in pixel units, matching the
/// image-domain orientation used by rotate_image.
struct FourierBasis {
  int p = 5;
  int h = 5;
  double theta = 0.0;
  Tensor maps;

  std::size_t count() const { return 2u * static_cast<std::size_t>(p * p); }
  std::size_t map_size() const { return static_cast<std::size_t>(h * h); }
  const double* map(int family, int m, int n) const { return maps.data() + offset(family, m, n); }
  double* map(int family, int m, int n) { return maps.data() + offset(family, m, n); }
  std::size_t offset(int family, int m, int n) const {
    return ((static_cast<std::size_t>(family) * p + m) * p + n) * map_size();
  }
  /// Whether (m, n) is above the radial frequency cut-off (its maps are zero).
  bool cut(int m, int n) const {
    const int fm = centered_frequency(m, p), fn = centered_frequency(n, p);
    return std::sqrt(static_cast<double>(fm * fm + fn * fn)) > 0.5 * p;
  }
};

inline FourierBasis build_basis(int p, int h, double theta) {
  require(p >= 1, "build_basis: order p must be >= 1");
  require(h >= 1 && h % 2 == 1, "build_basis: filter size must be odd");
  require(std::isfinite(theta), "build_basis: non-finite angle");
  FourierBasis B;
  B.p = p;
  B.h = h;
  B.theta = theta;
  B.maps = Tensor(Shape{2, static_cast<std::size_t>(p), static_cast<std::size_t>(p), static_cast<std::size_t>(h),
                        static_cast<std::size_t>(h)});
  const auto [c, s] = exact_cos_sin(theta);
  const double half = 0.5 * (h - 1);
  for (int m = 0; m < p; ++m)
    for (int n = 0; n < p; ++n) {
      if (B.cut(m, n)) continue;
      const double fm = centered_frequency(m, p), fn = centered_frequency(n, p);
      double* cm = B.map(0, m, n);
      double* sm = B.map(1, m, n);
      for (int a = 0; a < h; ++a)
        for (int b = 0; b < h; ++b) {
          const double x1 = b - half, x2 = half - a;
          const double u1 = c * x1 - s * x2, u2 = s * x1 + c * x2;
          const double mask = radial_mask(std::hypot(x1, x2), h);
          const double phase = 2.0 * std::numbers::pi * (fm * u1 + fn * u2) / h;
          cm[a * h + b] = mask * std::cos(phase);
          sm[a * h + b] = mask * std::sin(phase);
        }
    }
  return B;
}

/// The basis resampled at the N orientations 2*pi*k/N of a cyclic group.
struct BasisSet {
  int p = 5;
  int h = 5;
  int group = 8;
  std::vector<FourierBasis> rotated;

  double angle(int k) const { return 2.0 * std::numbers::pi * k / group; }
};

inline BasisSet make_basis_set(int p, int h, int group) {
  require(group >= 1, "basis set: group order must be >= 1");
  BasisSet bs;
  bs.p = p;
  bs.h = h;
  bs.group = group;
  for (int k = 0; k < group; ++k) bs.rotated.push_back(build_basis(p, h, bs.angle(k)));
  return bs;
}

}  // namespace svmar::eq
