#pragma once

// Cyclic-group (p4/p8) equivariant convolution built from Fourier-parameterised filters.
//
// Feature layouts: plane features are (C, H, W); group features are (C, N, H, W),
// i.e. channel c and orientation k share the flat channel index c * N + k.
//
// Lifting:  out[o, k] = sum_i in[i] * pi_k[W_oi]
// Group:    out[o, k] = sum_{i, j} in[i, (k - j) mod N] * pi_k[W_oij]
// where * is cross-correlation and pi_k resamples the filter at angle 2*pi*k/N.
// Rotating the input by a multiple r of 2*pi/N rotates the output and shifts its
// orientation axis by r.

#include <cmath>
#include <functional>
#include <random>

#include "svmar/core/error.hpp"
#include "svmar/core/rotate.hpp"
#include "svmar/core/tensor.hpp"
#include "svmar/eq/fourier_basis.hpp"
#include "svmar/nn/conv_kernels.hpp"

namespace svmar::eq {

/// Expansion coefficients shared by all N orientations. a and b have shape
/// (c_out, c_in, in_orient, p, p); in_orient is 1 for lifting layers and N otherwise.
struct EqFilterBank {
  std::size_t c_out = 1;
  std::size_t c_in = 1;
  std::size_t group = 8;
  bool lifting = true;
  int p = 5;
  Tensor a;
  Tensor b;

  std::size_t in_orient() const { return lifting ? 1 : group; }
  Shape coeff_shape() const {
    return {c_out, c_in, in_orient(), static_cast<std::size_t>(p), static_cast<std::size_t>(p)};
  }
  /// 2 p^2 c_out c_in (x N for group-input layers). Independent of the output orientation count.
  std::size_t parameter_count() const { return 2 * shape_size(coeff_shape()); }
};

inline EqFilterBank make_bank(std::size_t c_out, std::size_t c_in, std::size_t group, bool lifting, int p) {
  EqFilterBank bank{c_out, c_in, group, lifting, p, {}, {}};
  bank.a = Tensor(bank.coeff_shape());
  bank.b = Tensor(bank.coeff_shape());
  return bank;
}

/// Filters at orientation k: shape (c_out, c_in, in_orient, h, h); linear in (a, b).
inline Tensor assemble_filter(const EqFilterBank& bank, const BasisSet& basis, int k) {
  require(k >= 0 && k < basis.group, "assemble_filter: orientation index out of range");
  require(static_cast<std::size_t>(basis.group) == bank.group && basis.p == bank.p,
          "assemble_filter: basis does not match bank");
  require_shape(bank.a.shape() == bank.coeff_shape() && bank.b.shape() == bank.coeff_shape(),
                "assemble_filter: coefficient shape mismatch");
  const FourierBasis& B = basis.rotated[static_cast<std::size_t>(k)];
  const std::size_t hh = B.map_size(), pp = static_cast<std::size_t>(bank.p * bank.p);
  const std::size_t nfilt = bank.c_out * bank.c_in * bank.in_orient();
  Tensor out(Shape{bank.c_out, bank.c_in, bank.in_orient(), static_cast<std::size_t>(B.h),
                   static_cast<std::size_t>(B.h)});
  for (std::size_t f = 0; f < nfilt; ++f) {
    double* dst = out.data() + f * hh;
    for (std::size_t mn = 0; mn < pp; ++mn) {
      const double ca = bank.a[f * pp + mn], cb = bank.b[f * pp + mn];
      const double* pc = B.maps.data() + mn * hh;
      const double* ps = B.maps.data() + (pp + mn) * hh;
      for (std::size_t t = 0; t < hh; ++t) dst[t] += ca * pc[t] + cb * ps[t];
    }
  }
  return out;
}

/// Dense convolution weight (c_out*N, c_in*in_orient, h, h) realising the lifting/group rule.
inline Tensor assemble_conv_weight(const Tensor& a, const Tensor& b, const BasisSet& basis, bool lifting) {
  require_shape(a.rank() == 5 && a.shape() == b.shape(), "assemble_conv_weight: bad coefficient shape");
  const std::size_t c_out = a.dim(0), c_in = a.dim(1), in_or = a.dim(2);
  const std::size_t N = static_cast<std::size_t>(basis.group), h = static_cast<std::size_t>(basis.h);
  require_shape(in_or == (lifting ? 1 : N), "assemble_conv_weight: orientation axis mismatch");
  require_shape(a.dim(3) == static_cast<std::size_t>(basis.p), "assemble_conv_weight: order mismatch");
  const std::size_t cin_tot = c_in * in_or, hh = h * h;
  Tensor w(Shape{c_out * N, cin_tot, h, h});
  EqFilterBank bank{c_out, c_in, N, lifting, basis.p, a, b};
  for (std::size_t k = 0; k < N; ++k) {
    const Tensor f = assemble_filter(bank, basis, static_cast<int>(k));
    for (std::size_t o = 0; o < c_out; ++o)
      for (std::size_t i = 0; i < c_in; ++i)
        for (std::size_t j = 0; j < in_or; ++j) {
          const std::size_t l = lifting ? 0 : (k + N - j) % N;
          const double* src = f.data() + ((o * c_in + i) * in_or + j) * hh;
          double* dst = w.data() + ((o * N + k) * cin_tot + i * in_or + l) * hh;
          std::copy(src, src + hh, dst);
        }
  }
  return w;
}

/// Adjoint of assemble_conv_weight: accumulates dL/da, dL/db from dL/dW.
inline void assemble_conv_weight_backward(const Tensor& gw, const BasisSet& basis, bool lifting, Tensor& ga,
                                          Tensor& gb) {
  const std::size_t c_out = ga.dim(0), c_in = ga.dim(1), in_or = ga.dim(2);
  const std::size_t N = static_cast<std::size_t>(basis.group), h = static_cast<std::size_t>(basis.h);
  const std::size_t cin_tot = c_in * in_or, hh = h * h, pp = static_cast<std::size_t>(basis.p * basis.p);
  for (std::size_t k = 0; k < N; ++k) {
    const FourierBasis& B = basis.rotated[k];
    for (std::size_t o = 0; o < c_out; ++o)
      for (std::size_t i = 0; i < c_in; ++i)
        for (std::size_t j = 0; j < in_or; ++j) {
          const std::size_t l = lifting ? 0 : (k + N - j) % N;
          const double* g = gw.data() + ((o * N + k) * cin_tot + i * in_or + l) * hh;
          const std::size_t f = (o * c_in + i) * in_or + j;
          for (std::size_t mn = 0; mn < pp; ++mn) {
            const double* pc = B.maps.data() + mn * hh;
            const double* ps = B.maps.data() + (pp + mn) * hh;
            double sa = 0.0, sb = 0.0;
            for (std::size_t t = 0; t < hh; ++t) {
              sa += g[t] * pc[t];
              sb += g[t] * ps[t];
            }
            ga[f * pp + mn] += sa;
            gb[f * pp + mn] += sb;
          }
        }
  }
}

/// Plane (C_in, H, W) -> group feature (C_out, N, H, W).
inline Tensor lift_conv(const Tensor& input, const EqFilterBank& bank, const BasisSet& basis) {
  require(bank.lifting, "lift_conv: bank has an input orientation axis");
  require_shape(input.rank() == 3 && input.dim(0) == bank.c_in, "lift_conv: channel mismatch");
  const Tensor w = assemble_conv_weight(bank.a, bank.b, basis, true);
  Tensor y = kernels::conv2d_forward(input, w);
  return std::move(y).reshaped({bank.c_out, bank.group, input.dim(1), input.dim(2)});
}

/// Group feature (C_in, N, H, W) -> group feature (C_out, N, H, W).
inline Tensor group_conv(const Tensor& f, const EqFilterBank& bank, const BasisSet& basis) {
  require(!bank.lifting, "group_conv: bank has no input orientation axis");
  require_shape(f.rank() == 4, "group_conv: input must be (C,N,H,W)");
  require_shape(f.dim(1) == bank.group, "group_conv: orientation mismatch");
  require_shape(f.dim(0) == bank.c_in, "group_conv: channel mismatch");
  const Tensor w = assemble_conv_weight(bank.a, bank.b, basis, false);
  const Tensor x = f.reshaped({f.dim(0) * f.dim(1), f.dim(2), f.dim(3)});
  Tensor y = kernels::conv2d_forward(x, w);
  return std::move(y).reshaped({bank.c_out, bank.group, f.dim(2), f.dim(3)});
}

/// Mean over the orientation axis: (C, N, H, W) -> (C, H, W).
inline Tensor project_group(const Tensor& f) {
  require_shape(f.rank() == 4, "project_group: input must be (C,N,H,W)");
  const std::size_t C = f.dim(0), N = f.dim(1), plane = f.dim(2) * f.dim(3);
  Tensor out(Shape{C, f.dim(2), f.dim(3)});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t k = 0; k < N; ++k) {
      const double* src = f.data() + (c * N + k) * plane;
      double* dst = out.data() + c * plane;
      for (std::size_t t = 0; t < plane; ++t) dst[t] += src[t];
    }
  const double inv = 1.0 / static_cast<double>(N);
  for (double& v : out.values()) v *= inv;
  return out;
}

/// Cyclic shift of the orientation axis: out[:, k] = in[:, (k - s) mod N].
inline Tensor shift_orientation(const Tensor& f, long s) {
  require_shape(f.rank() == 4, "shift_orientation: input must be (C,N,H,W)");
  const std::size_t C = f.dim(0), N = f.dim(1), plane = f.dim(2) * f.dim(3);
  Tensor out(f.shape());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t k = 0; k < N; ++k) {
      const std::size_t src_k = static_cast<std::size_t>(((static_cast<long>(k) - s) % static_cast<long>(N) +
                                                           static_cast<long>(N)) %
                                                          static_cast<long>(N));
      std::copy_n(f.data() + (c * N + src_k) * plane, plane, out.data() + (c * N + k) * plane);
    }
  return out;
}

/// Uniform(+-1/sqrt(fan_in)) coefficients with fan_in = c_in * in_orient * 2p^2.
template <class Rng>
void init_bank(EqFilterBank& bank, Rng& rng) {
  const double fan_in = static_cast<double>(bank.c_in * bank.in_orient()) * 2.0 * bank.p * bank.p;
  std::uniform_real_distribution<double> u(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
  for (double& v : bank.a.values()) v = u(rng);
  for (double& v : bank.b.values()) v = u(rng);
}

using ImageMap = std::function<Image(const Image&)>;

/// ||map(rot(x)) - rot(map(x))|| / max(||map(rot(x))||, eps).
inline double equivariance_error(const ImageMap& map, const Image& input, double theta, double eps = 1e-12,
                                 Interp interp = Interp::bilinear) {
  const Image a = map(rotate_image(input, theta, interp));
  const Image b = rotate_image(map(input), theta, interp);
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    num += (a[k] - b[k]) * (a[k] - b[k]);
    den += a[k] * a[k];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), eps);
}

}  // namespace svmar::eq
