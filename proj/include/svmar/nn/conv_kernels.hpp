#pragma once

// Stride-1 2-D cross-correlation with zero padding that preserves H x W.
// x: (Cin, H, W), w: (Cout, Cin, k, k), y: (Cout, H, W), k odd.
// Implemented as im2col followed by a dense matrix product.

#include <algorithm>

#include <Eigen/Core>

#include "svmar/core/error.hpp"
#include "svmar/core/tensor.hpp"

namespace svmar::kernels {

struct ConvDims {
  std::size_t cin, cout, h, w, k;
};

inline ConvDims conv_dims(const Tensor& x, const Tensor& w) {
  require_shape(x.rank() == 3, "conv2d: input must be (C,H,W), got " + shape_str(x.shape()));
  require_shape(w.rank() == 4 && w.dim(2) == w.dim(3) && w.dim(2) % 2 == 1,
                "conv2d: weight must be (Cout,Cin,k,k) with odd k, got " + shape_str(w.shape()));
  require_shape(w.dim(1) == x.dim(0), "conv2d: channel mismatch, input " + shape_str(x.shape()) +
                                          " weight " + shape_str(w.shape()));
  return {x.dim(0), w.dim(0), x.dim(1), x.dim(2), w.dim(2)};
}

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

// Calls body(y, x0, x1) over output rows whose tap (dy, dx) lands inside the image.
template <class Body>
inline void for_valid(long H, long W, long dy, long dx, Body&& body) {
  const long y0 = std::max(0L, -dy), y1 = std::min(H, H - dy);
  const long x0 = std::max(0L, -dx), x1 = std::min(W, W - dx);
  if (x0 >= x1) return;
  for (long y = y0; y < y1; ++y) body(y, x0, x1);
}

// cols[(i*k + ky)*k + kx, y*W + x] = x[i, y + ky - r, x + kx - r] (0 outside).
inline RowMat im2col(const double* x, std::size_t cin, long H, long W, long k) {
  const long r = k / 2;
  RowMat cols = RowMat::Zero(static_cast<long>(cin) * k * k, H * W);
  for (std::size_t i = 0; i < cin; ++i) {
    const double* in = x + i * static_cast<std::size_t>(H * W);
    for (long ky = 0; ky < k; ++ky)
      for (long kx = 0; kx < k; ++kx) {
        double* row = cols.data() + ((static_cast<long>(i) * k + ky) * k + kx) * H * W;
        const long dy = ky - r, dx = kx - r;
        for_valid(H, W, dy, dx, [&](long yy, long x0, long x1) {
          std::copy(in + (yy + dy) * W + dx + x0, in + (yy + dy) * W + dx + x1, row + yy * W + x0);
        });
      }
  }
  return cols;
}

inline void col2im_add(const RowMat& cols, double* x, std::size_t cin, long H, long W, long k) {
  const long r = k / 2;
  for (std::size_t i = 0; i < cin; ++i) {
    double* out = x + i * static_cast<std::size_t>(H * W);
    for (long ky = 0; ky < k; ++ky)
      for (long kx = 0; kx < k; ++kx) {
        const double* row = cols.data() + ((static_cast<long>(i) * k + ky) * k + kx) * H * W;
        const long dy = ky - r, dx = kx - r;
        for_valid(H, W, dy, dx, [&](long yy, long x0, long x1) {
          double* o = out + (yy + dy) * W + dx;
          const double* c = row + yy * W;
          for (long xx = x0; xx < x1; ++xx) o[xx] += c[xx];
        });
      }
  }
}

}  // namespace detail

inline Tensor conv2d_forward(const Tensor& x, const Tensor& w) {
  const auto d = conv_dims(x, w);
  const long H = static_cast<long>(d.h), W = static_cast<long>(d.w), k = static_cast<long>(d.k);
  const long K = static_cast<long>(d.cin) * k * k;
  Tensor y(Shape{d.cout, d.h, d.w});
  detail::Map Y(y.data(), static_cast<long>(d.cout), H * W);
  const detail::MapC Wm(w.data(), static_cast<long>(d.cout), K);
  if (k == 1) {
    Y.noalias() = Wm * detail::MapC(x.data(), K, H * W);
  } else {
    const detail::RowMat cols = detail::im2col(x.data(), d.cin, H, W, k);
    Y.noalias() = Wm * cols;
  }
  return y;
}

/// Gradient with respect to the input.
inline Tensor conv2d_backward_input(const Tensor& gy, const Tensor& w, const Shape& x_shape) {
  const std::size_t cin = x_shape.at(0), H0 = x_shape.at(1), W0 = x_shape.at(2);
  const std::size_t cout = w.dim(0), k0 = w.dim(2);
  require_shape(gy.rank() == 3 && gy.dim(0) == cout && gy.dim(1) == H0 && gy.dim(2) == W0,
                "conv2d backward: gradient shape mismatch");
  const long H = static_cast<long>(H0), W = static_cast<long>(W0), k = static_cast<long>(k0);
  const long K = static_cast<long>(cin) * k * k;
  Tensor gx(x_shape);
  const detail::MapC G(gy.data(), static_cast<long>(cout), H * W);
  const detail::MapC Wm(w.data(), static_cast<long>(cout), K);
  if (k == 1) {
    detail::Map(gx.data(), K, H * W).noalias() = Wm.transpose() * G;
  } else {
    const detail::RowMat dcols = Wm.transpose() * G;
    detail::col2im_add(dcols, gx.data(), cin, H, W, k);
  }
  return gx;
}

/// Gradient with respect to the weights.
inline Tensor conv2d_backward_weight(const Tensor& gy, const Tensor& x, const Shape& w_shape) {
  const std::size_t cout = w_shape.at(0), cin = w_shape.at(1);
  const long H = static_cast<long>(x.dim(1)), W = static_cast<long>(x.dim(2)), k = static_cast<long>(w_shape.at(2));
  const long K = static_cast<long>(cin) * k * k;
  Tensor gw(w_shape);
  const detail::MapC G(gy.data(), static_cast<long>(cout), H * W);
  detail::Map GW(gw.data(), static_cast<long>(cout), K);
  if (k == 1) {
    GW.noalias() = G * detail::MapC(x.data(), K, H * W).transpose();
  } else {
    const detail::RowMat cols = detail::im2col(x.data(), cin, H, W, k);
    GW.noalias() = G * cols.transpose();
  }
  return gw;
}

}  // namespace svmar::kernels
