#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "svmar/core/error.hpp"
#include "svmar/core/tensor.hpp"
#include "svmar/projector/projector.hpp"

namespace svmar {

/// Surrogate metal corruption: quadratic beam hardening plus Poisson noise, both confined to the
/// metal trace.
struct CorruptionParams {
  double alpha = 0.2;     // beam hardening, y <- y - alpha * y^2 / max(Y)
  double i0 = 1e5;        // incident photon count; 0 disables noise
  double mu_metal = 2.0;  // attenuation of inserted metal
  std::uint64_t seed = 0;

  void validate() const {
    require(alpha >= 0.0 && alpha < 1.0, "corruption: alpha must be in [0,1)");
    require(i0 >= 0.0 && std::isfinite(i0), "corruption: I0 must be >= 0");
    require(std::isfinite(mu_metal) && mu_metal > 0.0, "corruption: mu_metal must be positive");
  }
  bool operator==(const CorruptionParams&) const = default;
};

/// D for uniform view sampling: views with index % rate == 0 are kept (0), the rest are missing (1).
inline SinoMask sparse_mask(std::size_t n_bins, std::size_t n_views, std::size_t rate) {
  require(rate >= 1, "rate must be positive");
  require(n_views % rate == 0, "rate must divide views");
  SinoMask d(n_bins, n_views);
  for (std::size_t b = 0; b < n_bins; ++b)
    for (std::size_t v = 0; v < n_views; ++v) d(b, v) = (v % rate == 0) ? 0.0 : 1.0;
  return d;
}

inline SinoMask mask_union(const SinoMask& a, const SinoMask& b) {
  require_shape(a.same_shape(b), "mask union: shape mismatch");
  SinoMask u(a.rows(), a.cols());
  for (std::size_t k = 0; k < u.size(); ++k) u[k] = (a[k] != 0.0 || b[k] != 0.0) ? 1.0 : 0.0;
  return u;
}

/// 1 - (Tr u D): the trusted-entry weight of the fidelity term.
inline SinoMask trusted_mask(const SinoMask& tr, const SinoMask& d) {
  SinoMask w = mask_union(tr, d);
  for (double& v : w.values()) v = 1.0 - v;
  return w;
}

/// Returns (corrupted sinogram, metal trace). Entries outside the trace are copied unchanged.
inline std::pair<Sinogram, SinoMask> corrupt_sinogram(const Sinogram& y_clean, const ImageMask& metal,
                                                      const FanBeamGeometry& geom, const CorruptionParams& params) {
  params.validate();
  require_shape(y_clean.rows() == geom.n_bins && y_clean.cols() == geom.n_views,
                "corrupt_sinogram: sinogram shape mismatch");
  SinoMask tr = metal_trace(metal, geom);
  Sinogram y = y_clean;
  const double ymax = *std::max_element(y_clean.vec().begin(), y_clean.vec().end());
  if (params.alpha > 0.0 && ymax > 0.0)
    for (std::size_t k = 0; k < y.size(); ++k)
      if (tr[k] == 1.0) y[k] -= params.alpha * y[k] * y[k] / ymax;
  if (params.i0 > 0.0) {
    std::mt19937_64 rng(params.seed);
    for (std::size_t k = 0; k < y.size(); ++k) {
      if (tr[k] != 1.0) continue;
      const double mean = params.i0 * std::exp(-y[k]);
      std::poisson_distribution<long long> pd(mean);
      const double counts = std::max(1.0, static_cast<double>(pd(rng)));
      y[k] = -std::log(counts / params.i0);
    }
  }
  return {std::move(y), std::move(tr)};
}

/// Zero every entry flagged as missing by D.
inline Sinogram apply_view_removal(const Sinogram& y, const SinoMask& d) {
  require_shape(y.same_shape(d), "apply_view_removal: shape mismatch");
  Sinogram out = y;
  for (std::size_t k = 0; k < out.size(); ++k)
    if (d[k] != 0.0) out[k] = 0.0;
  return out;
}

namespace detail {

// Linear interpolation over positions [0, n) where known[i] holds; unknown runs take the line
// between their neighbouring anchors (circularly if `circular`, else clamped to the nearest).
inline void interp_line(double* vals, std::size_t stride, std::size_t n, const std::vector<char>& known,
                        const std::vector<char>& target, bool circular) {
  std::vector<long> anchors;
  for (std::size_t i = 0; i < n; ++i)
    if (known[i]) anchors.push_back(static_cast<long>(i));
  if (anchors.empty()) throw InvalidArgument("linear_interp_fill: no trusted entry to interpolate from");
  const long len = static_cast<long>(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!target[i] || known[i]) continue;
    const long pos = static_cast<long>(i);
    const auto up = std::upper_bound(anchors.begin(), anchors.end(), pos);
    long lo, hi;
    if (circular) {
      hi = up == anchors.end() ? anchors.front() + len : *up;
      lo = up == anchors.begin() ? anchors.back() - len : *(up - 1);
    } else {
      if (up == anchors.end()) {
        vals[i * stride] = vals[static_cast<std::size_t>(anchors.back()) * stride];
        continue;
      }
      if (up == anchors.begin()) {
        vals[i * stride] = vals[static_cast<std::size_t>(anchors.front()) * stride];
        continue;
      }
      hi = *up;
      lo = *(up - 1);
    }
    const double vlo = vals[static_cast<std::size_t>((lo % len + len) % len) * stride];
    const double vhi = vals[static_cast<std::size_t>((hi % len + len) % len) * stride];
    if (hi == lo) {
      vals[i * stride] = vlo;
      continue;
    }
    const double t = static_cast<double>(pos - lo) / static_cast<double>(hi - lo);
    vals[i * stride] = vlo + t * (vhi - vlo);
  }
}

}  // namespace detail

/// Prior-sinogram inpainting. Missing views (D) are filled along the view axis, circularly, from
/// trusted entries of the same bin row; then metal-trace entries (Tr) are filled along the bin axis
/// within each view from its non-trace entries. Trusted entries are never modified, so the map is
/// idempotent.
inline Sinogram linear_interp_fill(const Sinogram& y, const SinoMask& tr, const SinoMask& d) {
  require_shape(y.same_shape(tr) && y.same_shape(d), "linear_interp_fill: shape mismatch");
  const std::size_t nb = y.rows(), np = y.cols();
  Sinogram out = y;

  std::vector<char> known(np), target(np);
  for (std::size_t b = 0; b < nb; ++b) {
    bool any_target = false;
    for (std::size_t v = 0; v < np; ++v) {
      known[v] = tr(b, v) == 0.0 && d(b, v) == 0.0;
      target[v] = d(b, v) != 0.0;
      any_target = any_target || target[v];
    }
    if (std::none_of(known.begin(), known.end(), [](char c) { return c != 0; }))
      throw InvalidArgument("linear_interp_fill: detector row " + std::to_string(b) + " has no trusted entry");
    if (any_target) detail::interp_line(out.data() + b * np, 1, np, known, target, true);
  }

  std::vector<char> kb(nb), tb(nb);
  for (std::size_t v = 0; v < np; ++v) {
    bool any_target = false;
    for (std::size_t b = 0; b < nb; ++b) {
      kb[b] = tr(b, v) == 0.0;
      tb[b] = tr(b, v) != 0.0;
      any_target = any_target || tb[b];
    }
    if (any_target) detail::interp_line(out.data() + v, np, nb, kb, tb, false);
  }
  return out;
}

}  // namespace svmar
