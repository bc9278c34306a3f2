#pragma once

// Invariant suites shared by the `check` subcommand and the test binaries.

#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "svmar/core/phantom.hpp"
#include "svmar/core/rotate.hpp"
#include "svmar/eq/eqconv.hpp"
#include "svmar/nn/autodiff.hpp"
#include "svmar/nn/proxnet.hpp"
#include "svmar/projector/projector.hpp"
#include "svmar/simulate/dataset.hpp"
#include "svmar/solver/solver.hpp"
#include "svmar/train/train.hpp"

namespace svmar::checks {

struct CheckResult {
  std::string name;
  double value = 0.0;
  double bound = 0.0;
  bool passed = false;
};

inline CheckResult at_most(std::string name, double value, double bound) {
  return {std::move(name), value, bound, std::isfinite(value) && value <= bound};
}

inline std::string format(const CheckResult& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "[%s] %s: %.3e (bound %.3e)", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.value,
                r.bound);
  return buf;
}

inline bool all_passed(const std::vector<CheckResult>& rs) {
  for (const auto& r : rs)
    if (!r.passed) return false;
  return true;
}

/// |<P x, y> - <x, P^T y>| / max(|<P x, y>|, |<x, P^T y>|) for random x, y.
template <class Rng>
double adjoint_mismatch(const FanBeamProjector& proj, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  const auto& g = proj.geometry();
  Image x(proj.image_shape().rows, proj.image_shape().cols);
  Sinogram y(g.n_bins, g.n_views);
  for (double& v : x.values()) v = n(rng);
  for (double& v : y.values()) v = n(rng);
  const double a = dot(proj.forward(x), y), b = dot(x, proj.backward(y));
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

inline CheckResult adjoint_suite(std::size_t size = 64, std::size_t views = 128, int pairs = 20,
                                 std::uint64_t seed = 0, double bound = 1e-10) {
  const FanBeamProjector proj(default_geometry(size, views), {size, size});
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int i = 0; i < pairs; ++i) worst = std::max(worst, adjoint_mismatch(proj, rng));
  return at_most("adjoint mismatch (" + std::to_string(pairs) + " pairs)", worst, bound);
}

/// Eval-mode prox net as an image map.
template <class Net>
eq::ImageMap prox_map(const Net& net, nn::ParamStore& store) {
  return [&net, &store](const Image& in) {
    ad::Tape tape(false);
    const ad::Var x = tape.constant(in.to_tensor().reshaped({1, in.rows(), in.cols()}));
    return Image::from_tensor(ad::val(net.apply(tape, store, x, false)));
  };
}

/// Smooth test input: a random phantom times the inscribed-disk window.
inline Image windowed_input(std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Image x = render_phantom(random_phantom(rng), size, size);
  const Image w = disk_window(size, size, 1.0);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] *= w[i];
  return x;
}

/// Gives the zero-initialised exit convs random weights so the residual branch is non-trivial.
inline void randomize(nn::ParamStore& store, std::uint64_t seed, double scale = 0.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& p : store.params())
    if (p.name.find(".exit.") != std::string::npos)
      for (double& v : p.value.values()) v = u(rng);
}

/// Disk-windowed centred Gaussian blob with standard deviation size / 10.
inline Image smooth_blob(std::size_t size) {
  Image x = disk_window(size, size, 1.0);
  const double c = 0.5 * static_cast<double>(size - 1), sig = 0.1 * static_cast<double>(size);
  for (std::size_t r = 0; r < size; ++r)
    for (std::size_t q = 0; q < size; ++q) {
      const double dr = static_cast<double>(r) - c, dq = static_cast<double>(q) - c;
      x(r, q) *= std::exp(-(dr * dr + dq * dq) / (2.0 * sig * sig));
    }
  return x;
}

/// Equivariance of a randomly initialised equivariant prox net on the cyclic group of order `group`:
/// exact grid angles on a windowed phantom, 45 degrees (p8) on a smooth blob.
inline std::vector<CheckResult> equivariance_suite(int group, std::size_t size = 64, std::uint64_t seed = 0) {
  nn::ProxNetConfig cfg;
  cfg.channels = static_cast<std::size_t>(2 * group);
  cfg.group = group;
  cfg.blocks = 2;
  const nn::ProxNetEquivariant net("check", cfg);
  nn::ParamStore store;
  std::mt19937_64 rng(seed);
  net.init(store, rng);
  randomize(store, seed + 1);
  const auto map = prox_map(net, store);
  const Image x = windowed_input(size, seed + 2);
  std::vector<CheckResult> out;
  const std::string tag = "p" + std::to_string(group);
  for (int deg = 90; deg < 360; deg += 90) {
    if ((deg * group) % 360 != 0) continue;
    out.push_back(at_most(tag + " equivariance at " + std::to_string(deg) + " deg",
                          eq::equivariance_error(map, x, deg * std::numbers::pi / 180.0), 1e-5));
  }
  if (group % 8 == 0)
    out.push_back(at_most(tag + " equivariance at 45 deg (smooth blob)",
                          eq::equivariance_error(map, smooth_blob(size), std::numbers::pi / 4), 0.05));
  return out;
}

/// Per-stage equivariance errors of the X-domain prox nets of trained solvers.
struct TrainedEquivariance {
  std::vector<double> eq_grid;  // worst of 90/180/270 deg, equivariant net, per stage
  std::vector<double> eq_45;    // equivariant net at 45 deg, per stage
  std::vector<double> std_45;   // standard net at 45 deg, per stage
  double mean_eq_45() const { return mean(eq_45); }
  double mean_std_45() const { return mean(std_45); }

 private:
  static double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  }
};

inline TrainedEquivariance trained_equivariance(const UnrolledSolver& eq_solver, nn::ParamStore& eq_store,
                                                const UnrolledSolver& std_solver, nn::ParamStore& std_store,
                                                std::uint64_t seed = 0) {
  require(eq_solver.config().prox == ProxKind::learned_equivariant &&
              std_solver.config().prox == ProxKind::learned_standard,
          "trained_equivariance: expects an equivariant and a standard solver");
  const std::size_t n = eq_solver.image_shape().rows;
  const Image phantom = windowed_input(n, seed), blob = smooth_blob(n);
  TrainedEquivariance r;
  for (int k = 1; k <= eq_solver.config().stages; ++k) {
    const eq::ImageMap me = [&](const Image& x) { return eq_solver.xprox(&eq_store, k, x); };
    const eq::ImageMap ms = [&](const Image& x) { return std_solver.xprox(&std_store, k, x); };
    double grid = 0.0;
    for (int q = 1; q < 4; ++q)
      grid = std::max(grid, eq::equivariance_error(me, phantom, q * std::numbers::pi / 2));
    r.eq_grid.push_back(grid);
    r.eq_45.push_back(eq::equivariance_error(me, blob, std::numbers::pi / 4));
    r.std_45.push_back(eq::equivariance_error(ms, blob, std::numbers::pi / 4));
  }
  return r;
}

struct GradientCheck {
  double max_rel = 0.0;
  std::size_t count = 0;
  std::string worst;
  std::size_t kinks = 0;  // parameters whose +-h perturbation flips a ReLU
};

/// Hash of which ReLU outputs are zero across the whole tape.
inline std::uint64_t relu_pattern(const ad::Tape& tape) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t id = 0; id < tape.size(); ++id) {
    if (tape.op_at(id) != ad::Op::relu) continue;
    for (double x : tape.value_at(id).values()) h = (h ^ (x > 0.0 ? 1u : 2u)) * 0x100000001b3ull;
  }
  return h;
}

/// |fd - an| / max(|fd|, |an|, floor) with central differences on every trainable scalar. When the
/// +-h probe changes the ReLU activation pattern, h shrinks tenfold (down to h_min) so the difference is
/// taken inside one linear region; probes that still straddle a kink are counted in `kinks`.
inline GradientCheck gradient_check(const UnrolledSolver& solver, nn::ParamStore& store, const SolverInputs& in,
                                    const NormalizationData& norm, const Image& x_gt, const Sinogram& y_gt,
                                    const LossConfig& lcfg, double h = 1e-5, double floor = 1e-8,
                                    double h_min = 1e-8) {
  std::uint64_t pattern = 0;
  auto eval = [&]() {
    ad::Tape tape(false);
    const UnrolledGraph G = solver.build(tape, &store, in, norm, true);
    const double l = ad::val(loss(tape, G.s_bar, G.x, x_gt, y_gt, norm.y_bar, lcfg))[0];
    pattern = relu_pattern(tape);
    return l;
  };
  ad::Tape tape(true);
  const UnrolledGraph G = solver.build(tape, &store, in, norm, true);
  tape.backward(loss(tape, G.s_bar, G.x, x_gt, y_gt, norm.y_bar, lcfg));
  const std::uint64_t base = relu_pattern(tape);
  store.zero_grad();
  tape.collect_param_grads(store);
  GradientCheck res;
  for (auto& p : store.params())
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double v0 = p.value[i];
      double fd = 0.0;
      bool kink = true;
      for (double step = h; kink && step >= h_min * 0.999; step /= 10.0) {
        p.value[i] = v0 + step;
        const double fp = eval();
        kink = pattern != base;
        p.value[i] = v0 - step;
        const double fm = eval();
        kink = kink || pattern != base;
        fd = (fp - fm) / (2.0 * step);
      }
      p.value[i] = v0;
      if (kink) ++res.kinks;
      const double an = p.grad[i];
      const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), floor});
      ++res.count;
      if (rel > res.max_rel) {
        res.max_rel = rel;
        res.worst = p.name + "[" + std::to_string(i) + "]";
      }
    }
  return res;
}

/// Small corrupted records generated in memory (no files).
inline std::vector<SampleRecord> make_records(std::size_t n, std::size_t size, std::size_t views, std::size_t rate,
                                              std::uint64_t seed) {
  const FanBeamGeometry g = default_geometry(size, views);
  const auto phantoms = random_phantoms(n, seed);
  std::vector<double> px;
  for (std::size_t i = 0; i < n; ++i)
    px.push_back(std::max(1.0, static_cast<double>(size * size) * (0.002 + 0.008 * (i % 3))));
  const auto metals = random_metals(px, size, seed + 1);
  CorruptionParams cp;
  std::vector<SampleRecord> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(synthesize_record(phantoms[i], metals[i], g, {size, size}, cp, rate, seed + 100 + i));
  return out;
}

/// Largest stage-to-stage objective increase of an identity-prox solve with safe step sizes.
inline double max_objective_increase(const UnrolledSolver& solver, const SampleRecord& r) {
  const SolverInputs in{r.y_svma, r.tr, r.d};
  const NormalizationData norm = solver.normalize(in);
  const SolverState st = solver.run(in, norm);
  double worst = -std::numeric_limits<double>::infinity(), prev = 0.0;
  for (std::size_t k = 0; k < st.x.size(); ++k) {
    const double f = objective(solver.projector(), st.s_bar[k], st.x[k], r.y_svma, r.tr, r.d, norm.y_bar,
                               solver.config().lambda0);
    if (k > 0) worst = std::max(worst, f - prev);
    prev = f;
  }
  return worst;
}

inline std::vector<CheckResult> descent_suite(std::size_t fixtures = 5, int stages = 10, double tol = 1e-9,
                                              std::uint64_t seed = 0) {
  const auto recs = make_records(fixtures, 64, 128, 4, seed);
  SolverConfig cfg;
  cfg.stages = stages;
  cfg.prox = ProxKind::identity;
  const UnrolledSolver solver(default_geometry(64, 128), {64, 64}, cfg);
  std::vector<CheckResult> out;
  for (std::size_t i = 0; i < recs.size(); ++i)
    out.push_back(at_most("objective increase, fixture " + std::to_string(i), max_objective_increase(solver, recs[i]),
                          tol));
  return out;
}

/// Entries of Y_svma under Tr u D are replaced by noise after the normalizer is fixed; counts stage
/// outputs (S_k, X_k over all k) that differ from the unperturbed solve.
inline std::size_t masked_independence(ProxKind kind, std::uint64_t seed = 0) {
  const auto recs = make_records(2, 32, 64, 4, seed);
  SolverConfig cfg;
  cfg.stages = 3;
  cfg.prox = kind;
  cfg.net.channels = 8;
  cfg.net.blocks = 2;
  const UnrolledSolver solver(default_geometry(32, 64), {32, 32}, cfg);
  nn::ParamStore store;
  if (is_learned(kind)) {
    solver.init_params(store, seed);
    randomize(store, seed + 1);
  }
  std::mt19937_64 rng(seed + 2);
  std::normal_distribution<double> noise(0.0, 10.0);
  std::size_t diff = 0;
  for (const auto& r : recs) {
    const SolverInputs in{r.y_svma, r.tr, r.d};
    const NormalizationData norm = solver.normalize(in);
    SolverInputs bad = in;
    const SinoMask w = trusted_mask(r.tr, r.d);
    for (std::size_t i = 0; i < bad.y.size(); ++i)
      if (w[i] == 0.0) bad.y[i] = noise(rng);
    nn::ParamStore* ps = is_learned(kind) ? &store : nullptr;
    const SolverState a = solver.run(in, norm, ps), b = solver.run(bad, norm, ps);
    for (std::size_t k = 0; k < a.x.size(); ++k) {
      for (std::size_t i = 0; i < a.x[k].size(); ++i) diff += a.x[k][i] != b.x[k][i];
      for (std::size_t i = 0; i < a.s_bar[k].size(); ++i) diff += a.s_bar[k][i] != b.s_bar[k][i];
    }
  }
  return diff;
}

/// FD gradient check of a K = 2 unrolled graph at 16 x 16 for one learned prox kind.
inline GradientCheck gradient_suite_raw(ProxKind kind, std::uint64_t seed = 0) {
  const auto recs = make_records(1, 16, 32, 2, seed);
  const SampleRecord& r = recs[0];
  SolverConfig cfg;
  cfg.stages = 2;
  cfg.prox = kind;
  cfg.net.channels = 8;
  cfg.net.blocks = 2;
  const UnrolledSolver solver(default_geometry(16, 32), {16, 16}, cfg);
  nn::ParamStore store;
  solver.init_params(store, seed);
  randomize(store, seed + 1, 0.1);
  const SolverInputs in{r.y_svma, r.tr, r.d};
  const NormalizationData norm = solver.normalize(in);
  LossConfig lc;
  lc.norm = LossNorm::l2;
  return gradient_check(solver, store, in, norm, r.x_gt, r.y_gt, lc);
}

inline CheckResult gradient_suite(ProxKind kind, std::uint64_t seed = 0) {
  const GradientCheck g = gradient_suite_raw(kind, seed);
  return at_most("FD gradient " + to_string(kind) + " (" + std::to_string(g.count) + " params, " +
                     std::to_string(g.kinks) + " at kinks, worst " + g.worst + ")",
                 g.max_rel, 1e-4);
}

}  // namespace svmar::checks
