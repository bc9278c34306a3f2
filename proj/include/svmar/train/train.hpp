#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "svmar/core/error.hpp"
#include "svmar/nn/autodiff.hpp"
#include "svmar/nn/params.hpp"
#include "svmar/simulate/dataset.hpp"
#include "svmar/solver/solver.hpp"
#include "svmar/util/hash.hpp"

namespace svmar {

enum class LossNorm { l1, l2 };

struct LossConfig {
  double gamma_final = 1.0;  // weight of stage K
  double gamma_inner = 0.1;  // weight of stages 1..K-1
  double beta = 0.1;         // sinogram-term weight
  LossNorm norm = LossNorm::l1;

  void validate() const {
    require(gamma_final > 0.0, "loss: final-stage weight must be positive");
    require(gamma_inner >= 0.0, "loss: stage weights must be non-negative");
    require(beta >= 0.0, "loss: beta must be non-negative");
  }
  double gamma(int k, int K) const { return k == K ? gamma_final : gamma_inner; }
};

struct TrainConfig {
  int epochs = 1;
  long max_steps = 0;  // 0: run every epoch to completion
  double lr = 2e-4;
  double lr_decay = 0.5;
  int decay_every = 40;  // epochs
  double beta1 = 0.5;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch = 1;
  std::uint64_t seed = 0;

  void validate() const {
    require(lr > 0.0, "train: lr must be positive");
    require(epochs >= 0, "train: epochs must be >= 0");
    require(max_steps >= 0, "train: max_steps must be >= 0");
    require(decay_every >= 1 && lr_decay > 0.0, "train: bad decay schedule");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "train: Adam betas must be in [0,1)");
    require(batch == 1, "train: only batch size 1 is supported");
  }
  double lr_at_epoch(int epoch) const { return lr * std::pow(lr_decay, epoch / decay_every); }
};

namespace detail {
inline ad::Var norm_term(ad::Var diff, LossNorm n) {
  const double inv = 1.0 / static_cast<double>(ad::val(diff).size());
  return ad::scale(n == LossNorm::l1 ? ad::sum_abs(diff) : ad::sum_squares(diff), inv);
}
}  // namespace detail

/// sum_k g_k m(X_k - X_gt) + beta sum_k g_k m(Ybar.S_k - Y_gt) over stages k = 1..K, where m is the
/// per-element mean absolute (L1) or squared (L2) error.
inline ad::Var loss(ad::Tape& tape, const std::vector<ad::Var>& s_bar, const std::vector<ad::Var>& x,
                    const Image& x_gt, const Sinogram& y_gt, const Sinogram& y_bar, const LossConfig& cfg) {
  cfg.validate();
  require(s_bar.size() == x.size() && x.size() >= 2, "loss: history must hold at least one stage");
  const int K = static_cast<int>(x.size()) - 1;
  // Copies: adding constants below may reallocate the tape's node storage.
  const Shape xs = ad::val(x[0]).shape(), ss = ad::val(s_bar[0]).shape();
  require_shape(shape_size(xs) == x_gt.size(), "loss: image shape mismatch");
  require_shape(shape_size(ss) == y_gt.size() && y_bar.size() == y_gt.size(), "loss: sinogram shape mismatch");
  const ad::Var xg = tape.constant(x_gt.to_tensor().reshaped(xs));
  const ad::Var yg = tape.constant(y_gt.to_tensor().reshaped(ss));
  const auto yb = std::make_shared<const Tensor>(y_bar.to_tensor().reshaped(ss));
  ad::Var total = tape.constant(Tensor::scalar(0.0));
  for (int k = 1; k <= K; ++k) {
    const double g = cfg.gamma(k, K);
    const ad::Var lx = detail::norm_term(ad::sub(x[static_cast<std::size_t>(k)], xg), cfg.norm);
    total = ad::add(total, ad::scale(lx, g));
    if (cfg.beta > 0.0) {
      const ad::Var ys = ad::mul_const(s_bar[static_cast<std::size_t>(k)], yb);
      const ad::Var ls = detail::norm_term(ad::sub(ys, yg), cfg.norm);
      total = ad::add(total, ad::scale(ls, g * cfg.beta));
    }
  }
  return total;
}

/// Loss value of a finished solve.
inline double loss_value(const SolverState& st, const Image& x_gt, const Sinogram& y_gt, const Sinogram& y_bar,
                         const LossConfig& cfg) {
  ad::Tape tape(false);
  std::vector<ad::Var> s, x;
  for (const auto& v : st.s_bar) s.push_back(tape.constant(v.to_tensor()));
  for (const auto& v : st.x) x.push_back(tape.constant(v.to_tensor()));
  return ad::val(loss(tape, s, x, x_gt, y_gt, y_bar, cfg))[0];
}

/// One Adam update with bias correction; t is the 1-based step count.
inline void adam_step(nn::ParamStore& store, double lr, const TrainConfig& cfg, long t) {
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (auto& p : store.params())
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      p.adam_m[i] = cfg.beta1 * p.adam_m[i] + (1.0 - cfg.beta1) * g;
      p.adam_v[i] = cfg.beta2 * p.adam_v[i] + (1.0 - cfg.beta2) * g * g;
      p.value[i] -= lr * (p.adam_m[i] / c1) / (std::sqrt(p.adam_v[i] / c2) + cfg.adam_eps);
    }
}

/// Fisher-Yates with a fixed 64-bit generator, identical on every platform.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
  return idx;
}

struct LossPoint {
  long step;
  double loss;
};

struct TrainResult {
  nn::ParamStore params;
  std::vector<LossPoint> curve;
  long steps = 0;
};

inline SolverInputs inputs_of(const SampleRecord& r) { return SolverInputs{r.y_svma, r.tr, r.d}; }

/// Adam over unrolled graphs, one record per step in a seeded order.
inline TrainResult train(const Dataset& ds, const UnrolledSolver& solver, const TrainConfig& tcfg,
                         const LossConfig& lcfg, std::uint64_t init_seed) {
  tcfg.validate();
  lcfg.validate();
  require(!ds.records.empty(), "train: empty dataset");
  require_shape(solver.image_shape() == ds.shape, "train: dataset image shape does not match solver");
  require(json_hash(nlohmann::json(solver.geometry())) == ds.geometry_hash,
          "train: dataset geometry does not match solver geometry");
  TrainResult res;
  solver.init_params(res.params, init_seed);
  res.params.quantize();

  std::vector<NormalizationData> norms;
  norms.reserve(ds.records.size());
  for (const auto& r : ds.records) norms.push_back(solver.normalize(inputs_of(r)));

  long t = 0;
  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    const double lr = tcfg.lr_at_epoch(epoch);
    for (std::size_t i : epoch_order(ds.records.size(), tcfg.seed, epoch)) {
      if (tcfg.max_steps > 0 && t >= tcfg.max_steps) break;
      const SampleRecord& r = ds.records[i];
      ad::Tape tape(true);
      UnrolledGraph G;
      try {
        G = solver.build(tape, &res.params, inputs_of(r), norms[i], true);
      } catch (const DivergenceError& e) {
        throw TrainingError(t + 1, e.what());
      }
      const ad::Var L = loss(tape, G.s_bar, G.x, r.x_gt, r.y_gt, norms[i].y_bar, lcfg);
      const double lv = ad::val(L)[0];
      if (!std::isfinite(lv)) throw TrainingError(t + 1, "non-finite loss");
      tape.backward(L);
      res.params.zero_grad();
      tape.collect_param_grads(res.params);
      ++t;
      adam_step(res.params, lr, tcfg, t);
      res.curve.push_back({t, lv});
    }
    if (tcfg.max_steps > 0 && t >= tcfg.max_steps) break;
  }
  res.steps = t;
  return res;
}

inline void write_loss_curve(const std::vector<LossPoint>& curve, const std::filesystem::path& file) {
  std::ofstream f(file, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write loss curve " + file.string());
  f << "step,loss\n";
  char buf[64];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof buf, "%ld,%.17g\n", p.step, p.loss);
    f << buf;
  }
}

}  // namespace svmar
