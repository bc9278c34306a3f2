#pragma once

// Dual-domain model
//   f(S, X) = ||P X - Ybar.S||^2 + lambda ||W.(Ybar.S - Y)||^2,  W = 1 - (Tr u D)
// and its unrolled proximal-gradient solver (S-step then X-step in every stage).
// All stage arithmetic goes through the tape so plain inference and training share one code path.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "svmar/core/error.hpp"
#include "svmar/core/tensor.hpp"
#include "svmar/core/tensor_io.hpp"
#include "svmar/nn/autodiff.hpp"
#include "svmar/nn/params.hpp"
#include "svmar/nn/proxnet.hpp"
#include "svmar/projector/fbp.hpp"
#include "svmar/projector/projector.hpp"
#include "svmar/simulate/corruption.hpp"

namespace svmar {

enum class ProxKind { identity, soft_threshold, learned_standard, learned_equivariant };

inline std::string to_string(ProxKind k) {
  switch (k) {
    case ProxKind::identity: return "identity";
    case ProxKind::soft_threshold: return "soft-threshold";
    case ProxKind::learned_standard: return "learned-standard";
    case ProxKind::learned_equivariant: return "learned-equivariant";
  }
  return "?";
}

inline ProxKind parse_prox_kind(const std::string& s) {
  for (ProxKind k : {ProxKind::identity, ProxKind::soft_threshold, ProxKind::learned_standard,
                     ProxKind::learned_equivariant})
    if (to_string(k) == s) return k;
  throw InvalidArgument("unknown prox kind '" + s + "'");
}

inline bool is_learned(ProxKind k) { return k == ProxKind::learned_standard || k == ProxKind::learned_equivariant; }

inline constexpr int kPaperStages = 10;

struct SolverConfig {
  int stages = 5;  // desk default; kPaperStages for full-size runs
  ProxKind prox = ProxKind::identity;
  double tau_s = 1e-3;  // soft-threshold levels (mu * eta)
  double tau_x = 1e-3;
  bool shared_prox = false;
  double lambda0 = 1.0;
  double eta_safety = 0.9;
  std::optional<double> eta1;  // absolute step sizes; default to the safe values
  std::optional<double> eta2;
  double eps_rel = 1e-3;
  int power_iters = 50;
  nn::ProxNetConfig net;

  void validate() const {
    require(stages >= 1, "solver: stages must be >= 1");
    require(tau_s > 0.0 && tau_x > 0.0, "solver: thresholds must be positive");
    require(lambda0 > 0.0 && std::isfinite(lambda0), "solver: lambda must be positive");
    require(eta_safety > 0.0 && eta_safety <= 1.0, "solver: eta safety factor must be in (0,1]");
    require(!eta1 || (*eta1 >= 0.0 && std::isfinite(*eta1)), "solver: eta1 must be non-negative");
    require(!eta2 || (*eta2 >= 0.0 && std::isfinite(*eta2)), "solver: eta2 must be non-negative");
    require(eps_rel > 0.0, "solver: eps_rel must be positive");
  }
};

struct SolverInputs {
  Sinogram y;  // Y_svma
  SinoMask tr;
  SinoMask d;
};

struct NormalizationData {
  Image x_prior;
  Sinogram y_bar;
  double floor = 0.0;
  Sinogram filled;  // linear_interp_fill(Y_svma, Tr, D)
};

struct SolverState {
  int k = 0;
  std::vector<Sinogram> s_bar;  // normalised sinograms, index 0 is the initialisation
  std::vector<Image> x;
};

inline constexpr double kMinNormalizerFloor = 1e-6;

/// X_prior = fbp(LI fill), Ybar = max(P X_prior, eps). eps <= 0 selects eps_rel * mean of P X_prior
/// over trusted entries (never below kMinNormalizerFloor).
inline NormalizationData compute_normalizer(const Sinogram& y, const SinoMask& tr, const SinoMask& d,
                                            const FanBeamGeometry& geom, ImageShape shape, double eps = 0.0,
                                            double eps_rel = 1e-3) {
  NormalizationData n;
  n.filled = linear_interp_fill(y, tr, d);
  n.x_prior = fbp(n.filled, geom, shape);
  Sinogram px = forward_project(n.x_prior, geom);
  if (eps <= 0.0) {
    const SinoMask w = trusted_mask(tr, d);
    double s = 0.0, c = 0.0;
    for (std::size_t i = 0; i < px.size(); ++i)
      if (w[i] != 0.0) {
        s += px[i];
        c += 1.0;
      }
    eps = c > 0.0 ? eps_rel * s / c : 0.0;
    eps = std::max(eps, kMinNormalizerFloor);
  }
  n.floor = eps;
  for (double& v : px.values()) v = std::max(v, eps);
  n.y_bar = std::move(px);
  return n;
}

/// f(S, X) + mu_s ||S||_1 + mu_x ||X||_1.
inline double objective(const FanBeamProjector& proj, const Sinogram& s_bar, const Image& x, const Sinogram& y,
                        const SinoMask& tr, const SinoMask& d, const Sinogram& y_bar, double lambda,
                        double mu_s = 0.0, double mu_x = 0.0) {
  require_shape(s_bar.same_shape(y) && y_bar.same_shape(y) && tr.same_shape(y) && d.same_shape(y),
                "objective: sinogram shape mismatch");
  const Sinogram px = proj.forward(x);
  double f1 = 0.0, f2 = 0.0;
  for (std::size_t i = 0; i < px.size(); ++i) {
    const double ys = y_bar[i] * s_bar[i];
    f1 += (px[i] - ys) * (px[i] - ys);
    if (tr[i] == 0.0 && d[i] == 0.0) f2 += (ys - y[i]) * (ys - y[i]);
  }
  double r = f1 + lambda * f2;
  if (mu_s != 0.0)
    for (double v : s_bar.values()) r += mu_s * std::abs(v);
  if (mu_x != 0.0)
    for (double v : x.values()) r += mu_x * std::abs(v);
  return r;
}

/// Per-sample constants shared by every stage of one solve.
struct StageContext {
  std::shared_ptr<const ad::LinearOperator> P;
  std::shared_ptr<const ad::LinearOperator> Pt;
  std::shared_ptr<const Tensor> y_bar;    // (1, Nb, Np)
  std::shared_ptr<const Tensor> trusted;  // 1 - (Tr u D)
  ad::Var y;                              // constant (1, Nb, Np)
};

/// Pre-prox S update: S - eta1 (Ybar.(Ybar.S - PX) + lambda W.Ybar.(Ybar.S - Y)).
inline ad::Var s_update(const StageContext& c, ad::Var s_prev, ad::Var px_prev, ad::Var eta1, ad::Var lambda) {
  const ad::Var ys = ad::mul_const(s_prev, c.y_bar);
  const ad::Var g1 = ad::mul_const(ad::sub(ys, px_prev), c.y_bar);
  const ad::Var g2 = ad::mul_const(ad::mask_mul(ad::sub(ys, c.y), c.trusted), c.y_bar);
  const ad::Var g = ad::add(g1, ad::mul_scalar(lambda, g2));
  return ad::sub(s_prev, ad::mul_scalar(eta1, g));
}

/// Pre-prox X update: X - eta2 P^T(P X - Ybar.S_new).
inline ad::Var x_update(const StageContext& c, ad::Var x_prev, ad::Var px_prev, ad::Var s_new, ad::Var eta2) {
  const ad::Var r = ad::sub(px_prev, ad::mul_const(s_new, c.y_bar));
  return ad::sub(x_prev, ad::mul_scalar(eta2, ad::linear(r, c.Pt)));
}

struct UnrolledGraph {
  std::vector<ad::Var> s_bar;  // K+1 entries, (1, Nb, Np)
  std::vector<ad::Var> x;      // K+1 entries, (1, H, W)
  ad::Var eta1, eta2, lambda;
};

class UnrolledSolver {
 public:
  UnrolledSolver(FanBeamGeometry geom, ImageShape shape, SolverConfig cfg)
      : proj_(std::make_shared<FanBeamProjector>(std::move(geom), shape)), cfg_(std::move(cfg)) {
    cfg_.validate();
    proj_->precompute();
    opnorm_ = operator_norm_estimate(*proj_, cfg_.power_iters);
    const auto p = proj_;
    const Shape img{1, shape.rows, shape.cols}, sino{1, p->geometry().n_bins, p->geometry().n_views};
    P_ = std::make_shared<ad::LinearOperator>(
        "P",
        [p, img, sino](const Tensor& x) {
          require_shape(x.size() == shape_size(img), "P: input size mismatch");
          Tensor out(sino);
          p->forward(x.data(), out.data());
          return out;
        },
        [p, img, sino](const Tensor& y) {
          require_shape(y.size() == shape_size(sino), "P^T: input size mismatch");
          Tensor out(img);
          p->backward(y.data(), out.data());
          return out;
        });
    Pt_ = std::make_shared<ad::LinearOperator>(P_->transposed());
    if (cfg_.prox == ProxKind::learned_equivariant)
      basis_ = std::make_shared<eq::BasisSet>(eq::make_basis_set(cfg_.net.order, cfg_.net.eq_filter, cfg_.net.group));
  }

  const SolverConfig& config() const noexcept { return cfg_; }
  const FanBeamProjector& projector() const noexcept { return *proj_; }
  const FanBeamGeometry& geometry() const noexcept { return proj_->geometry(); }
  ImageShape image_shape() const noexcept { return proj_->image_shape(); }
  double opnorm() const noexcept { return opnorm_; }
  std::shared_ptr<const ad::LinearOperator> forward_operator() const noexcept { return P_; }

  double safe_eta1(const Sinogram& y_bar) const {
    double m = 0.0;
    for (double v : y_bar.values()) m = std::max(m, v * v);
    return cfg_.eta_safety / (m * (1.0 + cfg_.lambda0));
  }
  double safe_eta2() const { return cfg_.eta_safety / opnorm_; }
  double eta1_base(const Sinogram& y_bar) const { return cfg_.eta1 ? *cfg_.eta1 : safe_eta1(y_bar); }
  double eta2_base() const { return cfg_.eta2 ? *cfg_.eta2 : safe_eta2(); }

  NormalizationData normalize(const SolverInputs& in) const {
    return compute_normalizer(in.y, in.tr, in.d, geometry(), image_shape(), 0.0, cfg_.eps_rel);
  }

  std::string sprox_name(int k) const { return cfg_.shared_prox ? "shared.sprox" : "stage" + std::to_string(k) + ".sprox"; }
  std::string xprox_name(int k) const { return cfg_.shared_prox ? "shared.xprox" : "stage" + std::to_string(k) + ".xprox"; }
  int prox_sets() const { return cfg_.shared_prox ? 1 : cfg_.stages; }

  /// Registers step-size/lambda multipliers (initially 1) and, for learned variants, the prox nets.
  void init_params(nn::ParamStore& store, std::uint64_t seed) const {
    store.add("solver.eta1", Tensor::scalar(1.0));
    store.add("solver.eta2", Tensor::scalar(1.0));
    store.add("solver.lambda", Tensor::scalar(1.0));
    if (!is_learned(cfg_.prox)) return;
    std::mt19937_64 rng(seed);
    for (int k = 1; k <= prox_sets(); ++k) {
      sprox(k).init(store, rng);
      if (cfg_.prox == ProxKind::learned_equivariant)
        eqprox(k).init(store, rng);
      else
        stdprox(xprox_name(k)).init(store, rng);
    }
  }

  /// Trainable scalars of the X-domain prox nets (the part that differs between learned variants).
  std::size_t xprox_param_count() const {
    if (!is_learned(cfg_.prox)) return 0;
    const std::size_t per = cfg_.prox == ProxKind::learned_equivariant ? eqprox(1).param_count()
                                                                       : stdprox(xprox_name(1)).param_count();
    return per * static_cast<std::size_t>(prox_sets());
  }
  std::size_t param_count() const {
    std::size_t n = 3;
    if (is_learned(cfg_.prox))
      n += xprox_param_count() + stdprox(sprox_name(1)).param_count() * static_cast<std::size_t>(prox_sets());
    return n;
  }

  /// Builds all K stages on the tape. store may be null for non-learned prox kinds.
  UnrolledGraph build(ad::Tape& tape, nn::ParamStore* store, const SolverInputs& in, const NormalizationData& norm,
                      bool train) const {
    require(!is_learned(cfg_.prox) || store != nullptr, "solver: learned prox requires parameters");
    check_inputs(in, norm);
    const auto& g = geometry();
    const Shape sshape{1, g.n_bins, g.n_views}, ishape{1, image_shape().rows, image_shape().cols};
    StageContext c;
    c.P = P_;
    c.Pt = Pt_;
    c.y_bar = std::make_shared<const Tensor>(norm.y_bar.to_tensor().reshaped(sshape));
    c.trusted = std::make_shared<const Tensor>(trusted_mask(in.tr, in.d).to_tensor().reshaped(sshape));
    c.y = tape.constant(in.y.to_tensor().reshaped(sshape));

    UnrolledGraph G;
    const double e1 = eta1_base(norm.y_bar), e2 = eta2_base();
    if (store && store->has("solver.eta1")) {
      G.eta1 = ad::scale(tape.param(*store, "solver.eta1"), e1);
      G.eta2 = ad::scale(tape.param(*store, "solver.eta2"), e2);
      G.lambda = ad::scale(tape.param(*store, "solver.lambda"), cfg_.lambda0);
    } else {
      G.eta1 = tape.constant(Tensor::scalar(e1));
      G.eta2 = tape.constant(Tensor::scalar(e2));
      G.lambda = tape.constant(Tensor::scalar(cfg_.lambda0));
    }

    Tensor s0 = norm.filled.to_tensor().reshaped(sshape);
    for (std::size_t i = 0; i < s0.size(); ++i) s0[i] /= (*c.y_bar)[i];
    G.s_bar.push_back(tape.constant(std::move(s0)));
    G.x.push_back(tape.constant(norm.x_prior.to_tensor().reshaped(ishape)));

    for (int k = 1; k <= cfg_.stages; ++k) {
      const ad::Var px = ad::linear(G.x.back(), P_);
      ad::Var s = s_update(c, G.s_bar.back(), px, G.eta1, G.lambda);
      s = apply_sprox(tape, store, k, s, train);
      ad::Var x = x_update(c, G.x.back(), px, s, G.eta2);
      x = apply_xprox(tape, store, k, x, train);
      if (!all_finite(ad::val(s)) || !all_finite(ad::val(x)))
        throw DivergenceError(k, "solver diverged at stage " + std::to_string(k));
      G.s_bar.push_back(s);
      G.x.push_back(x);
    }
    return G;
  }

  /// Plain inference: full history of normalised sinograms and images.
  SolverState run(const SolverInputs& in, nn::ParamStore* store = nullptr) const {
    return run(in, normalize(in), store);
  }
  SolverState run(const SolverInputs& in, const NormalizationData& norm, nn::ParamStore* store = nullptr) const {
    ad::Tape tape(false);
    const UnrolledGraph G = build(tape, store, in, norm, false);
    return to_state(G);
  }

  /// Eval-mode X-domain prox of stage k as a plain image map.
  Image xprox(nn::ParamStore* store, int k, const Image& x) const {
    require(!is_learned(cfg_.prox) || store != nullptr, "solver: learned prox requires parameters");
    require(k >= 1 && k <= cfg_.stages, "solver: stage index out of range");
    ad::Tape tape(false);
    const ad::Var v = tape.constant(x.to_tensor().reshaped({1, x.rows(), x.cols()}));
    return Image::from_tensor(ad::val(apply_xprox(tape, store, k, v, false)).reshaped({x.rows(), x.cols()}));
  }

  SolverState to_state(const UnrolledGraph& G) const {
    SolverState st;
    st.k = cfg_.stages;
    for (const auto& v : G.s_bar) st.s_bar.push_back(Sinogram::from_tensor(ad::val(v).reshaped(sino_shape2())));
    for (const auto& v : G.x) st.x.push_back(Image::from_tensor(ad::val(v).reshaped(img_shape2())));
    return st;
  }

 private:
  Shape sino_shape2() const { return {geometry().n_bins, geometry().n_views}; }
  Shape img_shape2() const { return {image_shape().rows, image_shape().cols}; }

  void check_inputs(const SolverInputs& in, const NormalizationData& norm) const {
    const auto& g = geometry();
    auto ok = [&](const auto& s) { return s.rows() == g.n_bins && s.cols() == g.n_views; };
    require_shape(ok(in.y) && ok(in.tr) && ok(in.d) && ok(norm.y_bar) && ok(norm.filled),
                  "solver: sinogram shape does not match geometry");
    require_shape(shape_of(norm.x_prior) == image_shape(), "solver: prior image shape mismatch");
    require(is_binary(in.tr) && is_binary(in.d), "solver: masks must be binary");
  }

  nn::ProxNetStandard stdprox(const std::string& name) const { return nn::ProxNetStandard(name, cfg_.net); }
  nn::ProxNetStandard sprox(int k) const { return stdprox(sprox_name(k)); }
  nn::ProxNetEquivariant eqprox(int k) const { return nn::ProxNetEquivariant(xprox_name(k), cfg_.net, basis_); }

  ad::Var apply_sprox(ad::Tape& tape, nn::ParamStore* store, int k, ad::Var s, bool train) const {
    switch (cfg_.prox) {
      case ProxKind::identity: return s;
      case ProxKind::soft_threshold: return ad::soft_threshold(s, cfg_.tau_s);
      default: return sprox(k).apply(tape, *store, s, train);
    }
  }
  ad::Var apply_xprox(ad::Tape& tape, nn::ParamStore* store, int k, ad::Var x, bool train) const {
    switch (cfg_.prox) {
      case ProxKind::identity: return x;
      case ProxKind::soft_threshold: return ad::soft_threshold(x, cfg_.tau_x);
      case ProxKind::learned_standard: return stdprox(xprox_name(k)).apply(tape, *store, x, train);
      case ProxKind::learned_equivariant: return eqprox(k).apply(tape, *store, x, train);
    }
    return x;
  }

  std::shared_ptr<FanBeamProjector> proj_;
  SolverConfig cfg_;
  double opnorm_ = 0.0;
  std::shared_ptr<const ad::LinearOperator> P_, Pt_;
  std::shared_ptr<const eq::BasisSet> basis_;
};

/// One S step from (S_prev, X_prev) with a fixed-shape prox (identity or soft-threshold).
inline Sinogram s_step(const UnrolledSolver& solver, const Sinogram& s_prev, const Image& x_prev,
                       const SolverInputs& in, const Sinogram& y_bar, double eta1, double lambda,
                       std::optional<double> tau = std::nullopt) {
  const auto& g = solver.geometry();
  const Shape sshape{1, g.n_bins, g.n_views};
  ad::Tape tape(false);
  StageContext c;
  c.P = solver.forward_operator();
  c.y_bar = std::make_shared<const Tensor>(y_bar.to_tensor().reshaped(sshape));
  c.trusted = std::make_shared<const Tensor>(trusted_mask(in.tr, in.d).to_tensor().reshaped(sshape));
  c.y = tape.constant(in.y.to_tensor().reshaped(sshape));
  const ad::Var x = tape.constant(x_prev.to_tensor().reshaped({1, x_prev.rows(), x_prev.cols()}));
  ad::Var s = s_update(c, tape.constant(s_prev.to_tensor().reshaped(sshape)), ad::linear(x, c.P),
                       tape.constant(Tensor::scalar(eta1)), tape.constant(Tensor::scalar(lambda)));
  if (tau) s = ad::soft_threshold(s, *tau);
  if (!all_finite(ad::val(s))) throw DivergenceError(0, "s_step produced non-finite values");
  return Sinogram::from_tensor(ad::val(s).reshaped({g.n_bins, g.n_views}));
}

/// One X step from X_prev given the already-updated S.
inline Image x_step(const UnrolledSolver& solver, const Image& x_prev, const Sinogram& s_new, const Sinogram& y_bar,
                    double eta2, std::optional<double> tau = std::nullopt) {
  const auto& g = solver.geometry();
  const Shape sshape{1, g.n_bins, g.n_views};
  ad::Tape tape(false);
  StageContext c;
  c.P = solver.forward_operator();
  c.Pt = std::make_shared<const ad::LinearOperator>(c.P->transposed());
  c.y_bar = std::make_shared<const Tensor>(y_bar.to_tensor().reshaped(sshape));
  const ad::Var x = tape.constant(x_prev.to_tensor().reshaped({1, x_prev.rows(), x_prev.cols()}));
  ad::Var xn = x_update(c, x, ad::linear(x, c.P), tape.constant(s_new.to_tensor().reshaped(sshape)),
                        tape.constant(Tensor::scalar(eta2)));
  if (tau) xn = ad::soft_threshold(xn, *tau);
  if (!all_finite(ad::val(xn))) throw DivergenceError(0, "x_step produced non-finite values");
  return Image::from_tensor(ad::val(xn).reshaped({x_prev.rows(), x_prev.cols()}));
}

/// Writes S_k = Ybar.S_k and X_k for k = 1..K as stage_XX_s.ctt / stage_XX_x.ctt.
inline std::size_t dump_stages(const SolverState& st, const Sinogram& y_bar, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create stage dump dir " + dir.string());
  std::size_t n = 0;
  for (int k = 1; k <= st.k; ++k) {
    Sinogram s = st.s_bar[static_cast<std::size_t>(k)];
    for (std::size_t i = 0; i < s.size(); ++i) s[i] *= y_bar[i];
    char buf[32];
    std::snprintf(buf, sizeof buf, "stage_%02d", k);
    io::write_grid(dir / (std::string(buf) + "_s.ctt"), s);
    io::write_grid(dir / (std::string(buf) + "_x.ctt"), st.x[static_cast<std::size_t>(k)]);
    n += 2;
  }
  return n;
}

}  // namespace svmar
