#include <gtest/gtest.h>

#include "svmar/checks.hpp"
#include "svmar/nn/autodiff.hpp"
#include "svmar/nn/params.hpp"
#include "svmar/nn/proxnet.hpp"
#include "svmar/projector/projector.hpp"
#include "support.hpp"

using namespace svmar;
using fixtures::fd_max_rel;
using fixtures::random_tensor;

namespace {

/// Scalar readout sum((w .* x)^2) with fixed random weights.
ad::Var readout(ad::Var x, std::uint64_t seed = 99) {
  const Tensor& v = ad::val(x);
  auto w = std::make_shared<const Tensor>(random_tensor(v.shape(), seed, 0.5, 1.5));
  return ad::sum_squares(ad::mul_const(x, w));
}

/// Values bounded away from zero, so relu / soft-threshold / |.| kinks are not straddled.
Tensor away_from_zero(Shape s, std::uint64_t seed, double gap = 0.05) {
  Tensor t = random_tensor(std::move(s), seed);
  for (double& v : t.values()) v += v >= 0.0 ? gap : -gap;
  return t;
}

}  // namespace

TEST(Autodiff, ReluDerivative) {
  ad::Tape tape;
  const ad::Var x = tape.input(Tensor(Shape{2}, std::vector<double>{2.0, -2.0}));
  tape.backward(ad::sum_abs(ad::relu(x)));
  const Tensor g = tape.grad(x);
  EXPECT_EQ(g[0], 1.0);
  EXPECT_EQ(g[1], 0.0);
}

TEST(Autodiff, LinearFunctionalGradientIsAdjoint) {
  const FanBeamGeometry geom = default_geometry(16, 24);
  auto proj = std::make_shared<FanBeamProjector>(geom, ImageShape{16, 16});
  auto P = std::make_shared<const ad::LinearOperator>(
      "P",
      [proj, geom](const Tensor& x) {
        Tensor out(Shape{geom.n_bins, geom.n_views});
        proj->forward(x.data(), out.data());
        return out;
      },
      [proj](const Tensor& y) {
        Tensor out(Shape{16, 16});
        proj->backward(y.data(), out.data());
        return out;
      });
  const Tensor y = random_tensor({geom.n_bins, geom.n_views}, 3);
  ad::Tape tape;
  const ad::Var x = tape.input(random_tensor({16, 16}, 4));
  const ad::Var px = ad::linear(x, P);
  tape.backward(ad::scale(ad::sum_squares(ad::add(px, tape.constant(y))), 0.5));
  // d/dx 0.5||Px + y||^2 = P^T (Px + y); subtract the P^T P x part to isolate P^T y.
  Tensor ptp = P->adjoint(ad::val(px));
  const Tensor g = tape.grad(x), pty = P->adjoint(y);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i] - ptp[i], pty[i], 1e-12);

  ad::Tape t2;
  const ad::Var x2 = t2.input(random_tensor({16, 16}, 5));
  const ad::Var ip = ad::sum_squares(ad::linear(x2, P));
  t2.backward(ip);
  const Tensor ref = P->adjoint(P->apply(ad::val(x2)));
  const Tensor g2 = t2.grad(x2);
  for (std::size_t i = 0; i < g2.size(); ++i) EXPECT_NEAR(g2[i], 2.0 * ref[i], 1e-10 * (1.0 + std::abs(ref[i])));
}

TEST(Autodiff, ElementwiseOpsMatchFiniteDifferences) {
  const Shape s{3, 4, 5};
  auto mask = std::make_shared<const Tensor>([&] {
    Tensor m = random_tensor(s, 7, 0.0, 1.0);
    for (double& v : m.values()) v = v > 0.5 ? 1.0 : 0.0;
    return m;
  }());
  auto c = std::make_shared<const Tensor>(random_tensor(s, 8));
  const auto build = [&](ad::Tape& t, const std::vector<ad::Var>& v) {
    ad::Var y = ad::add(v[0], ad::scale(v[1], -0.7));
    y = ad::sub(y, ad::mul_scalar(v[2], v[1]));
    y = ad::mask_mul(y, mask);
    y = ad::mul_const(y, c);
    (void)t;
    return readout(ad::reshape(y, {12, 5}));
  };
  EXPECT_LE(fd_max_rel({random_tensor(s, 1), random_tensor(s, 2), Tensor::scalar(0.4)}, build), 1e-6);
}

TEST(Autodiff, NonSmoothOpsAwayFromKinks) {
  const Shape s{2, 6, 6};
  const auto relu = [&](ad::Tape&, const std::vector<ad::Var>& v) { return readout(ad::relu(v[0])); };
  EXPECT_LE(fd_max_rel({away_from_zero(s, 1)}, relu), 1e-6);
  const auto soft = [&](ad::Tape&, const std::vector<ad::Var>& v) { return readout(ad::soft_threshold(v[0], 0.1)); };
  Tensor x = random_tensor(s, 2);
  for (double& v : x.values()) v = v >= 0.0 ? v + 0.15 : v - 0.15;  // |x| > tau + gap
  EXPECT_LE(fd_max_rel({x}, soft), 1e-6);
  const auto l1 = [&](ad::Tape&, const std::vector<ad::Var>& v) { return ad::sum_abs(v[0]); };
  EXPECT_LE(fd_max_rel({away_from_zero(s, 3)}, l1), 1e-6);
}

TEST(Autodiff, ConvMatchesFiniteDifferences) {
  const auto conv = [&](ad::Tape&, const std::vector<ad::Var>& v) { return readout(ad::conv2d(v[0], v[1])); };
  EXPECT_LE(fd_max_rel({random_tensor({2, 7, 6}, 1), random_tensor({3, 2, 3, 3}, 2)}, conv), 1e-6);
  EXPECT_LE(fd_max_rel({random_tensor({3, 5, 5}, 3), random_tensor({2, 3, 1, 1}, 4)}, conv), 1e-6);
}

TEST(Autodiff, BatchNormMatchesFiniteDifferences) {
  for (bool train : {true, false}) {
    Tensor rm = random_tensor({3}, 5, -0.2, 0.2), rv = random_tensor({3}, 6, 0.5, 1.5);
    const auto bn = [&](ad::Tape&, const std::vector<ad::Var>& v) {
      ad::BatchNormOptions o;
      o.train = train;
      o.running_mean = &rm;
      o.running_var = &rv;
      return readout(ad::batch_norm(v[0], v[1], v[2], o));
    };
    const Tensor rm0 = rm, rv0 = rv;
    const double err = fd_max_rel(
        {random_tensor({3, 2, 4, 4}, 7), random_tensor({3}, 8, 0.5, 1.5), random_tensor({3}, 9)}, [&](auto& t, auto& v) {
          rm = rm0;
          rv = rv0;
          return bn(t, v);
        });
    EXPECT_LE(err, 1e-6) << train;
  }
}

TEST(Autodiff, BatchNormEvalIsAffine) {
  const Tensor rm = random_tensor({2}, 1), rv = random_tensor({2}, 2, 0.5, 2.0);
  const Tensor g = random_tensor({2}, 3), b = random_tensor({2}, 4);
  auto run = [&](const Tensor& x) {
    ad::Tape t(false);
    Tensor m = rm, v = rv;
    ad::BatchNormOptions o;
    o.train = false;
    o.running_mean = &m;
    o.running_var = &v;
    return ad::val(ad::batch_norm(t.constant(x), t.constant(g), t.constant(b), o));
  };
  const Tensor x1 = random_tensor({2, 5, 5}, 5), x2 = random_tensor({2, 5, 5}, 6);
  Tensor mix(x1.shape());
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = 0.3 * x1[i] + 0.7 * x2[i];
  const Tensor y1 = run(x1), y2 = run(x2), ym = run(mix);
  for (std::size_t i = 0; i < ym.size(); ++i) EXPECT_NEAR(ym[i], 0.3 * y1[i] + 0.7 * y2[i], 1e-12);
}

TEST(Autodiff, BatchNormRunningStats) {
  Tensor rm(Shape{1}), rv(Shape{1}, 1.0);
  ad::Tape t(false);
  ad::BatchNormOptions o;
  o.running_mean = &rm;
  o.running_var = &rv;
  const Tensor x(Shape{1, 4}, std::vector<double>{1.0, 2.0, 3.0, 4.0});
  ad::batch_norm(t.constant(x), t.constant(Tensor::scalar(1.0)), t.constant(Tensor::scalar(0.0)), o);
  EXPECT_NEAR(rm[0], 0.1 * 2.5, 1e-15);
  EXPECT_NEAR(rv[0], 0.9 + 0.1 * (5.0 / 3.0), 1e-15);  // unbiased variance of {1,2,3,4}
}

// The readouts below are quadratic in every single input entry, so a large step is exact and
// keeps roundoff small.
TEST(Autodiff, EquivariantWeightAndProjectionMatchFiniteDifferences) {
  auto bs = std::make_shared<const eq::BasisSet>(eq::make_basis_set(5, 5, 4));
  const auto lift = [&](ad::Tape&, const std::vector<ad::Var>& v) {
    const ad::Var w = ad::eq_weight(v[1], v[2], bs, true);
    const ad::Var y = ad::conv2d(v[0], w);
    return readout(ad::project_group(ad::reshape(y, {2, 4, 6, 6})));
  };
  EXPECT_LE(fd_max_rel({random_tensor({1, 6, 6}, 1), random_tensor({2, 1, 1, 5, 5}, 2, -0.2, 0.2),
                        random_tensor({2, 1, 1, 5, 5}, 3, -0.2, 0.2)},
                       lift, 1e-3),
            1e-6);
  const auto group = [&](ad::Tape&, const std::vector<ad::Var>& v) {
    return readout(ad::conv2d(v[0], ad::eq_weight(v[1], v[2], bs, false)));
  };
  EXPECT_LE(fd_max_rel({random_tensor({8, 5, 5}, 4), random_tensor({1, 2, 4, 5, 5}, 5, -0.2, 0.2),
                        random_tensor({1, 2, 4, 5, 5}, 6, -0.2, 0.2)},
                       group, 1e-3),
            1e-6);
}

TEST(Autodiff, LinearOperatorMatchesFiniteDifferences) {
  const FanBeamGeometry geom = default_geometry(8, 12);
  auto proj = std::make_shared<FanBeamProjector>(geom, ImageShape{8, 8});
  auto P = std::make_shared<const ad::LinearOperator>(
      "P",
      [proj, geom](const Tensor& x) {
        Tensor out(Shape{geom.n_bins, geom.n_views});
        proj->forward(x.data(), out.data());
        return out;
      },
      [proj](const Tensor& y) {
        Tensor out(Shape{8, 8});
        proj->backward(y.data(), out.data());
        return out;
      });
  const auto f = [&](ad::Tape&, const std::vector<ad::Var>& v) {
    return readout(ad::linear(ad::linear(v[0], P), std::make_shared<const ad::LinearOperator>(P->transposed())));
  };
  EXPECT_LE(fd_max_rel({random_tensor({8, 8}, 1)}, f), 1e-6);
}

TEST(Autodiff, RepeatedBackwardIsIdentical) {
  ad::Tape tape;
  const ad::Var x = tape.input(random_tensor({2, 6, 6}, 1));
  const ad::Var w = tape.input(random_tensor({2, 2, 3, 3}, 2));
  const ad::Var L = readout(ad::relu(ad::conv2d(x, w)));
  tape.backward(L);
  const Tensor g1 = tape.grad(w);
  tape.backward(L);
  EXPECT_EQ(tape.grad(w).vec(), g1.vec());
}

TEST(Autodiff, MisuseErrors) {
  ad::Tape a, b;
  const ad::Var x = a.input(Tensor(Shape{3}));
  EXPECT_THROW(ad::add(x, b.input(Tensor(Shape{3}))), InvalidArgument);
  EXPECT_THROW(ad::add(x, a.input(Tensor(Shape{4}))), ShapeMismatch);
  ad::Tape no(false);
  EXPECT_THROW(no.backward(no.constant(Tensor::scalar(1.0))), InvalidArgument);
  EXPECT_THROW(a.backward(x), ShapeMismatch);
  EXPECT_THROW(ad::LinearOperator("bad", nullptr, nullptr), InvalidArgument);
}

TEST(ProxNet, ZeroExitIsSkip) {
  nn::ProxNetConfig cfg;
  cfg.channels = 8;
  cfg.blocks = 2;
  std::mt19937_64 rng(0);
  nn::ParamStore store;
  const nn::ProxNetStandard s("s", cfg);
  const nn::ProxNetEquivariant e("e", cfg);
  s.init(store, rng);
  e.init(store, rng);
  const Image x = checks::windowed_input(24, 1);
  EXPECT_EQ(checks::prox_map(s, store)(x).vec(), x.vec());
  EXPECT_EQ(checks::prox_map(e, store)(x).vec(), x.vec());
}

TEST(ProxNet, ShapeMismatchIsError) {
  nn::ProxNetConfig cfg;
  cfg.channels = 8;
  std::mt19937_64 rng(0);
  nn::ParamStore store;
  const nn::ProxNetStandard s("s", cfg);
  s.init(store, rng);
  ad::Tape t(false);
  EXPECT_THROW(s.apply(t, store, t.constant(Tensor(Shape{2, 8, 8})), false), ShapeMismatch);
}

TEST(ProxNet, EquivariantQuarterTurnsAndStandardComparison) {
  nn::ProxNetConfig cfg;
  cfg.channels = 16;
  cfg.blocks = 2;
  std::mt19937_64 rng(4);
  nn::ParamStore store;
  const nn::ProxNetStandard s("s", cfg);
  const nn::ProxNetEquivariant e("e", cfg);
  s.init(store, rng);
  e.init(store, rng);
  checks::randomize(store, 5, 0.5);
  const Image x = checks::windowed_input(32, 6);
  double worst = 0.0;
  for (int q = 1; q < 4; ++q)
    worst = std::max(worst, eq::equivariance_error(checks::prox_map(e, store), x, q * std::numbers::pi / 2));
  EXPECT_LE(worst, 1e-5);
  const double std_err = eq::equivariance_error(checks::prox_map(s, store), x, std::numbers::pi / 2);
  EXPECT_GT(std_err, 10.0 * worst);
}

TEST(ProxNet, ParamCounts) {
  nn::ProxNetConfig cfg;
  cfg.channels = 16;
  cfg.blocks = 4;
  const nn::ProxNetStandard s("s", cfg);
  const nn::ProxNetEquivariant e("e", cfg);
  std::mt19937_64 rng(0);
  nn::ParamStore a, b;
  s.init(a, rng);
  e.init(b, rng);
  EXPECT_EQ(a.scalar_count(), s.param_count());
  EXPECT_EQ(b.scalar_count(), e.param_count());
  EXPECT_LT(e.param_count(), s.param_count());
  // One free 3x3 16->16 conv.
  EXPECT_EQ(a.get("s.block0.conv1.w").value.size(), 2304u);
}

TEST(ProxNet, FullUnrolledGradient) {
  for (ProxKind k : {ProxKind::learned_standard, ProxKind::learned_equivariant}) {
    const auto r = checks::gradient_suite(k);
    EXPECT_TRUE(r.passed) << checks::format(r);
  }
}

TEST(Checkpoint, RoundTripAndCoverage) {
  nn::ProxNetConfig cfg;
  cfg.channels = 8;
  cfg.blocks = 1;
  const nn::ProxNetStandard s("s", cfg);
  std::mt19937_64 rng(0);
  nn::ParamStore a;
  s.init(a, rng);
  a.quantize();
  const auto dir = std::filesystem::temp_directory_path() / "svmar_ckpt_test";
  std::filesystem::remove_all(dir);
  nn::save_checkpoint(a, dir, 7, "abc");
  nn::ParamStore b;
  std::mt19937_64 rng2(1);
  s.init(b, rng2);
  const auto info = nn::load_checkpoint(b, dir);
  EXPECT_EQ(info.step, 7);
  EXPECT_EQ(info.config_hash, "abc");
  for (std::size_t i = 0; i < a.params().size(); ++i) EXPECT_EQ(a.params()[i].value.vec(), b.params()[i].value.vec());
  nn::ParamStore c = b;
  c.add("extra.w", Tensor(Shape{2}));
  EXPECT_THROW(nn::load_checkpoint(c, dir), InvalidArgument);
  std::filesystem::remove_all(dir);
}
