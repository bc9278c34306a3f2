#pragma once

// The two learned proximal operators. Both are residual maps image -> image
// whose exit convolution starts at zero, so a freshly initialised net is the identity.

#include <memory>
#include <random>
#include <string>

#include "svmar/core/error.hpp"
#include "svmar/eq/eqconv.hpp"
#include "svmar/eq/fourier_basis.hpp"
#include "svmar/nn/autodiff.hpp"
#include "svmar/nn/params.hpp"

namespace svmar::nn {

struct ProxNetConfig {
  std::size_t channels = 16;  // effective width: standard channels, or channels-per-orientation x group
  int blocks = 4;
  int std_filter = 3;
  int group = 8;
  int order = 5;     // Fourier order p
  int eq_filter = 5;  // equivariant filter size h
};

namespace detail {

template <class Rng>
Tensor uniform_tensor(Shape s, double fan_in, Rng& rng) {
  Tensor t(std::move(s));
  std::uniform_real_distribution<double> u(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
  for (double& v : t.values()) v = u(rng);
  return t;
}

inline void add_bn(ParamStore& store, const std::string& name, std::size_t c) {
  store.add(name + ".gamma", Tensor(Shape{c}, 1.0));
  store.add(name + ".beta", Tensor(Shape{c}));
  store.add_buffer(name + ".running_mean", Tensor(Shape{c}));
  store.add_buffer(name + ".running_var", Tensor(Shape{c}, 1.0));
}

inline ad::Var apply_bn(ad::Tape& tape, ParamStore& store, const std::string& name, ad::Var x, bool train) {
  ad::BatchNormOptions opt;
  opt.train = train;
  opt.running_mean = &store.buffer(name + ".running_mean");
  opt.running_var = &store.buffer(name + ".running_var");
  return ad::batch_norm(x, tape.param(store, name + ".gamma"), tape.param(store, name + ".beta"), opt);
}

inline void check_image_input(const Tensor& x) {
  require_shape(x.rank() == 3 && x.dim(0) == 1, "prox net: input must be (1,H,W), got " + shape_str(x.shape()));
}

}  // namespace detail

/// Entry 1->C conv, residual blocks Conv-BN-ReLU-Conv-BN + skip, exit C->1 conv, plus the input.
class ProxNetStandard {
 public:
  ProxNetStandard(std::string prefix, ProxNetConfig cfg) : prefix_(std::move(prefix)), cfg_(cfg) {
    require(cfg_.channels >= 1 && cfg_.blocks >= 0, "prox net: bad width or depth");
    require(cfg_.std_filter % 2 == 1, "prox net: filter size must be odd");
  }

  template <class Rng>
  void init(ParamStore& store, Rng& rng) const {
    const std::size_t C = cfg_.channels, k = static_cast<std::size_t>(cfg_.std_filter);
    const double kk = static_cast<double>(k * k);
    store.add(prefix_ + ".entry.w", detail::uniform_tensor({C, 1, k, k}, kk, rng));
    for (int b = 0; b < cfg_.blocks; ++b) {
      const std::string bp = block(b);
      store.add(bp + ".conv1.w", detail::uniform_tensor({C, C, k, k}, C * kk, rng));
      detail::add_bn(store, bp + ".bn1", C);
      store.add(bp + ".conv2.w", detail::uniform_tensor({C, C, k, k}, C * kk, rng));
      detail::add_bn(store, bp + ".bn2", C);
    }
    store.add(prefix_ + ".exit.w", Tensor(Shape{1, C, k, k}));
  }

  ad::Var apply(ad::Tape& tape, ParamStore& store, ad::Var x, bool train) const {
    detail::check_image_input(ad::val(x));
    ad::Var h = ad::conv2d(x, tape.param(store, prefix_ + ".entry.w"));
    for (int b = 0; b < cfg_.blocks; ++b) {
      const std::string bp = block(b);
      ad::Var r = ad::conv2d(h, tape.param(store, bp + ".conv1.w"));
      r = ad::relu(detail::apply_bn(tape, store, bp + ".bn1", r, train));
      r = ad::conv2d(r, tape.param(store, bp + ".conv2.w"));
      r = detail::apply_bn(tape, store, bp + ".bn2", r, train);
      h = ad::add(r, h);
    }
    return ad::add(x, ad::conv2d(h, tape.param(store, prefix_ + ".exit.w")));
  }

  std::size_t param_count() const {
    const std::size_t C = cfg_.channels, kk = static_cast<std::size_t>(cfg_.std_filter * cfg_.std_filter);
    return 2 * C * kk + static_cast<std::size_t>(cfg_.blocks) * (2 * C * C * kk + 4 * C);
  }
  const std::string& prefix() const noexcept { return prefix_; }

 private:
  std::string block(int b) const { return prefix_ + ".block" + std::to_string(b); }
  std::string prefix_;
  ProxNetConfig cfg_;
};

/// Lifting conv -> residual group-conv blocks -> orientation mean -> 1x1 exit conv, plus the input.
/// Uses channels / group feature channels per orientation so the effective width equals channels.
class ProxNetEquivariant {
 public:
  ProxNetEquivariant(std::string prefix, ProxNetConfig cfg, std::shared_ptr<const eq::BasisSet> basis = nullptr)
      : prefix_(std::move(prefix)), cfg_(cfg), basis_(std::move(basis)) {
    require(cfg_.group >= 1 && cfg_.blocks >= 0, "prox net: bad group or depth");
    require(cfg_.channels % static_cast<std::size_t>(cfg_.group) == 0 && cfg_.channels >= 1,
            "equivariant prox net: channels must be a positive multiple of the group order");
    if (!basis_) basis_ = std::make_shared<eq::BasisSet>(eq::make_basis_set(cfg_.order, cfg_.eq_filter, cfg_.group));
    require(basis_->group == cfg_.group && basis_->p == cfg_.order && basis_->h == cfg_.eq_filter,
            "equivariant prox net: basis does not match config");
  }

  std::size_t width() const { return cfg_.channels / static_cast<std::size_t>(cfg_.group); }

  template <class Rng>
  void init(ParamStore& store, Rng& rng) const {
    const std::size_t C = width(), N = static_cast<std::size_t>(cfg_.group);
    auto bank_init = [&](const std::string& name, std::size_t c_in, bool lifting) {
      eq::EqFilterBank bank = eq::make_bank(C, c_in, N, lifting, cfg_.order);
      eq::init_bank(bank, rng);
      store.add("eq." + name + ".a", std::move(bank.a));
      store.add("eq." + name + ".b", std::move(bank.b));
    };
    bank_init(prefix_ + ".lift", 1, true);
    for (int b = 0; b < cfg_.blocks; ++b) {
      const std::string bp = block(b);
      bank_init(bp + ".conv1", C, false);
      detail::add_bn(store, bp + ".bn1", C);
      bank_init(bp + ".conv2", C, false);
      detail::add_bn(store, bp + ".bn2", C);
    }
    store.add(prefix_ + ".exit.w", Tensor(Shape{1, C, 1, 1}));
  }

  ad::Var apply(ad::Tape& tape, ParamStore& store, ad::Var x, bool train) const {
    detail::check_image_input(ad::val(x));
    const std::size_t C = width(), N = static_cast<std::size_t>(cfg_.group);
    const std::size_t H = ad::val(x).dim(1), W = ad::val(x).dim(2);
    const Shape group_shape{C, N, H, W}, flat_shape{C * N, H, W};
    auto gconv = [&](ad::Var f, const std::string& name, bool lifting) {
      ad::Var w = ad::eq_weight(tape.param(store, "eq." + name + ".a"), tape.param(store, "eq." + name + ".b"), basis_,
                                lifting);
      return ad::conv2d(f, w);  // flat (C*N, H, W)
    };
    auto bn = [&](ad::Var f, const std::string& name) {
      // per-channel statistics over orientations and pixels
      return ad::reshape(detail::apply_bn(tape, store, name, ad::reshape(f, group_shape), train), flat_shape);
    };
    ad::Var h = gconv(x, prefix_ + ".lift", true);
    for (int b = 0; b < cfg_.blocks; ++b) {
      const std::string bp = block(b);
      ad::Var r = gconv(h, bp + ".conv1", false);
      r = ad::relu(bn(r, bp + ".bn1"));
      r = gconv(r, bp + ".conv2", false);
      r = bn(r, bp + ".bn2");
      h = ad::add(r, h);
    }
    ad::Var pooled = ad::project_group(ad::reshape(h, group_shape));
    return ad::add(x, ad::conv2d(pooled, tape.param(store, prefix_ + ".exit.w")));
  }

  std::size_t param_count() const {
    const std::size_t C = width(), N = static_cast<std::size_t>(cfg_.group);
    const std::size_t pp = static_cast<std::size_t>(cfg_.order * cfg_.order);
    return 2 * pp * C + static_cast<std::size_t>(cfg_.blocks) * (2 * 2 * pp * C * C * N + 4 * C) + C;
  }
  const std::string& prefix() const noexcept { return prefix_; }
  std::shared_ptr<const eq::BasisSet> basis() const noexcept { return basis_; }

 private:
  std::string block(int b) const { return prefix_ + ".block" + std::to_string(b); }
  std::string prefix_;
  ProxNetConfig cfg_;
  std::shared_ptr<const eq::BasisSet> basis_;
};

}  // namespace svmar::nn
