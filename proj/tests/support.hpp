#pragma once

#include <cmath>
#include <functional>
#include <random>

#include "svmar/core/tensor.hpp"
#include "svmar/nn/autodiff.hpp"

namespace svmar::fixtures {

inline Tensor random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(s));
  for (double& v : t.values()) v = u(rng);
  return t;
}

template <class G>
G random_grid(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  return G::from_tensor(random_tensor({rows, cols}, seed));
}

/// Max relative error between backward and central differences of a scalar function of `inputs`.
/// build(tape, vars) must return a scalar node. The denominator is floored at `floor` times the
/// largest analytic gradient entry, so exact zeros are compared against FD roundoff at that scale.
inline double fd_max_rel(std::vector<Tensor> inputs,
                         const std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>& build,
                         double h = 1e-5, double floor = 1e-6) {
  ad::Tape tape(true);
  std::vector<ad::Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.input(t));
  tape.backward(build(tape, vars));
  std::vector<Tensor> an;
  for (const auto& v : vars) an.push_back(tape.grad(v));
  auto eval = [&]() {
    ad::Tape t(false);
    std::vector<ad::Var> vs;
    for (const auto& x : inputs) vs.push_back(t.constant(x));
    return ad::val(build(t, vs))[0];
  };
  double gmax = 0.0;
  for (const auto& g : an)
    for (double v : g.values()) gmax = std::max(gmax, std::abs(v));
  const double den_min = std::max(floor * gmax, 1e-12);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k)
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double v0 = inputs[k][i];
      inputs[k][i] = v0 + h;
      const double fp = eval();
      inputs[k][i] = v0 - h;
      const double fm = eval();
      inputs[k][i] = v0;
      const double fd = (fp - fm) / (2.0 * h);
      worst = std::max(worst, std::abs(fd - an[k][i]) / std::max({std::abs(fd), std::abs(an[k][i]), den_min}));
    }
  return worst;
}

}  // namespace svmar::fixtures
