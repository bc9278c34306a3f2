#pragma once

// Tape-based reverse-mode differentiation over whole tensors. The op set is
// closed: every node is created by one of the functions in this header, and
// linear-operator nodes refuse to be built without a registered adjoint.

#include <cmath>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "svmar/core/error.hpp"
#include "svmar/core/tensor.hpp"
#include "svmar/eq/eqconv.hpp"
#include "svmar/nn/conv_kernels.hpp"
#include "svmar/nn/params.hpp"

namespace svmar::ad {

enum class Op {
  constant,
  input,
  param,
  add,
  sub,
  scale,
  mul_scalar,
  mask_mul,
  mul_const,
  relu,
  soft_threshold,
  batch_norm,
  conv2d,
  eq_weight,
  project_group,
  reshape,
  linear,
  sum_squares,
  sum_abs,
};

/// A linear map with its adjoint. Both must be supplied.
class LinearOperator {
 public:
  using Fn = std::function<Tensor(const Tensor&)>;
  LinearOperator(std::string name, Fn apply, Fn adjoint)
      : name_(std::move(name)), apply_(std::move(apply)), adjoint_(std::move(adjoint)) {
    if (!apply_ || !adjoint_) throw InvalidArgument("linear operator '" + name_ + "' needs both apply and adjoint");
  }
  Tensor apply(const Tensor& x) const { return apply_(x); }
  Tensor adjoint(const Tensor& y) const { return adjoint_(y); }
  LinearOperator transposed() const { return LinearOperator(name_ + "^T", adjoint_, apply_); }
  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
  Fn apply_, adjoint_;
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

  /// With grad disabled no backward closures are kept.
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }

  Var constant(Tensor t) { return push(Op::constant, std::move(t), false, nullptr); }
  Var input(Tensor t, bool requires_grad = true) {
    return push(Op::input, std::move(t), requires_grad && grad_enabled_, nullptr);
  }

  /// Leaf for a stored parameter; repeated requests for one name return the same node.
  Var param(nn::ParamStore& store, const std::string& name) {
    if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return Var{this, it->second};
    Var v = push(Op::param, store.get(name).value, grad_enabled_, nullptr);
    param_nodes_[name] = v.id;
    store_ = &store;
    return v;
  }

  Var record(Op op, Tensor value, std::initializer_list<Var> inputs, Backward bw) {
    bool rg = false;
    for (Var v : inputs) {
      check(v);
      rg = rg || nodes_[v.id].requires_grad;
    }
    rg = rg && grad_enabled_;
    return push(op, std::move(value), rg, rg ? std::move(bw) : nullptr);
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  Op op(Var v) const { return nodes_.at(v.id).op; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }
  Op op_at(std::size_t id) const { return nodes_.at(id).op; }
  const Tensor& value_at(std::size_t id) const { return nodes_.at(id).value; }

  /// Gradient of v after backward(); zeros if v was not reached.
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.grad.empty() ? Tensor(n.value.shape()) : n.grad;
  }

  /// Adds g into the gradient of v (used by backward closures).
  void accumulate(Var v, const Tensor& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    require_shape(g.size() == n.grad.size(), "gradient shape mismatch");
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
  }
  Tensor& grad_buffer(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
  }

  /// Reverse sweep from a scalar root. Previous gradients are discarded first.
  void backward(Var root) {
    require(grad_enabled_, "backward on a tape without gradient recording");
    check(root);
    require_shape(nodes_[root.id].value.size() == 1, "backward root must be a scalar");
    for (auto& n : nodes_) n.grad = Tensor();
    nodes_[root.id].grad = Tensor(nodes_[root.id].value.shape(), 1.0);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      const Tensor g = n.grad;
      n.backward(*this, g);
    }
  }

  /// Adds every parameter leaf's gradient into the store's grad tensors.
  void collect_param_grads(nn::ParamStore& store) const {
    for (const auto& [name, id] : param_nodes_) {
      const Node& n = nodes_[id];
      if (n.grad.empty()) continue;
      Tensor& dst = store.get(name).grad;
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad[i];
    }
  }

  const std::map<std::string, std::size_t>& param_nodes() const noexcept { return param_nodes_; }

 private:
  struct Node {
    Op op;
    Tensor value;
    Tensor grad;
    bool requires_grad;
    Backward backward;
  };

  void check(Var v) const {
    if (v.tape != this || v.id >= nodes_.size()) throw InvalidArgument("variable does not belong to this tape");
  }

  Var push(Op op, Tensor value, bool rg, Backward bw) {
    nodes_.push_back(Node{op, std::move(value), Tensor(), rg, std::move(bw)});
    return Var{this, nodes_.size() - 1};
  }

  bool grad_enabled_;
  std::deque<Node> nodes_;  // stable references across pushes
  std::map<std::string, std::size_t> param_nodes_;
  nn::ParamStore* store_ = nullptr;
};

inline const Tensor& val(Var v) { return v.tape->value(v); }

namespace detail {
inline void same_size(const Tensor& a, const Tensor& b, const char* what) {
  require_shape(a.size() == b.size(), std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                          shape_str(b.shape()));
}
}  // namespace detail

inline Var add(Var a, Var b) {
  const Tensor &x = val(a), &y = val(b);
  detail::same_size(x, y, "add");
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
  return a.tape->record(Op::add, std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var sub(Var a, Var b) {
  const Tensor &x = val(a), &y = val(b);
  detail::same_size(x, y, "sub");
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
  return a.tape->record(Op::sub, std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    Tensor ng = g;
    for (double& v : ng.values()) v = -v;
    t.accumulate(b, ng);
  });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }

/// c * x for a fixed scalar c.
inline Var scale(Var x, double c) {
  Tensor out = val(x);
  for (double& v : out.values()) v *= c;
  return x.tape->record(Op::scale, std::move(out), {x}, [x, c](Tape& t, const Tensor& g) {
    Tensor gx = g;
    for (double& v : gx.values()) v *= c;
    t.accumulate(x, gx);
  });
}

/// s * x where s is a one-element variable.
inline Var mul_scalar(Var s, Var x) {
  require_shape(val(s).size() == 1, "mul_scalar: first operand must be a scalar");
  const double sv = val(s)[0];
  Tensor out = val(x);
  for (double& v : out.values()) v *= sv;
  return x.tape->record(Op::mul_scalar, std::move(out), {s, x}, [s, x](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(x);
    const double sval = t.value(s)[0];
    double gs = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) gs += g[i] * xv[i];
    t.accumulate(s, Tensor::scalar(gs));
    Tensor gx = g;
    for (double& v : gx.values()) v *= sval;
    t.accumulate(x, gx);
  });
}

/// Binary mask: entries with mask 0 become exactly +0 whatever x holds there.
inline Var mask_mul(Var x, std::shared_ptr<const Tensor> mask) {
  detail::same_size(val(x), *mask, "mask_mul");
  Tensor out = val(x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*mask)[i] != 0.0 ? (*mask)[i] * out[i] : 0.0;
  return x.tape->record(Op::mask_mul, std::move(out), {x}, [x, mask](Tape& t, const Tensor& g) {
    Tensor gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = (*mask)[i] != 0.0 ? (*mask)[i] * gx[i] : 0.0;
    t.accumulate(x, gx);
  });
}

/// Element-wise product with a constant tensor.
inline Var mul_const(Var x, std::shared_ptr<const Tensor> c) {
  detail::same_size(val(x), *c, "mul_const");
  Tensor out = val(x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*c)[i];
  return x.tape->record(Op::mul_const, std::move(out), {x}, [x, c](Tape& t, const Tensor& g) {
    Tensor gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= (*c)[i];
    t.accumulate(x, gx);
  });
}

inline Var relu(Var x) {
  Tensor out = val(x);
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return x.tape->record(Op::relu, std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(x);
    Tensor gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (!(xv[i] > 0.0)) gx[i] = 0.0;
    t.accumulate(x, gx);
  });
}

/// sign(x) * max(|x| - tau, 0).
inline Var soft_threshold(Var x, double tau) {
  Tensor out = val(x);
  for (double& v : out.values()) v = v > tau ? v - tau : (v < -tau ? v + tau : 0.0);
  return x.tape->record(Op::soft_threshold, std::move(out), {x}, [x, tau](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(x);
    Tensor gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (std::abs(xv[i]) <= tau) gx[i] = 0.0;
    t.accumulate(x, gx);
  });
}

inline Var reshape(Var x, Shape s) {
  require_shape(shape_size(s) == val(x).size(), "reshape: element count mismatch");
  Tensor out = val(x).reshaped(std::move(s));
  return x.tape->record(Op::reshape, std::move(out), {x}, [x](Tape& t, const Tensor& g) { t.accumulate(x, g); });
}

struct BatchNormOptions {
  bool train = true;
  double eps = 1e-5;
  double momentum = 0.1;
  Tensor* running_mean = nullptr;  // updated in train mode when non-null
  Tensor* running_var = nullptr;
};

/// Per-channel normalisation of x with shape (C, ...): statistics over every non-channel axis
/// (orientations and pixels for group features).
inline Var batch_norm(Var x, Var gamma, Var beta, const BatchNormOptions& opt) {
  const Tensor& xv = val(x);
  const std::size_t C = xv.dim(0), M = xv.size() / C;
  require_shape(val(gamma).size() == C && val(beta).size() == C, "batch_norm: parameter size mismatch");
  std::vector<double> mean(C), inv_std(C);
  if (opt.train) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* p = xv.data() + c * M;
      double s = 0.0;
      for (std::size_t i = 0; i < M; ++i) s += p[i];
      const double mu = s / static_cast<double>(M);
      double q = 0.0;
      for (std::size_t i = 0; i < M; ++i) q += (p[i] - mu) * (p[i] - mu);
      const double var = q / static_cast<double>(M);
      mean[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + opt.eps);
      if (opt.running_mean && opt.running_var) {
        const double unbiased = M > 1 ? q / static_cast<double>(M - 1) : var;
        (*opt.running_mean)[c] = (1.0 - opt.momentum) * (*opt.running_mean)[c] + opt.momentum * mu;
        (*opt.running_var)[c] = (1.0 - opt.momentum) * (*opt.running_var)[c] + opt.momentum * unbiased;
      }
    }
  } else {
    require(opt.running_mean && opt.running_var, "batch_norm: eval mode needs running statistics");
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = (*opt.running_mean)[c];
      inv_std[c] = 1.0 / std::sqrt((*opt.running_var)[c] + opt.eps);
    }
  }
  const Tensor &gv = val(gamma), &bv = val(beta);
  Tensor out(xv.shape());
  for (std::size_t c = 0; c < C; ++c) {
    const double* p = xv.data() + c * M;
    double* o = out.data() + c * M;
    for (std::size_t i = 0; i < M; ++i) o[i] = gv[c] * (p[i] - mean[c]) * inv_std[c] + bv[c];
  }
  const bool train = opt.train;
  return x.tape->record(Op::batch_norm, std::move(out), {x, gamma, beta},
                        [x, gamma, beta, mean, inv_std, C, M, train](Tape& t, const Tensor& g) {
                          const Tensor& xv = t.value(x);
                          const Tensor& gv = t.value(gamma);
                          Tensor gx(xv.shape()), gg(Shape{C}), gb(Shape{C});
                          for (std::size_t c = 0; c < C; ++c) {
                            const double* p = xv.data() + c * M;
                            const double* go = g.data() + c * M;
                            double sg = 0.0, sgx = 0.0;
                            for (std::size_t i = 0; i < M; ++i) {
                              const double xh = (p[i] - mean[c]) * inv_std[c];
                              sg += go[i];
                              sgx += go[i] * xh;
                            }
                            gg[c] = sgx;
                            gb[c] = sg;
                            double* dx = gx.data() + c * M;
                            const double k = gv[c] * inv_std[c];
                            if (train) {
                              const double mg = sg / static_cast<double>(M), mgx = sgx / static_cast<double>(M);
                              for (std::size_t i = 0; i < M; ++i) {
                                const double xh = (p[i] - mean[c]) * inv_std[c];
                                dx[i] = k * (go[i] - mg - xh * mgx);
                              }
                            } else {
                              for (std::size_t i = 0; i < M; ++i) dx[i] = k * go[i];
                            }
                          }
                          t.accumulate(x, gx);
                          t.accumulate(gamma, gg);
                          t.accumulate(beta, gb);
                        });
}

/// Cross-correlation of x (Cin,H,W) with w (Cout,Cin,k,k), zero padded, stride 1.
inline Var conv2d(Var x, Var w) {
  Tensor out = kernels::conv2d_forward(val(x), val(w));
  return x.tape->record(Op::conv2d, std::move(out), {x, w}, [x, w](Tape& t, const Tensor& g) {
    if (t.requires_grad(x)) t.accumulate(x, kernels::conv2d_backward_input(g, t.value(w), t.value(x).shape()));
    if (t.requires_grad(w)) t.accumulate(w, kernels::conv2d_backward_weight(g, t.value(x), t.value(w).shape()));
  });
}

/// Dense lifting/group convolution weight assembled from Fourier coefficients.
inline Var eq_weight(Var a, Var b, std::shared_ptr<const eq::BasisSet> basis, bool lifting) {
  Tensor w = eq::assemble_conv_weight(val(a), val(b), *basis, lifting);
  return a.tape->record(Op::eq_weight, std::move(w), {a, b}, [a, b, basis, lifting](Tape& t, const Tensor& g) {
    Tensor ga(t.value(a).shape()), gb(t.value(b).shape());
    eq::assemble_conv_weight_backward(g, *basis, lifting, ga, gb);
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  });
}

/// Mean over orientations: (C, N, H, W) -> (C, H, W).
inline Var project_group(Var x) {
  Tensor out = eq::project_group(val(x));
  return x.tape->record(Op::project_group, std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    const Shape& s = t.value(x).shape();
    const std::size_t C = s[0], N = s[1], plane = s[2] * s[3];
    Tensor gx(s);
    const double inv = 1.0 / static_cast<double>(N);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t k = 0; k < N; ++k)
        for (std::size_t i = 0; i < plane; ++i) gx[(c * N + k) * plane + i] = g[c * plane + i] * inv;
    t.accumulate(x, gx);
  });
}

/// Applies op; the backward pass uses the registered adjoint.
inline Var linear(Var x, std::shared_ptr<const LinearOperator> op) {
  require(op != nullptr, "linear: null operator");
  Tensor out = op->apply(val(x));
  return x.tape->record(Op::linear, std::move(out), {x},
                        [x, op](Tape& t, const Tensor& g) { t.accumulate(x, op->adjoint(g)); });
}

/// sum(x^2) as a one-element tensor.
inline Var sum_squares(Var x) {
  double s = 0.0;
  for (double v : val(x).values()) s += v * v;
  return x.tape->record(Op::sum_squares, Tensor::scalar(s), {x}, [x](Tape& t, const Tensor& g) {
    Tensor gx = t.value(x);
    for (double& v : gx.values()) v *= 2.0 * g[0];
    t.accumulate(x, gx);
  });
}

/// sum(|x|) as a one-element tensor; the subgradient at 0 is taken as 0.
inline Var sum_abs(Var x) {
  double s = 0.0;
  for (double v : val(x).values()) s += std::abs(v);
  return x.tape->record(Op::sum_abs, Tensor::scalar(s), {x}, [x](Tape& t, const Tensor& g) {
    Tensor gx = t.value(x);
    for (double& v : gx.values()) v = v > 0.0 ? g[0] : (v < 0.0 ? -g[0] : 0.0);
    t.accumulate(x, gx);
  });
}

}  // namespace svmar::ad
