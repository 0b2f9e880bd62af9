#pragma once

// Reverse-mode automatic differentiation over dense Tensors.
//
// A Tape records every primitive applied to its Vars in execution order.
// Inputs always precede outputs, so a single reverse sweep visits each node
// exactly once. Tapes are meant to live for one forward/backward step.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "stormnet/error.hpp"
#include "stormnet/tensor.hpp"

namespace stormnet {

class Tape;

/// Handle to a value recorded on a Tape. A default-constructed Var is detached.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool attached() const noexcept { return tape_ != nullptr; }
  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Local gradient rule: receives the tape and d(loss)/d(output).
  using BackwardFn = std::function<void(Tape&, const Tensor&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, {}, {}});
    return Var(this, nodes_.size() - 1);
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }

  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
    bool needs = false;
    for (std::size_t i : inputs) needs = needs || nodes_[i].requires_grad;
    nodes_.push_back(Node{std::move(value), {}, needs, std::move(inputs),
                          needs ? std::move(fn) : BackwardFn{}});
    return Var(this, nodes_.size() - 1);
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient of the last backward() target w.r.t. node `id`; zeros if unreached.
  Tensor grad(std::size_t id) const {
    const Node& n = nodes_.at(id);
    if (n.grad.size() == 0) return Tensor(n.value.shape());
    return n.grad;
  }
  Tensor grad(const Var& v) const { return grad(v.id()); }

  /// Adds `g` into the gradient buffer of node `id` (no-op for constants).
  void accumulate(std::size_t id, const Tensor& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
      return;
    }
    auto dst = n.grad.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  /// Mutable gradient buffer, zero-initialised on first touch.
  Tensor& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Tensor(n.value.shape());
    return n.grad;
  }

  void backward(const Var& loss) {
    if (!loss.attached()) throw DetachedTensor("loss is not recorded on a tape");
    if (loss.tape() != this) throw DetachedTensor("loss belongs to a different tape");
    if (value(loss.id()).size() != 1) {
      throw ShapeMismatch("backward needs a scalar loss, got " +
                          shape_str(value(loss.id()).shape()));
    }
    for (Node& n : nodes_) n.grad = Tensor();
    Node& root = nodes_[loss.id()];
    root.grad = Tensor(root.value.shape(), 1.0);
    for (std::size_t k = loss.id() + 1; k-- > 0;) {
      Node& n = nodes_[k];
      if (!n.backward || n.grad.size() == 0) continue;
      // Rules only write into their inputs, which precede this node.
      n.backward(*this, n.grad);
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const {
  if (!tape_) throw DetachedTensor("value() on a detached Var");
  return tape_->value(id_);
}

/// Runs backward from `loss` and returns d(loss)/d(p) for each p in `params`.
inline std::vector<Tensor> backward(const Var& loss, const std::vector<Var>& params) {
  if (!loss.attached()) throw DetachedTensor("loss has no tape");
  loss.tape()->backward(loss);
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (const Var& p : params) grads.push_back(loss.tape()->grad(p));
  return grads;
}

enum class Activation { linear, relu, leaky_relu, sigmoid, tanh };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::linear: return "linear";
    case Activation::relu: return "relu";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
  }
  return "linear";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "linear") return Activation::linear;
  if (s == "relu") return Activation::relu;
  if (s == "leaky_relu") return Activation::leaky_relu;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "tanh") return Activation::tanh;
  throw ParseError("unknown activation '" + s + "'");
}

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

inline Tape& common_tape(const Var& a) {
  if (!a.attached()) throw DetachedTensor("operand is not on a tape");
  return *a.tape();
}

inline Tape& common_tape(const Var& a, const Var& b) {
  Tape& t = common_tape(a);
  if (b.tape() != &t) throw DetachedTensor("operands live on different tapes");
  return t;
}

inline void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw ShapeMismatch(std::string(what) + " expects a matrix, got " + shape_str(t.shape()));
  }
}

inline ConstMatMap view(const Tensor& t, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return ConstMatMap(t.data().data() + offset, static_cast<Eigen::Index>(rows),
                     static_cast<Eigen::Index>(cols));
}

inline MatMap view(Tensor& t, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return MatMap(t.data().data() + offset, static_cast<Eigen::Index>(rows),
                static_cast<Eigen::Index>(cols));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic. Operands must share a shape, or one must be a
// single-element tensor which is broadcast.
// ---------------------------------------------------------------------------

namespace detail {

enum class BinOp { add, sub, mul };

inline Var binary(const Var& a, const Var& b, BinOp op) {
  Tape& tape = common_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool a_scalar = av.size() == 1 && bv.size() != 1;
  const bool b_scalar = bv.size() == 1 && av.size() != 1;
  if (!a_scalar && !b_scalar && av.shape() != bv.shape()) {
    throw ShapeMismatch("elementwise operands " + shape_str(av.shape()) + " and " +
                        shape_str(bv.shape()));
  }
  const Shape& shape = a_scalar ? bv.shape() : av.shape();
  Tensor out(shape);
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = a_scalar ? av[0] : av[i];
    const double y = b_scalar ? bv[0] : bv[i];
    out[i] = op == BinOp::add ? x + y : op == BinOp::sub ? x - y : x * y;
  }
  const std::size_t aid = a.id(), bid = b.id();
  return tape.record(std::move(out), {aid, bid}, [=](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(aid);
    const Tensor& y = t.value(bid);
    if (t.requires_grad(aid)) {
      Tensor& ga = t.grad_buffer(aid);
      for (std::size_t i = 0; i < n; ++i) {
        const double d = op == BinOp::mul ? g[i] * (b_scalar ? y[0] : y[i]) : g[i];
        ga[a_scalar ? 0 : i] += d;
      }
    }
    if (t.requires_grad(bid)) {
      Tensor& gb = t.grad_buffer(bid);
      for (std::size_t i = 0; i < n; ++i) {
        double d = op == BinOp::mul ? g[i] * (a_scalar ? x[0] : x[i]) : g[i];
        if (op == BinOp::sub) d = -d;
        gb[b_scalar ? 0 : i] += d;
      }
    }
  });
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) { return detail::binary(a, b, detail::BinOp::add); }
inline Var sub(const Var& a, const Var& b) { return detail::binary(a, b, detail::BinOp::sub); }
inline Var mul(const Var& a, const Var& b) { return detail::binary(a, b, detail::BinOp::mul); }

inline Var scale(const Var& x, double c) {
  Tape& tape = detail::common_tape(x);
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = c * xv[i];
  const std::size_t xid = x.id();
  return tape.record(std::move(out), {xid}, [=](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(xid);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
  });
}

/// x[m×n] + bias[n] broadcast over rows.
inline Var add_bias(const Var& x, const Var& bias) {
  Tape& tape = detail::common_tape(x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  const std::size_t n = xv.cols();
  if (bv.size() != n) {
    throw ShapeMismatch("bias " + shape_str(bv.shape()) + " vs input " + shape_str(xv.shape()));
  }
  const std::size_t m = xv.rows();
  Tensor out = xv;
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += bv[c];
  const std::size_t xid = x.id(), bid = bias.id();
  return tape.record(std::move(out), {xid, bid}, [=](Tape& t, const Tensor& g) {
    if (t.requires_grad(xid)) t.accumulate(xid, g);
    if (t.requires_grad(bid)) {
      Tensor& gb = t.grad_buffer(bid);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
    }
  });
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
  Tape& tape = detail::common_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_matrix(av, "matmul lhs");
  detail::require_matrix(bv, "matmul rhs");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k) {
    throw ShapeMismatch("matmul " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  }
  Tensor out(Shape{m, n});
  detail::view(out, m, n).noalias() = detail::view(av, m, k) * detail::view(bv, k, n);
  const std::size_t aid = a.id(), bid = b.id();
  return tape.record(std::move(out), {aid, bid}, [=](Tape& t, const Tensor& g) {
    auto gv = detail::view(g, m, n);
    if (t.requires_grad(aid)) {
      detail::view(t.grad_buffer(aid), m, k).noalias() +=
          gv * detail::view(t.value(bid), k, n).transpose();
    }
    if (t.requires_grad(bid)) {
      detail::view(t.grad_buffer(bid), k, n).noalias() +=
          detail::view(t.value(aid), m, k).transpose() * gv;
    }
  });
}

/// Independent products over `groups` stacked blocks:
/// a [groups·m × k] (or [m × k] when lhs_shared), b [groups·k × p] -> [groups·m × p].
inline Var batched_matmul(const Var& a, const Var& b, std::size_t groups,
                          bool lhs_shared = false) {
  Tape& tape = detail::common_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_matrix(av, "batched_matmul lhs");
  detail::require_matrix(bv, "batched_matmul rhs");
  if (groups == 0 || bv.dim(0) % groups != 0) {
    throw ShapeMismatch("batched_matmul rhs rows not divisible by group count");
  }
  const std::size_t k = bv.dim(0) / groups, p = bv.dim(1), kk = av.dim(1);
  if (kk != k) {
    throw ShapeMismatch("batched_matmul inner dims " + std::to_string(kk) + " vs " +
                        std::to_string(k));
  }
  const std::size_t ga = lhs_shared ? 1 : groups;
  if (av.dim(0) % ga != 0) throw ShapeMismatch("batched_matmul lhs rows not divisible by group count");
  const std::size_t m = av.dim(0) / ga;
  Tensor out(Shape{groups * m, p});
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t ao = (ga == 1 ? 0 : g) * m * k;
    detail::view(out, m, p, g * m * p).noalias() =
        detail::view(av, m, k, ao) * detail::view(bv, k, p, g * k * p);
  }
  const std::size_t aid = a.id(), bid = b.id();
  return tape.record(std::move(out), {aid, bid}, [=](Tape& t, const Tensor& gr) {
    const bool need_a = t.requires_grad(aid);
    const bool need_b = t.requires_grad(bid);
    Tensor* ga_buf = need_a ? &t.grad_buffer(aid) : nullptr;
    Tensor* gb_buf = need_b ? &t.grad_buffer(bid) : nullptr;
    const Tensor& x = t.value(aid);
    const Tensor& y = t.value(bid);
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t ao = (ga == 1 ? 0 : g) * m * k;
      auto gv = detail::view(gr, m, p, g * m * p);
      if (need_a) {
        detail::view(*ga_buf, m, k, ao).noalias() +=
            gv * detail::view(y, k, p, g * k * p).transpose();
      }
      if (need_b) {
        detail::view(*gb_buf, k, p, g * k * p).noalias() +=
            detail::view(x, m, k, ao).transpose() * gv;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities
// ---------------------------------------------------------------------------

namespace detail {

/// f maps x -> y; df maps (x, y) -> dy/dx.
template <class F, class DF>
Var pointwise(const Var& x, F f, DF df) {
  Tape& tape = common_tape(x);
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  const std::size_t xid = x.id();
  const std::size_t yid = tape.size();
  return tape.record(std::move(out), {xid}, [=](Tape& t, const Tensor& g) {
    const Tensor& in = t.value(xid);
    const Tensor& y = t.value(yid);
    Tensor& gx = t.grad_buffer(xid);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(in[i], y[i]);
  });
}

inline double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

inline Var relu(const Var& x) {
  return detail::pointwise(
      x, [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

inline Var leaky_relu(const Var& x, double slope = 0.2) {
  return detail::pointwise(
      x, [slope](double v) { return v > 0 ? v : slope * v; },
      [slope](double v, double) { return v > 0 ? 1.0 : slope; });
}

inline Var sigmoid(const Var& x) {
  return detail::pointwise(
      x, [](double v) { return detail::sigmoid_value(v); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(const Var& x) {
  return detail::pointwise(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var square(const Var& x) {
  return detail::pointwise(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

inline Var activate(const Var& x, Activation act, double leaky_slope = 0.2) {
  switch (act) {
    case Activation::linear: return x;
    case Activation::relu: return relu(x);
    case Activation::leaky_relu: return leaky_relu(x, leaky_slope);
    case Activation::sigmoid: return sigmoid(x);
    case Activation::tanh: return tanh(x);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Var sum(const Var& x) {
  Tape& tape = detail::common_tape(x);
  const Tensor& xv = x.value();
  double s = 0.0;
  for (double v : xv.data()) s += v;
  const std::size_t xid = x.id();
  return tape.record(Tensor::scalar(s), {xid}, [=](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(xid);
    for (double& v : gx.data()) v += g[0];
  });
}

inline Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

/// Mean squared difference between prediction and a target of equal shape.
inline Var mse(const Var& prediction, const Var& target) {
  return mean(square(sub(prediction, target)));
}

// ---------------------------------------------------------------------------
// Masked softmax. `mask` has mask_rows·n entries; row r of scores uses mask
// row (r mod mask_rows). Masked entries are exactly zero in the output.
// ---------------------------------------------------------------------------

inline Var softmax_masked(const Var& scores, const std::vector<std::uint8_t>& mask) {
  Tape& tape = detail::common_tape(scores);
  const Tensor& sv = scores.value();
  const std::size_t n = sv.cols();
  const std::size_t rows = sv.rows();
  if (mask.empty() || mask.size() % n != 0) {
    throw ShapeMismatch("mask length " + std::to_string(mask.size()) +
                        " incompatible with score width " + std::to_string(n));
  }
  const std::size_t mask_rows = mask.size() / n;
  Tensor out(sv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const std::uint8_t* mrow = mask.data() + (r % mask_rows) * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (mrow[j]) mx = std::max(mx, sv[r * n + j]);
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw EmptyNeighborhood("softmax row " + std::to_string(r) + " has no unmasked entry");
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!mrow[j]) continue;
      const double e = std::exp(sv[r * n + j] - mx);
      out[r * n + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] /= z;
  }
  const std::size_t sid = scores.id();
  const std::size_t yid = tape.size();
  return tape.record(std::move(out), {sid}, [=](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(yid);
    Tensor& gs = t.grad_buffer(sid);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
      for (std::size_t j = 0; j < n; ++j) gs[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
    }
  });
}

inline Var softmax_masked(const Var& scores, const std::vector<bool>& mask) {
  return softmax_masked(scores, std::vector<std::uint8_t>(mask.begin(), mask.end()));
}

/// Pairwise score table for graph attention over `groups` stacked graphs of n nodes:
/// out[g·n+i, j] = src[g·n+i] + dst[g·n+j]. src/dst are column vectors [groups·n × 1].
inline Var pair_scores(const Var& src, const Var& dst, std::size_t n) {
  Tape& tape = detail::common_tape(src, dst);
  const Tensor& s = src.value();
  const Tensor& d = dst.value();
  if (s.size() != d.size() || n == 0 || s.size() % n != 0) {
    throw ShapeMismatch("pair_scores operands " + shape_str(s.shape()) + ", " +
                        shape_str(d.shape()));
  }
  const std::size_t groups = s.size() / n;
  Tensor out(Shape{groups * n, n});
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) out[(g * n + i) * n + j] = s[g * n + i] + d[g * n + j];
  const std::size_t sid = src.id(), did = dst.id();
  return tape.record(std::move(out), {sid, did}, [=](Tape& t, const Tensor& gr) {
    const bool need_s = t.requires_grad(sid), need_d = t.requires_grad(did);
    Tensor* gs = need_s ? &t.grad_buffer(sid) : nullptr;
    Tensor* gd = need_d ? &t.grad_buffer(did) : nullptr;
    for (std::size_t g = 0; g < groups; ++g)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double v = gr[(g * n + i) * n + j];
          if (need_s) (*gs)[g * n + i] += v;
          if (need_d) (*gd)[g * n + j] += v;
        }
  });
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

/// out.flat[i] = x.flat[index[i]]; gradient scatters back (repeats accumulate).
inline Var gather(const Var& x, std::vector<std::size_t> index, Shape out_shape) {
  Tape& tape = detail::common_tape(x);
  const Tensor& xv = x.value();
  if (shape_size(out_shape) != index.size()) {
    throw ShapeMismatch("gather index count does not fill " + shape_str(out_shape));
  }
  Tensor out(std::move(out_shape));
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= xv.size()) throw ShapeMismatch("gather index out of range");
    out[i] = xv[index[i]];
  }
  const std::size_t xid = x.id();
  return tape.record(std::move(out), {xid}, [=, idx = std::move(index)](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(xid);
    for (std::size_t i = 0; i < idx.size(); ++i) gx[idx[i]] += g[i];
  });
}

inline Var reshape(const Var& x, Shape shape) {
  Tape& tape = detail::common_tape(x);
  Tensor out = x.value().reshaped(shape);
  const std::size_t xid = x.id();
  return tape.record(std::move(out), {xid}, [=](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(xid);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

/// Contiguous row block [start, start+count) of a matrix.
inline Var slice_rows(const Var& x, std::size_t start, std::size_t count) {
  Tape& tape = detail::common_tape(x);
  const Tensor& xv = x.value();
  detail::require_matrix(xv, "slice_rows");
  const std::size_t n = xv.dim(1);
  if (start + count > xv.dim(0)) throw ShapeMismatch("slice_rows out of range");
  Tensor out(Shape{count, n},
             std::vector<double>(xv.data().begin() + static_cast<std::ptrdiff_t>(start * n),
                                 xv.data().begin() + static_cast<std::ptrdiff_t>((start + count) * n)));
  const std::size_t xid = x.id();
  return tape.record(std::move(out), {xid}, [=](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(xid);
    for (std::size_t i = 0; i < count * n; ++i) gx[start * n + i] += g[i];
  });
}

/// Column block [start, start+count) of a matrix.
inline Var slice_cols(const Var& x, std::size_t start, std::size_t count) {
  Tape& tape = detail::common_tape(x);
  const Tensor& xv = x.value();
  detail::require_matrix(xv, "slice_cols");
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  if (start + count > n) throw ShapeMismatch("slice_cols out of range");
  Tensor out(Shape{m, count});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < count; ++c) out[r * count + c] = xv[r * n + start + c];
  const std::size_t xid = x.id();
  return tape.record(std::move(out), {xid}, [=](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(xid);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < count; ++c) gx[r * n + start + c] += g[r * count + c];
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_cols of nothing");
  Tape& tape = detail::common_tape(parts.front());
  const std::size_t m = parts.front().value().rows();
  std::vector<std::size_t> widths, ids;
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.tape() != &tape) throw DetachedTensor("concat operands on different tapes");
    detail::require_matrix(p.value(), "concat_cols");
    if (p.value().dim(0) != m) throw ShapeMismatch("concat_cols row counts differ");
    widths.push_back(p.value().dim(1));
    ids.push_back(p.id());
    total += widths.back();
  }
  Tensor out(Shape{m, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < widths[k]; ++c) out[r * total + off + c] = v[r * widths[k] + c];
    off += widths[k];
  }
  std::vector<std::size_t> inputs = ids;
  return tape.record(std::move(out), std::move(inputs), [=](Tape& t, const Tensor& g) {
    std::size_t o = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.requires_grad(ids[k])) {
        Tensor& gk = t.grad_buffer(ids[k]);
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < widths[k]; ++c) gk[r * widths[k] + c] += g[r * total + o + c];
      }
      o += widths[k];
    }
  });
}

}  // namespace stormnet
