#pragma once

// Differentiable layers over node-feature matrices.
//
// Node features are stored row-wise: an input holds `groups` stacked graphs of
// N nodes each, so X is [groups·N × F]. Spatial layers treat each group as an
// independent copy of the same graph; dense layers act on every row.

#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "stormnet/autodiff.hpp"
#include "stormnet/error.hpp"
#include "stormnet/geo_graph.hpp"

namespace stormnet {

// ---------------------------------------------------------------------------
// Parameter registry
// ---------------------------------------------------------------------------

/// Named parameter tensors in creation order.
class ParameterSet {
 public:
  std::size_t add(const std::string& name, Tensor value) {
    if (index_.count(name)) throw InvalidSpec("duplicate parameter name '" + name + "'");
    index_[name] = values_.size();
    names_.push_back(name);
    values_.push_back(std::move(value));
    return values_.size() - 1;
  }

  std::size_t size() const noexcept { return values_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  std::vector<Tensor>& values() noexcept { return values_; }
  const std::vector<Tensor>& values() const noexcept { return values_; }
  Tensor& operator[](std::size_t i) { return values_.at(i); }
  const Tensor& operator[](std::size_t i) const { return values_.at(i); }
  Tensor& at(const std::string& name) { return values_.at(index_.at(name)); }
  const Tensor& at(const std::string& name) const { return values_.at(index_.at(name)); }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const Tensor& t : values_) n += t.size();
    return n;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::map<std::string, std::size_t> index_;
};

/// Parameters placed on a tape for one forward pass.
struct BoundParameters {
  std::vector<Var> vars;
  const Var& operator[](std::size_t i) const { return vars.at(i); }
};

inline BoundParameters bind(Tape& tape, const ParameterSet& params, bool requires_grad = true) {
  BoundParameters b;
  b.vars.reserve(params.size());
  for (const Tensor& t : params.values()) b.vars.push_back(tape.leaf(t, requires_grad));
  return b;
}

using Rng = std::mt19937_64;

inline Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  return Tensor::uniform(std::move(shape), std::sqrt(1.0 / static_cast<double>(fan_in)), rng);
}

// ---------------------------------------------------------------------------
// Graph context: fixed matrices derived from a StationGraph
// ---------------------------------------------------------------------------

enum class GcnNorm { symmetric, row, none };

inline std::string to_string(GcnNorm n) {
  switch (n) {
    case GcnNorm::symmetric: return "symmetric";
    case GcnNorm::row: return "row";
    case GcnNorm::none: return "none";
  }
  return "symmetric";
}

inline GcnNorm gcn_norm_from_string(const std::string& s) {
  if (s == "symmetric") return GcnNorm::symmetric;
  if (s == "row") return GcnNorm::row;
  if (s == "none") return GcnNorm::none;
  throw InvalidSpec("unknown GCN normalization '" + s + "'");
}

struct GraphContext {
  std::size_t n = 0;
  std::vector<std::uint8_t> mask;  // N×N neighbourhood including self-loops
  Tensor propagation;              // N×N GCN operator: coefficient / c_ij
  Tensor weights;                  // N×N edge weights, self-loops weighted 1
};

/// `adjacency` is a dense N×N weight matrix without self-loops (0 = no edge).
inline GraphContext make_graph_context(std::size_t n, const std::vector<double>& adjacency,
                                       GcnNorm norm = GcnNorm::symmetric, bool weighted_messages = true) {
  if (n == 0 || adjacency.size() != n * n) throw ShapeMismatch("adjacency must be N×N with N > 0");
  GraphContext g;
  g.n = n;
  g.mask.assign(n * n, 0);
  g.weights = Tensor(Shape{n, n});
  std::vector<double> degree(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const bool edge = i == j || adjacency[i * n + j] != 0.0;
      if (!edge) continue;
      g.mask[i * n + j] = 1;
      g.weights[i * n + j] = i == j ? 1.0 : adjacency[i * n + j];
      degree[i] += 1.0;
    }
  g.propagation = Tensor(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (!g.mask[i * n + j]) continue;
      double c = 1.0;
      if (norm == GcnNorm::symmetric) c = std::sqrt(degree[i] * degree[j]);
      if (norm == GcnNorm::row) c = degree[i];
      g.propagation[i * n + j] = (weighted_messages ? g.weights[i * n + j] : 1.0) / c;
    }
  return g;
}

inline GraphContext make_graph_context(const StationGraph& graph, GcnNorm norm = GcnNorm::symmetric,
                                       bool weighted_messages = true) {
  return make_graph_context(graph.size(), graph.adjacency(), norm, weighted_messages);
}

namespace detail {

inline std::size_t group_count(const Var& x, const GraphContext& g, const char* who) {
  const std::size_t rows = x.value().rows();
  if (x.value().rank() != 2 || rows % g.n != 0) {
    throw ShapeMismatch(std::string(who) + ": input " + shape_str(x.shape()) +
                        " is not a stack of graphs with " + std::to_string(g.n) + " nodes");
  }
  return rows / g.n;
}

inline void require_width(const Var& x, std::size_t width, const char* who) {
  if (x.value().rank() != 2 || x.value().cols() != width) {
    throw ShapeMismatch(std::string(who) + ": expected " + std::to_string(width) + " input features, got " +
                        shape_str(x.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dense layer
// ---------------------------------------------------------------------------

struct MlpLayer {
  std::size_t in = 0, out = 0;
  Activation act = Activation::relu;
  std::size_t weight = 0, bias = 0;

  MlpLayer() = default;
  MlpLayer(ParameterSet& ps, const std::string& name, std::size_t in_features, std::size_t out_features,
           Activation activation, Rng& rng)
      : in(in_features), out(out_features), act(activation) {
    weight = ps.add(name + ".weight", init_uniform({in, out}, in, rng));
    bias = ps.add(name + ".bias", init_uniform({out}, in, rng));
  }

  Var forward(const BoundParameters& p, const Var& x) const {
    detail::require_width(x, in, "mlp");
    return activate(add_bias(matmul(x, p[weight]), p[bias]), act);
  }
};

// ---------------------------------------------------------------------------
// Graph convolution: σ(Σ_{j∈N(i)∪{i}} (w_ij / c_ij) · h_j φ + b)
// ---------------------------------------------------------------------------

struct GcnLayer {
  std::size_t in = 0, out = 0;
  Activation act = Activation::relu;
  std::size_t weight = 0, bias = 0;

  GcnLayer() = default;
  GcnLayer(ParameterSet& ps, const std::string& name, std::size_t in_features, std::size_t out_features,
           Activation activation, Rng& rng)
      : in(in_features), out(out_features), act(activation) {
    weight = ps.add(name + ".weight", init_uniform({in, out}, in, rng));
    bias = ps.add(name + ".bias", init_uniform({out}, in, rng));
  }

  Var forward(const BoundParameters& p, const Var& x, const GraphContext& g) const {
    detail::require_width(x, in, "gcn");
    const std::size_t groups = detail::group_count(x, g, "gcn");
    Tape& tape = *x.tape();
    const Var prop = tape.constant(g.propagation);
    const Var mixed = batched_matmul(prop, matmul(x, p[weight]), groups, /*lhs_shared=*/true);
    return activate(add_bias(mixed, p[bias]), act);
  }
};

// ---------------------------------------------------------------------------
// Multi-head graph attention
// ---------------------------------------------------------------------------

enum class HeadMerge { concat, average };

inline std::string to_string(HeadMerge m) { return m == HeadMerge::concat ? "concat" : "average"; }

inline HeadMerge head_merge_from_string(const std::string& s) {
  if (s == "concat") return HeadMerge::concat;
  if (s == "average" || s == "mean") return HeadMerge::average;
  throw InvalidSpec("unknown head merge '" + s + "'");
}

struct GatOutput {
  Var features;
  std::vector<Var> attention;  // one [groups·N × N] matrix per head
};

struct GatLayer {
  std::size_t in = 0, head_width = 0, heads = 1;
  HeadMerge merge = HeadMerge::concat;
  Activation act = Activation::relu;
  double slope = 0.2;
  bool edge_weights = false;  // add ρ_ij to the raw score of each edge
  std::size_t weight = 0;     // [F × K·F'], head k in columns k·F' .. (k+1)·F'
  std::vector<std::size_t> attn_src, attn_dst;  // per head, [F' × 1]

  GatLayer() = default;
  GatLayer(ParameterSet& ps, const std::string& name, std::size_t in_features, std::size_t head_features,
           std::size_t head_count, HeadMerge merge_mode, Activation activation, Rng& rng)
      : in(in_features), head_width(head_features), heads(head_count), merge(merge_mode), act(activation) {
    if (heads == 0) throw InvalidSpec("GAT needs at least one head");
    weight = ps.add(name + ".weight", init_uniform({in, heads * head_width}, in, rng));
    for (std::size_t k = 0; k < heads; ++k) {
      const std::string h = name + ".head" + std::to_string(k);
      attn_src.push_back(ps.add(h + ".attn_src", init_uniform({head_width, 1}, 2 * head_width, rng)));
      attn_dst.push_back(ps.add(h + ".attn_dst", init_uniform({head_width, 1}, 2 * head_width, rng)));
    }
  }

  std::size_t out_width() const { return merge == HeadMerge::concat ? heads * head_width : head_width; }

  GatOutput forward_detailed(const BoundParameters& p, const Var& x, const GraphContext& g) const {
    detail::require_width(x, in, "gat");
    const std::size_t groups = detail::group_count(x, g, "gat");
    Tape& tape = *x.tape();
    const Var projected = matmul(x, p[weight]);
    std::optional<Var> bias_scores;
    if (edge_weights) bias_scores = tape.constant(repeat_rows(g.weights, groups));
    GatOutput out;
    std::vector<Var> per_head;
    for (std::size_t k = 0; k < heads; ++k) {
      const Var wh = heads == 1 ? projected : slice_cols(projected, k * head_width, head_width);
      Var scores = pair_scores(matmul(wh, p[attn_src[k]]), matmul(wh, p[attn_dst[k]]), g.n);
      scores = leaky_relu(scores, slope);
      if (bias_scores) scores = add(scores, *bias_scores);
      const Var alpha = softmax_masked(scores, g.mask);
      out.attention.push_back(alpha);
      const Var agg = batched_matmul(alpha, wh, groups);
      per_head.push_back(merge == HeadMerge::concat ? activate(agg, act) : agg);
    }
    if (merge == HeadMerge::concat) {
      out.features = per_head.size() == 1 ? per_head.front() : concat_cols(per_head);
    } else {
      Var total = per_head.front();
      for (std::size_t k = 1; k < heads; ++k) total = add(total, per_head[k]);
      out.features = activate(scale(total, 1.0 / static_cast<double>(heads)), act);
    }
    return out;
  }

  Var forward(const BoundParameters& p, const Var& x, const GraphContext& g) const {
    return forward_detailed(p, x, g).features;
  }

 private:
  static Tensor repeat_rows(const Tensor& t, std::size_t times) {
    Tensor out(Shape{t.dim(0) * times, t.dim(1)});
    for (std::size_t r = 0; r < times; ++r)
      std::copy(t.data().begin(), t.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(r * t.size()));
    return out;
  }
};

// ---------------------------------------------------------------------------
// LSTM (gate order i, f, g, o)
// ---------------------------------------------------------------------------

namespace detail {

/// Whole-sequence LSTM recurrence. `input_gates` is [T·R × 4H] holding
/// x_t·W_x + b for each step t (blocks of R rows); `w_hidden` is [H × 4H].
/// Output: hidden states [T·R × H]. Gradients flow by backpropagation through time.
inline Var lstm_sequence(const Var& input_gates, const Var& w_hidden, std::size_t steps) {
  Tape& tape = common_tape(input_gates, w_hidden);
  const Tensor& xg = input_gates.value();
  const Tensor& wh = w_hidden.value();
  require_matrix(xg, "lstm input gates");
  require_matrix(wh, "lstm hidden weights");
  const std::size_t hsz = wh.dim(0);
  if (wh.dim(1) != 4 * hsz || xg.dim(1) != 4 * hsz || xg.dim(0) % steps != 0) {
    throw ShapeMismatch("lstm_sequence: gates " + shape_str(xg.shape()) + " vs hidden weights " +
                        shape_str(wh.shape()));
  }
  const std::size_t rows = xg.dim(0) / steps, g4 = 4 * hsz, block = rows * hsz;

  // Cache of activated gates [T·R × 4H] and cell states / tanh(cell) [T·R × H].
  struct Cache {
    Tensor act, cell, cell_tanh;
  };
  auto cache = std::make_shared<Cache>(Cache{Tensor(xg.shape()), Tensor(Shape{steps * rows, hsz}),
                                             Tensor(Shape{steps * rows, hsz})});
  Tensor out(Shape{steps * rows, hsz});
  RowMatrix pre(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(g4));
  for (std::size_t t = 0; t < steps; ++t) {
    pre = view(xg, rows, g4, t * rows * g4);
    if (t > 0) pre.noalias() += view(out, rows, hsz, (t - 1) * block) * view(wh, hsz, g4);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* z = pre.data() + r * g4;
      double* a = cache->act.data().data() + (t * rows + r) * g4;
      const std::size_t cell_at = (t * rows + r) * hsz;
      for (std::size_t k = 0; k < hsz; ++k) {
        const double i = sigmoid_value(z[k]);
        const double f = sigmoid_value(z[hsz + k]);
        const double g = std::tanh(z[2 * hsz + k]);
        const double o = sigmoid_value(z[3 * hsz + k]);
        a[k] = i;
        a[hsz + k] = f;
        a[2 * hsz + k] = g;
        a[3 * hsz + k] = o;
        const double prev = t > 0 ? cache->cell[cell_at - block + k] : 0.0;
        const double c = f * prev + i * g;
        const double tc = std::tanh(c);
        cache->cell[cell_at + k] = c;
        cache->cell_tanh[cell_at + k] = tc;
        out[cell_at + k] = o * tc;
      }
    }
  }

  const std::size_t xid = input_gates.id(), wid = w_hidden.id();
  const std::size_t yid = tape.size();
  return tape.record(std::move(out), {xid, wid}, [=](Tape& tp, const Tensor& gout) {
    const Tensor& h = tp.value(yid);
    const Tensor& w = tp.value(wid);
    const bool need_x = tp.requires_grad(xid), need_w = tp.requires_grad(wid);
    Tensor* gx = need_x ? &tp.grad_buffer(xid) : nullptr;
    Tensor* gw = need_w ? &tp.grad_buffer(wid) : nullptr;
    RowMatrix dgates(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(g4));
    RowMatrix dh_next = RowMatrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(hsz));
    std::vector<double> dc_next(block, 0.0);
    for (std::size_t t = steps; t-- > 0;) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* a = cache->act.data().data() + (t * rows + r) * g4;
        double* d = dgates.data() + r * g4;
        const std::size_t cell_at = (t * rows + r) * hsz;
        for (std::size_t k = 0; k < hsz; ++k) {
          const double i = a[k], f = a[hsz + k], g = a[2 * hsz + k], o = a[3 * hsz + k];
          const double tc = cache->cell_tanh[cell_at + k];
          const double prev = t > 0 ? cache->cell[cell_at - block + k] : 0.0;
          const double dh = gout[cell_at + k] + dh_next(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k));
          const double dc = dh * o * (1.0 - tc * tc) + dc_next[r * hsz + k];
          d[k] = dc * g * i * (1.0 - i);
          d[hsz + k] = dc * prev * f * (1.0 - f);
          d[2 * hsz + k] = dc * i * (1.0 - g * g);
          d[3 * hsz + k] = dh * tc * o * (1.0 - o);
          dc_next[r * hsz + k] = dc * f;
        }
      }
      if (need_x) view(*gx, rows, g4, t * rows * g4) += dgates;
      if (t > 0) {
        if (need_w) view(*gw, hsz, g4).noalias() += view(h, rows, hsz, (t - 1) * block).transpose() * dgates;
        dh_next.noalias() = dgates * view(w, hsz, g4).transpose();
      }
    }
  });
}

}  // namespace detail

struct LstmState {
  Var h;
  Var c;
  bool empty() const { return !h.attached(); }
};

struct LstmLayer {
  std::size_t in = 0, hidden = 0;
  std::size_t w_input = 0, w_hidden = 0, bias = 0;

  LstmLayer() = default;
  LstmLayer(ParameterSet& ps, const std::string& name, std::size_t in_features, std::size_t hidden_size, Rng& rng)
      : in(in_features), hidden(hidden_size) {
    w_input = ps.add(name + ".w_input", init_uniform({in, 4 * hidden}, hidden, rng));
    w_hidden = ps.add(name + ".w_hidden", init_uniform({hidden, 4 * hidden}, hidden, rng));
    bias = ps.add(name + ".bias", init_uniform({4 * hidden}, hidden, rng));
  }

  /// One step from precomputed input gates x_t·W_x + b. An empty state means zeros.
  LstmState step_from_gates(const BoundParameters& p, const Var& input_gates, const LstmState& state) const {
    const Var gates = state.empty() ? input_gates : add(input_gates, matmul(state.h, p[w_hidden]));
    const Var i = sigmoid(slice_cols(gates, 0, hidden));
    const Var g = tanh(slice_cols(gates, 2 * hidden, hidden));
    const Var o = sigmoid(slice_cols(gates, 3 * hidden, hidden));
    Var c = mul(i, g);
    if (!state.empty()) c = add(mul(sigmoid(slice_cols(gates, hidden, hidden)), state.c), c);
    return {mul(o, tanh(c)), c};
  }

  LstmState step(const BoundParameters& p, const Var& x, const LstmState& state) const {
    detail::require_width(x, in, "lstm");
    if (!state.empty() && state.h.value().rows() != x.value().rows()) {
      throw ShapeMismatch("lstm: state rows differ from input rows");
    }
    return step_from_gates(p, add_bias(matmul(x, p[w_input]), p[bias]), state);
  }

  /// Runs a sequence stored as `steps` stacked blocks of equal height from zero
  /// state, one graph op for the whole recurrence. Returns every hidden state,
  /// stacked the same way: [steps·block × H].
  Var run(const BoundParameters& p, const Var& sequence, std::size_t steps) const {
    detail::require_width(sequence, in, "lstm");
    const std::size_t rows = sequence.value().rows();
    if (steps == 0 || rows % steps != 0) throw ShapeMismatch("lstm: sequence rows not divisible by steps");
    return detail::lstm_sequence(add_bias(matmul(sequence, p[w_input]), p[bias]), p[w_hidden], steps);
  }

  /// Same recurrence built from primitive ops, one step at a time.
  std::vector<Var> run_stepwise(const BoundParameters& p, const Var& sequence, std::size_t steps) const {
    detail::require_width(sequence, in, "lstm");
    const std::size_t rows = sequence.value().rows();
    if (steps == 0 || rows % steps != 0) throw ShapeMismatch("lstm: sequence rows not divisible by steps");
    const std::size_t block = rows / steps;
    const Var all_gates = add_bias(matmul(sequence, p[w_input]), p[bias]);
    LstmState state;
    std::vector<Var> hs;
    for (std::size_t t = 0; t < steps; ++t) {
      const Var gates = steps == 1 ? all_gates : slice_rows(all_gates, t * block, block);
      state = step_from_gates(p, gates, state);
      hs.push_back(state.h);
    }
    return hs;
  }
};

}  // namespace stormnet
