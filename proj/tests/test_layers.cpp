#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "gradcheck.hpp"
#include "stormnet/layers.hpp"

using namespace stormnet;
using stormnet::testing::grad_check;

namespace {

std::vector<double> adjacency(std::size_t n, const std::vector<std::tuple<std::size_t, std::size_t, double>>& edges) {
  std::vector<double> a(n * n, 0.0);
  for (auto [i, j, w] : edges) a[i * n + j] = a[j * n + i] = w;
  return a;
}

std::vector<double> random_adjacency(std::size_t n, double p, Rng& rng) {
  std::bernoulli_distribution coin(p);
  std::uniform_real_distribution<double> w(0.8, 1.0);
  std::vector<double> a(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (coin(rng)) a[i * n + j] = a[j * n + i] = w(rng);
  return a;
}

std::vector<double> permute_adjacency(const std::vector<double>& a, const std::vector<std::size_t>& perm) {
  const std::size_t n = perm.size();
  std::vector<double> out(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a[perm[i] * n + perm[j]];
  return out;
}

Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t c = 0; c < x.cols(); ++c) out[i * x.cols() + c] = x.at(perm[i], c);
  return out;
}

Tensor random_tensor(Shape s, Rng& rng) { return Tensor::uniform(std::move(s), 1.0, rng); }

// Runs a layer on fresh tape with the parameter set bound as constants.
template <class F>
Tensor run(const ParameterSet& ps, const Tensor& x, F f) {
  Tape tape;
  const BoundParameters p = bind(tape, ps, false);
  return f(p, tape.constant(x)).value();
}

// Gradient check over every parameter of `ps` and the input.
template <class F>
double check_layer(const ParameterSet& ps, const Tensor& x, const Tensor& target, F f) {
  std::vector<Tensor> all = ps.values();
  all.push_back(x);
  const auto build = [&](Tape& tape, const std::vector<Var>& vars) {
    BoundParameters p{std::vector<Var>(vars.begin(), vars.end() - 1)};
    return mse(f(p, vars.back()), tape.constant(target));
  };
  return grad_check(all, build).max_rel_error;
}

}  // namespace

// ---------------------------------------------------------------------------
// MLP
// ---------------------------------------------------------------------------

TEST(Mlp, IdentityIsPassThrough) {
  Rng rng(1);
  ParameterSet ps;
  MlpLayer mlp(ps, "m", 3, 3, Activation::linear, rng);
  ps[mlp.weight] = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  ps[mlp.bias] = Tensor(Shape{3});
  const Tensor x = random_tensor({4, 3}, rng);
  EXPECT_EQ(run(ps, x, [&](auto& p, Var v) { return mlp.forward(p, v); }), x);
}

TEST(Mlp, ZeroWeightGivesActivatedBias) {
  Rng rng(2);
  ParameterSet ps;
  MlpLayer mlp(ps, "m", 2, 3, Activation::sigmoid, rng);
  ps[mlp.weight] = Tensor(Shape{2, 3});
  ps[mlp.bias] = Tensor::vector({-1, 0, 2});
  const Tensor y = run(ps, random_tensor({5, 2}, rng), [&](auto& p, Var v) { return mlp.forward(p, v); });
  for (std::size_t r = 0; r < 5; ++r) {
    EXPECT_DOUBLE_EQ(y.at(r, 0), 1 / (1 + std::exp(1.0)));
    EXPECT_DOUBLE_EQ(y.at(r, 1), 0.5);
    EXPECT_DOUBLE_EQ(y.at(r, 2), 1 / (1 + std::exp(-2.0)));
  }
}

TEST(Mlp, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(seed);
    ParameterSet ps;
    MlpLayer mlp(ps, "m", 3, 4, Activation::tanh, rng);
    const double err = check_layer(ps, random_tensor({6, 3}, rng), random_tensor({6, 4}, rng),
                                   [&](auto& p, Var v) { return mlp.forward(p, v); });
    EXPECT_LT(err, 1e-4);
  }
}

TEST(Mlp, WrongWidthRejected) {
  Rng rng(3);
  ParameterSet ps;
  MlpLayer mlp(ps, "m", 3, 2, Activation::linear, rng);
  EXPECT_THROW(run(ps, Tensor(Shape{2, 4}), [&](auto& p, Var v) { return mlp.forward(p, v); }), ShapeMismatch);
}

// ---------------------------------------------------------------------------
// GCN
// ---------------------------------------------------------------------------

TEST(Gcn, IsolatedNodeIsIdentity) {
  Rng rng(4);
  ParameterSet ps;
  GcnLayer gcn(ps, "g", 2, 2, Activation::linear, rng);
  ps[gcn.weight] = Tensor::matrix({{1, 0}, {0, 1}});
  ps[gcn.bias] = Tensor(Shape{2});
  const GraphContext g = make_graph_context(1, {0.0});
  const Tensor x = Tensor::matrix({{0.3, -1.7}});
  EXPECT_EQ(run(ps, x, [&](auto& p, Var v) { return gcn.forward(p, v, g); }), x);
}

TEST(Gcn, TwoNodesShareMassEvenly) {
  Rng rng(5);
  ParameterSet ps;
  GcnLayer gcn(ps, "g", 1, 1, Activation::linear, rng);
  ps[gcn.weight] = Tensor::matrix({{1}});
  ps[gcn.bias] = Tensor(Shape{1});
  const GraphContext g = make_graph_context(2, adjacency(2, {{0, 1, 1.0}}));
  const Tensor y = run(ps, Tensor::matrix({{3.0}, {0.0}}), [&](auto& p, Var v) { return gcn.forward(p, v, g); });
  EXPECT_DOUBLE_EQ(y[0], 1.5);
  EXPECT_DOUBLE_EQ(y[1], 1.5);
}

TEST(Gcn, SymmetricNormalizationByHand) {
  // Path 0-1-2 with weights 0.9 and 0.8; degrees with self-loops are 2, 3, 2.
  const GraphContext g = make_graph_context(3, adjacency(3, {{0, 1, 0.9}, {1, 2, 0.8}}));
  EXPECT_DOUBLE_EQ(g.propagation[0 * 3 + 0], 1.0 / 2.0);
  EXPECT_DOUBLE_EQ(g.propagation[0 * 3 + 1], 0.9 / std::sqrt(6.0));
  EXPECT_DOUBLE_EQ(g.propagation[1 * 3 + 1], 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(g.propagation[2 * 3 + 1], 0.8 / std::sqrt(6.0));
  EXPECT_EQ(g.propagation[0 * 3 + 2], 0.0);
  const GraphContext row = make_graph_context(3, adjacency(3, {{0, 1, 0.9}, {1, 2, 0.8}}), GcnNorm::row, false);
  EXPECT_DOUBLE_EQ(row.propagation[1 * 3 + 0], 1.0 / 3.0);
  const GraphContext none = make_graph_context(3, adjacency(3, {{0, 1, 0.9}}), GcnNorm::none, true);
  EXPECT_DOUBLE_EQ(none.propagation[0 * 3 + 1], 0.9);
}

TEST(Gcn, ZeroInputGivesActivatedBias) {
  Rng rng(6);
  ParameterSet ps;
  GcnLayer gcn(ps, "g", 3, 2, Activation::relu, rng);
  ps[gcn.bias] = Tensor::vector({-0.5, 0.25});
  const GraphContext g = make_graph_context(4, random_adjacency(4, 0.5, rng));
  const Tensor y = run(ps, Tensor(Shape{4, 3}), [&](auto& p, Var v) { return gcn.forward(p, v, g); });
  for (std::size_t r = 0; r < 4; ++r) {
    EXPECT_EQ(y.at(r, 0), 0.0);
    EXPECT_EQ(y.at(r, 1), 0.25);
  }
}

TEST(Gcn, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(seed);
    ParameterSet ps;
    GcnLayer gcn(ps, "g", 3, 4, Activation::tanh, rng);
    const GraphContext g = make_graph_context(5, random_adjacency(5, 0.5, rng));
    // Two stacked graphs exercise the batched path.
    const double err = check_layer(ps, random_tensor({10, 3}, rng), random_tensor({10, 4}, rng),
                                   [&](auto& p, Var v) { return gcn.forward(p, v, g); });
    EXPECT_LT(err, 1e-4);
  }
}

// ---------------------------------------------------------------------------
// GAT
// ---------------------------------------------------------------------------

TEST(Gat, ZeroAttentionVectorIsUniform) {
  Rng rng(7);
  ParameterSet ps;
  GatLayer gat(ps, "a", 2, 3, 1, HeadMerge::concat, Activation::linear, rng);
  ps[gat.attn_src[0]] = Tensor(Shape{3, 1});
  ps[gat.attn_dst[0]] = Tensor(Shape{3, 1});
  const GraphContext g = make_graph_context(4, adjacency(4, {{0, 1, 1}, {0, 2, 1}, {0, 3, 1}}));
  Tape tape;
  const auto p = bind(tape, ps, false);
  const GatOutput out = gat.forward_detailed(p, tape.constant(random_tensor({4, 2}, rng)), g);
  const Tensor& a = out.attention[0].value();
  for (std::size_t j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(a.at(0, j), 0.25);
  EXPECT_DOUBLE_EQ(a.at(1, 0), 0.5);
  EXPECT_DOUBLE_EQ(a.at(1, 1), 0.5);
  EXPECT_EQ(a.at(1, 2), 0.0);
}

TEST(Gat, IsolatedNodeAttendsToItself) {
  Rng rng(8);
  ParameterSet ps;
  GatLayer gat(ps, "a", 2, 2, 1, HeadMerge::concat, Activation::tanh, rng);
  const GraphContext g = make_graph_context(1, {0.0});
  const Tensor x = random_tensor({1, 2}, rng);
  Tape tape;
  const auto p = bind(tape, ps, false);
  const GatOutput out = gat.forward_detailed(p, tape.constant(x), g);
  EXPECT_EQ(out.attention[0].value()[0], 1.0);
  const Tensor& w = ps[gat.weight];
  for (std::size_t c = 0; c < 2; ++c) {
    const double wh = x[0] * w.at(0, c) + x[1] * w.at(1, c);
    EXPECT_NEAR(out.features.value()[c], std::tanh(wh), 1e-15);
  }
}

TEST(Gat, AttentionRowsAreDistributionsOverNeighbourhood) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    ParameterSet ps;
    GatLayer gat(ps, "a", 3, 4, 3, HeadMerge::concat, Activation::relu, rng);
    const std::size_t n = 6;
    const GraphContext g = make_graph_context(n, random_adjacency(n, 0.4, rng));
    Tape tape;
    const auto p = bind(tape, ps, false);
    const GatOutput out = gat.forward_detailed(p, tape.constant(random_tensor({3 * n, 3}, rng)), g);
    for (const Var& alpha : out.attention) {
      const Tensor& a = alpha.value();
      for (std::size_t r = 0; r < a.rows(); ++r) {
        double total = 0;
        for (std::size_t j = 0; j < n; ++j) {
          const double v = a.at(r, j);
          EXPECT_GE(v, 0.0);
          if (!g.mask[(r % n) * n + j]) {
            EXPECT_EQ(v, 0.0);
          }
          total += v;
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
      }
    }
  }
}

TEST(Gat, SingleHeadMergeModesAgree) {
  Rng rng(9);
  ParameterSet ps;
  GatLayer gat(ps, "a", 3, 4, 1, HeadMerge::concat, Activation::tanh, rng);
  const GraphContext g = make_graph_context(5, random_adjacency(5, 0.5, rng));
  const Tensor x = random_tensor({5, 3}, rng);
  const Tensor concat = run(ps, x, [&](auto& p, Var v) { return gat.forward(p, v, g); });
  GatLayer avg = gat;
  avg.merge = HeadMerge::average;
  EXPECT_EQ(run(ps, x, [&](auto& p, Var v) { return avg.forward(p, v, g); }), concat);
}

TEST(Gat, IdenticalHeadsRepeatUnderConcat) {
  Rng rng(10);
  ParameterSet ps;
  GatLayer gat(ps, "a", 2, 3, 2, HeadMerge::concat, Activation::relu, rng);
  Tensor& w = ps[gat.weight];
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 3; ++c) w[r * 6 + 3 + c] = w[r * 6 + c];
  ps[gat.attn_src[1]] = ps[gat.attn_src[0]];
  ps[gat.attn_dst[1]] = ps[gat.attn_dst[0]];
  const GraphContext g = make_graph_context(4, random_adjacency(4, 0.6, rng));
  const Tensor y = run(ps, random_tensor({4, 2}, rng), [&](auto& p, Var v) { return gat.forward(p, v, g); });
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(y.at(r, c), y.at(r, c + 3));
}

TEST(Gat, AverageOfUniformHeadsIsNeighbourhoodMean) {
  Rng rng(11);
  ParameterSet ps;
  GatLayer gat(ps, "a", 2, 2, 4, HeadMerge::average, Activation::linear, rng);
  ps[gat.weight] = Tensor(Shape{2, 8});
  for (std::size_t k = 0; k < 4; ++k) {
    ps[gat.weight][0 * 8 + 2 * k] = 1.0;
    ps[gat.weight][1 * 8 + 2 * k + 1] = 1.0;
    ps[gat.attn_src[k]] = Tensor(Shape{2, 1});
    ps[gat.attn_dst[k]] = Tensor(Shape{2, 1});
  }
  const std::size_t n = 4;
  const auto adj = adjacency(n, {{0, 1, 1}, {1, 2, 1}, {2, 3, 1}});
  const GraphContext g = make_graph_context(n, adj);
  const Tensor x = random_tensor({n, 2}, rng);
  const Tensor y = run(ps, x, [&](auto& p, Var v) { return gat.forward(p, v, g); });
  for (std::size_t i = 0; i < n; ++i) {
    double sum0 = 0, sum1 = 0, count = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (i == j || adj[i * n + j] != 0) {
        sum0 += x.at(j, 0);
        sum1 += x.at(j, 1);
        ++count;
      }
    EXPECT_NEAR(y.at(i, 0), sum0 / count, 1e-14);
    EXPECT_NEAR(y.at(i, 1), sum1 / count, 1e-14);
  }
}

TEST(Gat, StarGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(seed);
    ParameterSet ps;
    GatLayer gat(ps, "a", 2, 3, 2, HeadMerge::concat, Activation::tanh, rng);
    const GraphContext g = make_graph_context(3, adjacency(3, {{0, 1, 0.9}, {0, 2, 0.85}}));
    const double err = check_layer(ps, random_tensor({3, 2}, rng), random_tensor({3, 6}, rng),
                                   [&](auto& p, Var v) { return gat.forward(p, v, g); });
    EXPECT_LT(err, 1e-4);
  }
}

TEST(Gat, AverageAndEdgeWeightGradients) {
  Rng rng(12);
  ParameterSet ps;
  GatLayer gat(ps, "a", 3, 2, 3, HeadMerge::average, Activation::tanh, rng);
  gat.edge_weights = true;
  const GraphContext g = make_graph_context(5, random_adjacency(5, 0.5, rng));
  const double err = check_layer(ps, random_tensor({10, 3}, rng), random_tensor({10, 2}, rng),
                                 [&](auto& p, Var v) { return gat.forward(p, v, g); });
  EXPECT_LT(err, 1e-4);
}

// ---------------------------------------------------------------------------
// Graph-level properties shared by both spatial layers
// ---------------------------------------------------------------------------

TEST(SpatialLayers, PermutationEquivariance) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(100 + seed);
    const std::size_t n = 7;
    ParameterSet ps;
    GcnLayer gcn(ps, "g", 3, 4, Activation::relu, rng);
    GatLayer gat(ps, "a", 4, 3, 2, HeadMerge::concat, Activation::relu, rng);
    const auto adj = random_adjacency(n, 0.4, rng);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const GraphContext g = make_graph_context(n, adj);
    const GraphContext gp = make_graph_context(n, permute_adjacency(adj, perm));
    const Tensor x = random_tensor({n, 3}, rng);
    auto stack = [&](const GraphContext& ctx) {
      return [&](auto& p, Var v) { return gat.forward(p, gcn.forward(p, v, ctx), ctx); };
    };
    const Tensor y = run(ps, x, stack(g));
    const Tensor yp = run(ps, permute_rows(x, perm), stack(gp));
    const Tensor expected = permute_rows(y, perm);
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(yp[i], expected[i], 1e-13);
  }
}

TEST(SpatialLayers, OneLayerOutputIsLocal) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(200 + seed);
    const std::size_t n = 8;
    ParameterSet ps;
    GcnLayer gcn(ps, "g", 2, 3, Activation::tanh, rng);
    GatLayer gat(ps, "a", 2, 3, 2, HeadMerge::concat, Activation::tanh, rng);
    const auto adj = random_adjacency(n, 0.3, rng);
    const GraphContext g = make_graph_context(n, adj);
    const Tensor x = random_tensor({n, 2}, rng);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j || adj[i * n + j] != 0) continue;
        Tensor xz = x;
        xz[j * 2] = xz[j * 2 + 1] = 0.0;
        for (auto layer : {0, 1}) {
          auto f = [&](auto& p, Var v) { return layer == 0 ? gcn.forward(p, v, g) : gat.forward(p, v, g); };
          const Tensor a = run(ps, x, f), b = run(ps, xz, f);
          for (std::size_t c = 0; c < a.cols(); ++c) EXPECT_EQ(a.at(i, c), b.at(i, c));
        }
      }
  }
}

TEST(SpatialLayers, StackedGroupsAreIndependent) {
  Rng rng(13);
  const std::size_t n = 5;
  ParameterSet ps;
  GatLayer gat(ps, "a", 2, 3, 2, HeadMerge::concat, Activation::relu, rng);
  const GraphContext g = make_graph_context(n, random_adjacency(n, 0.5, rng));
  const Tensor a = random_tensor({n, 2}, rng), b = random_tensor({n, 2}, rng);
  Tensor both(Shape{2 * n, 2});
  std::copy(a.data().begin(), a.data().end(), both.data().begin());
  std::copy(b.data().begin(), b.data().end(), both.data().begin() + 2 * n);
  auto f = [&](auto& p, Var v) { return gat.forward(p, v, g); };
  const Tensor ya = run(ps, a, f), yb = run(ps, b, f), y = run(ps, both, f);
  for (std::size_t i = 0; i < ya.size(); ++i) {
    EXPECT_EQ(y[i], ya[i]);
    EXPECT_EQ(y[ya.size() + i], yb[i]);
  }
}

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

TEST(Lstm, ZeroWeightsGiveZeroHidden) {
  Rng rng(14);
  ParameterSet ps;
  LstmLayer lstm(ps, "l", 3, 4, rng);
  for (Tensor& t : ps.values()) t = Tensor(t.shape());
  Tape tape;
  const auto p = bind(tape, ps, false);
  for (double v : lstm.run(p, tape.constant(random_tensor({5 * 2, 3}, rng)), 5).value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Lstm, SaturatedForgetGatePreservesCell) {
  Rng rng(15);
  ParameterSet ps;
  LstmLayer lstm(ps, "l", 2, 3, rng);
  for (Tensor& t : ps.values()) t = Tensor(t.shape());
  // Input gate shut, forget gate open.
  for (std::size_t c = 0; c < 3; ++c) {
    ps[lstm.bias][c] = -60.0;
    ps[lstm.bias][3 + c] = 60.0;
  }
  Tape tape;
  const auto p = bind(tape, ps, false);
  const Tensor c0 = Tensor::matrix({{0.3, -0.7, 0.1}});
  LstmState s{tape.constant(Tensor(Shape{1, 3})), tape.constant(c0)};
  for (int t = 0; t < 10; ++t) s = lstm.step(p, tape.constant(random_tensor({1, 2}, rng)), s);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(s.c.value()[c], c0[c], 1e-12);
}

TEST(Lstm, GatesAndCellStayInRange) {
  Rng rng(16);
  ParameterSet ps;
  LstmLayer lstm(ps, "l", 2, 4, rng);
  Tape tape;
  const auto p = bind(tape, ps, false);
  Tensor x = random_tensor({6 * 3, 2}, rng);
  for (double& v : x.data()) v *= 5;
  for (double v : lstm.run(p, tape.constant(x), 6).value().data()) {
    EXPECT_GT(v, -1.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Lstm, GradientThroughTimeMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(seed);
    ParameterSet ps;
    LstmLayer first(ps, "l0", 2, 3, rng);
    LstmLayer second(ps, "l1", 3, 3, rng);
    const double err = check_layer(ps, random_tensor({2 * 4, 2}, rng), random_tensor({4, 3}, rng),
                                   [&](auto& p, Var v) {
                                     auto hs = first.run_stepwise(p, v, 2);
                                     LstmState s;
                                     for (const Var& h : hs) s = second.step(p, h, s);
                                     return s.h;
                                   });
    EXPECT_LT(err, 1e-4);
  }
}

TEST(Lstm, FusedSequenceMatchesStepwise) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    ParameterSet ps;
    LstmLayer lstm(ps, "l", 3, 4, rng);
    const std::size_t steps = 7, rows = 5;
    const Tensor x = random_tensor({steps * rows, 3}, rng);
    Tape tape;
    const auto p = bind(tape, ps, false);
    const Tensor fused = lstm.run(p, tape.constant(x), steps).value();
    const auto hs = lstm.run_stepwise(p, tape.constant(x), steps);
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t i = 0; i < rows * 4; ++i) EXPECT_NEAR(fused[t * rows * 4 + i], hs[t].value()[i], 1e-15);
  }
}

TEST(Lstm, FusedSequenceGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(seed);
    ParameterSet ps;
    LstmLayer first(ps, "l0", 2, 3, rng);
    LstmLayer second(ps, "l1", 3, 3, rng);
    const double err = check_layer(ps, random_tensor({4 * 3, 2}, rng), random_tensor({4 * 3, 3}, rng),
                                   [&](auto& p, Var v) { return second.run(p, first.run(p, v, 4), 4); });
    EXPECT_LT(err, 1e-4);
  }
}

TEST(Lstm, IdenticalWindowsGiveIdenticalOutputs) {
  Rng rng(17);
  ParameterSet ps;
  LstmLayer lstm(ps, "l", 2, 3, rng);
  const Tensor x = random_tensor({5, 2}, rng);
  auto last = [&] {
    Tape tape;
    const auto p = bind(tape, ps, false);
    return lstm.run(p, tape.constant(x), 5).value();
  };
  EXPECT_EQ(last(), last());
}

TEST(Parameters, NamesAreUnique) {
  Rng rng(18);
  ParameterSet ps;
  MlpLayer(ps, "m", 1, 2, Activation::relu, rng);
  EXPECT_THROW(MlpLayer(ps, "m", 1, 2, Activation::relu, rng), InvalidSpec);
}

TEST(Parameters, InitBoundsFollowFanIn) {
  Rng rng(19);
  ParameterSet ps;
  GcnLayer gcn(ps, "g", 16, 32, Activation::relu, rng);
  for (double v : ps[gcn.weight].data()) EXPECT_LE(std::abs(v), 0.25);
  double mx = 0;
  for (double v : ps[gcn.weight].data()) mx = std::max(mx, std::abs(v));
  EXPECT_GT(mx, 0.2);
}
