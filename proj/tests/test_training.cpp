#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "stormnet/training.hpp"

using namespace stormnet;

namespace {

StationGraph line_graph(std::size_t n) {
  std::vector<Station> st;
  for (std::size_t k = 0; k < n; ++k)
    st.push_back({static_cast<int>(k), "S" + std::to_string(k), "TEST", 29.0, -90.0 + 0.5 * static_cast<double>(k)});
  std::vector<Edge> edges;
  for (std::size_t k = 0; k + 1 < n; ++k) edges.push_back({static_cast<int>(k), static_cast<int>(k + 1), 0.9});
  return StationGraph(st, edges, kDefaultRhoMin, kDefaultDMaxKm);
}

StormOffsets make_storm(const std::string& id, std::size_t len, std::size_t n,
                        const std::function<double(std::size_t, std::size_t)>& value) {
  StormOffsets s;
  s.storm_id = id;
  for (std::size_t t = 0; t < len; ++t) s.timestamps.push_back(static_cast<TimePoint>(t) * kHour);
  for (std::size_t k = 0; k < n; ++k) {
    OffsetSeries o;
    o.node_id = static_cast<int>(k);
    o.storm_id = id;
    o.timestamps = s.timestamps;
    for (std::size_t t = 0; t < len; ++t) o.values.push_back(value(t, k));
    o.valid.assign(len, 1);
    s.stations.push_back(std::move(o));
  }
  return s;
}

ModelConfig small_model(std::size_t n, std::size_t w_in, std::size_t w_out, std::size_t width = 6) {
  ModelConfig c;
  c.stations = n;
  c.w_in = w_in;
  c.w_out = w_out;
  c.mlp_width = c.gcn_width = c.gat_head_width = c.lstm_hidden = width;
  c.gat_heads = 2;
  c.lstm_layers = 1;
  c.seed = 7;
  return c;
}

// Slow station-dependent sinusoid; the next values are a fixed linear function of the recent past.
double smooth_value(std::size_t t, std::size_t k) {
  return 0.5 + 0.3 * std::sin(0.15 * static_cast<double>(t) + 0.7 * static_cast<double>(k));
}

WindowedDataset smooth_windows(std::size_t n, std::size_t w_in, std::size_t w_out, std::size_t len = 80) {
  return make_windows({make_storm("A", len, n, smooth_value), make_storm("B", len / 2, n, smooth_value)}, w_in, w_out)
      .dataset;
}

TrainConfig quick_config(std::size_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.learning_rate = 1e-2;
  c.batch_size = 8;
  c.seed = 3;
  return c;
}

bool same_parameters(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].storage() != b[i].storage()) return false;
  return true;
}

}  // namespace

TEST(Train, EpochsZeroReturnsInitialModelAndEmptyHistory) {
  const auto g = line_graph(3);
  StormNet m(small_model(3, 6, 2));
  const auto before = m.parameters().values();
  const TrainState st = train(m, smooth_windows(3, 6, 2), nullptr, m.graph_context(g), quick_config(0));
  EXPECT_TRUE(st.report.train_loss.empty());
  EXPECT_TRUE(st.report.val_loss.empty());
  EXPECT_EQ(st.report.best_epoch, 0u);
  EXPECT_TRUE(same_parameters(m.parameters().values(), before));
}

TEST(Train, ZeroLearningRateLeavesParametersAndLossUnchanged) {
  const auto g = line_graph(3);
  StormNet m(small_model(3, 6, 2));
  const auto before = m.parameters().values();
  TrainConfig c = quick_config(3);
  c.learning_rate = 0.0;
  const WindowedDataset data = smooth_windows(3, 6, 2);
  const TrainState st = train(m, data, &data, m.graph_context(g), c);
  EXPECT_TRUE(same_parameters(m.parameters().values(), before));
  ASSERT_EQ(st.report.train_loss.size(), 3u);
  for (double l : st.report.train_loss) EXPECT_NEAR(l, st.report.train_loss.front(), 1e-14);
  for (double l : st.report.val_loss) EXPECT_EQ(l, st.report.val_loss.front());
  // The epoch loss is the dataset MSE regardless of batch composition.
  EXPECT_NEAR(st.report.train_loss.front(), dataset_mse(m, data, m.graph_context(g)), 1e-14);
}

TEST(Train, LinearlyPredictableOffsetsAreLearned) {
  const auto g = line_graph(3);
  StormNet m(small_model(3, 8, 2, 8));
  const TrainState st = train(m, smooth_windows(3, 8, 2), nullptr, m.graph_context(g), quick_config(50));
  ASSERT_EQ(st.report.train_loss.size(), 50u);
  EXPECT_LT(st.report.train_loss.back(), 0.1 * st.report.train_loss.front());
  for (double l : st.report.train_loss) EXPECT_TRUE(std::isfinite(l));
}

TEST(Train, SameSeedGivesIdenticalRuns) {
  const auto g = line_graph(3);
  const WindowedDataset data = smooth_windows(3, 6, 2);
  StormNet a(small_model(3, 6, 2)), b(small_model(3, 6, 2));
  const TrainState sa = train(a, data, &data, a.graph_context(g), quick_config(4));
  const TrainState sb = train(b, data, &data, b.graph_context(g), quick_config(4));
  EXPECT_EQ(sa.report.train_loss, sb.report.train_loss);
  EXPECT_EQ(sa.report.val_loss, sb.report.val_loss);
  EXPECT_TRUE(same_parameters(a.parameters().values(), b.parameters().values()));
}

TEST(Train, DifferentShuffleSeedChangesTrajectory) {
  const auto g = line_graph(3);
  const WindowedDataset data = smooth_windows(3, 6, 2);
  StormNet a(small_model(3, 6, 2)), b(small_model(3, 6, 2));
  TrainConfig cb = quick_config(2);
  cb.seed = 4;
  train(a, data, nullptr, a.graph_context(g), quick_config(2));
  train(b, data, nullptr, b.graph_context(g), cb);
  EXPECT_FALSE(same_parameters(a.parameters().values(), b.parameters().values()));
}

TEST(Train, ResumeThroughCheckpointMatchesStraightRun) {
  const auto g = line_graph(3);
  const std::string hash = graph_hash(g);
  const WindowedDataset data = smooth_windows(3, 6, 2);
  ModelConfig mc = small_model(3, 6, 2);
  mc.dropout = 0.2;  // exercises the per-batch dropout stream too

  StormNet straight(mc);
  const TrainState full = train(straight, data, &data, straight.graph_context(g), quick_config(6));

  StormNet first(mc);
  const TrainState half = train(first, data, &data, first.graph_context(g), quick_config(3));
  const Checkpoint ck = checkpoint_from_text(checkpoint_text(training_checkpoint(first, hash, half)));
  StormNet second = restore_model(ck);
  const TrainState rest = train(second, data, &data, second.graph_context(g), quick_config(6), resume_state(ck));

  EXPECT_TRUE(same_parameters(second.parameters().values(), straight.parameters().values()));
  EXPECT_EQ(rest.report.train_loss, full.report.train_loss);
  EXPECT_EQ(rest.report.val_loss, full.report.val_loss);
  EXPECT_EQ(rest.report.best_epoch, full.report.best_epoch);
  EXPECT_TRUE(same_parameters(rest.best_parameters, full.best_parameters));
}

TEST(Train, ResumeRequiresOptimizerState) {
  const StormNet m(small_model(3, 6, 2));
  EXPECT_THROW(resume_state(make_checkpoint(m, "x")), CorruptCheckpoint);
}

TEST(Train, ShardedGradientsMatchSequential) {
  const auto g = line_graph(4);
  const WindowedDataset data = smooth_windows(4, 6, 3);
  const StormNet m(small_model(4, 6, 3));
  const GraphContext ctx = m.graph_context(g);
  std::vector<std::size_t> batch(11);
  std::iota(batch.begin(), batch.end(), 5);
  TrainConfig c = quick_config(1);
  const BatchGradient whole = batch_gradient(m, data, batch, ctx, c, 0);
  for (std::size_t shards : {2u, 3u, 11u}) {
    for (bool parallel : {false, true}) {
      c.shards = shards;
      c.parallel_shards = parallel;
      const BatchGradient parts = batch_gradient(m, data, batch, ctx, c, 0);
      EXPECT_NEAR(parts.loss, whole.loss, 1e-12);
      for (std::size_t k = 0; k < whole.grads.size(); ++k)
        for (std::size_t i = 0; i < whole.grads[k].size(); ++i)
          EXPECT_NEAR(parts.grads[k][i], whole.grads[k][i], 1e-12) << m.parameters().names()[k];
    }
  }
}

TEST(Train, ShardedTrainingMatchesSequential) {
  const auto g = line_graph(3);
  const WindowedDataset data = smooth_windows(3, 6, 2);
  StormNet a(small_model(3, 6, 2)), b(small_model(3, 6, 2));
  TrainConfig cb = quick_config(3);
  cb.shards = 3;
  const TrainState sa = train(a, data, nullptr, a.graph_context(g), quick_config(3));
  const TrainState sb = train(b, data, nullptr, b.graph_context(g), cb);
  for (std::size_t e = 0; e < 3; ++e) EXPECT_NEAR(sa.report.train_loss[e], sb.report.train_loss[e], 1e-10);
  for (std::size_t k = 0; k < a.parameters().size(); ++k)
    for (std::size_t i = 0; i < a.parameters()[k].size(); ++i)
      EXPECT_NEAR(a.parameters()[k][i], b.parameters()[k][i], 1e-9);
}

TEST(Train, BestValidationParametersAreRetained) {
  const auto g = line_graph(3);
  const WindowedDataset data = smooth_windows(3, 6, 2);
  StormNet m(small_model(3, 6, 2));
  TrainConfig c = quick_config(8);
  std::vector<std::vector<Tensor>> snapshots;
  const TrainState st = train(m, data, &data, m.graph_context(g), c, std::nullopt,
                              [&](const TrainState&, const StormNet& model) {
                                snapshots.push_back(model.parameters().values());
                              });
  ASSERT_EQ(snapshots.size(), 8u);
  const auto best = std::min_element(st.report.val_loss.begin(), st.report.val_loss.end());
  EXPECT_EQ(st.report.best_epoch, static_cast<std::size_t>(best - st.report.val_loss.begin()) + 1);
  EXPECT_EQ(st.report.best_val, *best);
  EXPECT_TRUE(same_parameters(st.best_parameters, snapshots[st.report.best_epoch - 1]));
}

TEST(Train, PatienceStopsEarly) {
  const auto g = line_graph(3);
  const WindowedDataset data = smooth_windows(3, 6, 2);
  StormNet m(small_model(3, 6, 2));
  TrainConfig c = quick_config(20);
  c.learning_rate = 0.0;  // validation never improves after epoch 1
  c.patience = 2;
  const TrainState st = train(m, data, &data, m.graph_context(g), c);
  EXPECT_TRUE(st.report.stopped_early);
  EXPECT_EQ(st.report.train_loss.size(), 3u);
}

TEST(Train, NonFiniteLossNamesTheBatch) {
  const auto g = line_graph(3);
  WindowedDataset data = smooth_windows(3, 6, 2);
  data.targets[0] = std::numeric_limits<double>::infinity();
  StormNet m(small_model(3, 6, 2));
  TrainConfig c = quick_config(1);
  c.shuffle = false;
  try {
    train(m, data, nullptr, m.graph_context(g), c);
    FAIL() << "expected NonFiniteLoss";
  } catch (const NonFiniteLoss& e) {
    EXPECT_NE(std::string(e.what()).find("storm A"), std::string::npos) << e.what();
    EXPECT_EQ(e.exit_code(), 4);
  }
}

TEST(Train, RejectsEmptyOrMismatchedData) {
  const auto g = line_graph(3);
  StormNet m(small_model(3, 6, 2));
  EXPECT_THROW(train(m, WindowedDataset{}, nullptr, m.graph_context(g), quick_config(1)), EmptyDataset);
  EXPECT_THROW(train(m, smooth_windows(3, 5, 2), nullptr, m.graph_context(g), quick_config(1)), ShapeMismatch);
  TrainConfig c = quick_config(1);
  c.batch_size = 0;
  EXPECT_THROW(train(m, smooth_windows(3, 6, 2), nullptr, m.graph_context(g), c), InvalidSpec);
}

TEST(Metrics, PerfectPredictionIsZero) {
  const std::vector<double> y = {0.3, -1.2, 2.0};
  const Metrics m = compute_metrics(y, y);
  EXPECT_EQ(m.mse, 0.0);
  EXPECT_EQ(m.rmse, 0.0);
  EXPECT_EQ(m.mae, 0.0);
}

TEST(Metrics, ConstantErrorOfTenCentimetres) {
  const std::vector<double> y = {0.0, 1.0, -0.5, 2.5};
  std::vector<double> p = y;
  for (double& v : p) v += 0.1;
  const Metrics m = compute_metrics(p, y);
  EXPECT_NEAR(m.mae, 0.1, 1e-12);
  EXPECT_NEAR(m.rmse, 0.1, 1e-12);
  EXPECT_NEAR(m.mse, 0.01, 1e-12);
}

TEST(Metrics, EmptyAndMismatchedInputsAreRejected) {
  EXPECT_THROW(compute_metrics(std::vector<double>{}, std::vector<double>{}), EmptyDataset);
  EXPECT_THROW(compute_metrics(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}), LengthMismatch);
}

TEST(Metrics, TableMatchesBruteForceAndIdentitiesHold) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd(0.0, 0.4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t w = 3 + trial % 4, l = 2, n = 1 + trial % 5;
    Tensor p(Shape{w, l, n}), y(Shape{w, l, n});
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = nd(rng);
      y[i] = nd(rng);
    }
    const MetricTable t = metric_table(p, y);
    ASSERT_EQ(t.per_station.size(), n);
    // Independent recomputation by explicit index walk.
    for (std::size_t k = 0; k < n; ++k) {
      double se = 0, ae = 0;
      for (std::size_t a = 0; a < w; ++a)
        for (std::size_t b = 0; b < l; ++b) {
          const std::size_t i = (a * l + b) * n + k;
          const double e = p[i] - y[i];
          se += e * e;
          ae += std::fabs(e);
        }
      const double cnt = static_cast<double>(w * l);
      EXPECT_NEAR(t.per_station[k].mse, se / cnt, 1e-12);
      EXPECT_NEAR(t.per_station[k].mae, ae / cnt, 1e-12);
      EXPECT_EQ(t.per_station[k].count, w * l);
    }
    for (const Metrics* m : {&t.pooled}) {
      EXPECT_NEAR(m->rmse * m->rmse, m->mse, 1e-10);
      EXPECT_LE(m->mae, m->rmse + 1e-15);
    }
    for (const Metrics& m : t.per_station) {
      EXPECT_NEAR(m.rmse * m.rmse, m.mse, 1e-10);
      EXPECT_LE(m.mae, m.rmse + 1e-15);
    }
  }
}

TEST(Evaluate, MetricsAreInMetres) {
  const auto g = line_graph(2);
  StormNet m(small_model(2, 4, 2));
  for (Tensor& t : m.parameters().values()) t = Tensor(t.shape());
  m.parameters().at("head.bias") = Tensor::vector({0.5, 0.5});  // always predicts scaled 0.5
  const WindowedDataset data =
      make_windows({make_storm("A", 10, 2, [](std::size_t, std::size_t) { return 0.25; })}, 4, 2).dataset;
  ScalerParams sc;
  sc.data_min = {0.0, -1.0};
  sc.data_max = {2.0, 1.0};
  const Evaluation e = evaluate(m, data, sc, m.graph_context(g));
  // Station 0: 0.5 → 1.0 m vs 0.25 → 0.5 m; station 1: 0.0 m vs -0.5 m.
  EXPECT_NEAR(e.metrics.per_station[0].mae, 0.5, 1e-12);
  EXPECT_NEAR(e.metrics.per_station[1].mae, 0.5, 1e-12);
  EXPECT_NEAR(e.metrics.pooled.rmse, 0.5, 1e-12);
}

namespace {

// One narrow pulse every 12 h: a 6 h window without a pulse cannot tell where the next one lands.
double pulse_value(std::size_t t, std::size_t) {
  static constexpr double shape[12] = {0, 0, 0.5, 1, 0.5, 0, 0, 0, 0, 0, 0, 0};
  return shape[t % 12];
}

}  // namespace

TEST(Sweep, SingleCellGivesOneRow) {
  const auto g = line_graph(2);
  const std::vector<StormOffsets> tr = {make_storm("A", 40, 2, smooth_value)};
  const StormOffsets va = make_storm("V", 30, 2, smooth_value);
  ScalerParams sc;
  sc.data_min = {0, 0};
  sc.data_max = {1, 1};
  ModelConfig base = small_model(2, 48, 24, 4);
  const GraphContext ctx = StormNet(base).graph_context(g);
  const auto rows = sweep_windows(base, quick_config(1), tr, va, sc, ctx, {6}, {4});
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].w_in, 6u);
  EXPECT_EQ(rows[0].w_out, 4u);
  EXPECT_THROW(sweep_windows(base, quick_config(1), tr, va, sc, ctx, {}, {4}), InvalidSpec);
}

TEST(Sweep, IdenticalCellsGiveIdenticalRmse) {
  const auto g = line_graph(2);
  const std::vector<StormOffsets> tr = {make_storm("A", 40, 2, smooth_value)};
  const StormOffsets va = make_storm("V", 30, 2, smooth_value);
  ScalerParams sc;
  sc.data_min = {0, 0};
  sc.data_max = {1, 1};
  ModelConfig base = small_model(2, 6, 4, 4);
  const GraphContext ctx = StormNet(base).graph_context(g);
  const auto rows = sweep_windows(base, quick_config(2), tr, va, sc, ctx, {6, 6}, {4});
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].val_rmse, rows[1].val_rmse);
}

TEST(Sweep, PeriodicBiasFavoursWindowsCoveringThePeriod) {
  const auto g = line_graph(2);
  const std::vector<StormOffsets> tr = {make_storm("A", 200, 2, pulse_value), make_storm("B", 200, 2, pulse_value)};
  const StormOffsets va = make_storm("V", 96, 2, pulse_value);
  ScalerParams sc;
  sc.data_min = {0, 0};
  sc.data_max = {1, 1};
  ModelConfig base = small_model(2, 6, 6, 8);
  const GraphContext ctx = StormNet(base).graph_context(g);
  TrainConfig c = quick_config(40);
  const auto rows = sweep_windows(base, c, tr, va, sc, ctx, {6, 12, 18}, {6});
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows.back().w_in, 6u);

  // Oracle: no function of a 6 h window can beat the per-input-pattern mean of
  // the futures, so the W_in = 6 cell is bounded below by that error.
  const WindowedDataset v6 = make_windows({va}, 6, 6).dataset;
  std::map<std::vector<double>, std::vector<std::vector<double>>> groups;
  for (std::size_t w = 0; w < v6.size(); ++w) {
    std::vector<double> in, out;
    for (std::size_t l = 0; l < 6; ++l) in.push_back(v6.input(w, l, 0));
    for (std::size_t l = 0; l < 6; ++l) out.push_back(v6.target(w, l, 0));
    groups[in].push_back(out);
  }
  double sse = 0.0;
  for (const auto& [in, outs] : groups)
    for (std::size_t l = 0; l < 6; ++l) {
      double mean = 0.0;
      for (const auto& o : outs) mean += o[l] / static_cast<double>(outs.size());
      for (const auto& o : outs) sse += (o[l] - mean) * (o[l] - mean);
    }
  const double bound = std::sqrt(sse / static_cast<double>(v6.size() * 6));
  EXPECT_GT(bound, 0.1);
  EXPECT_GE(rows.back().val_rmse, bound - 1e-12);
  for (std::size_t r = 0; r + 1 < rows.size(); ++r) EXPECT_LT(rows[r].val_rmse, bound);
}
