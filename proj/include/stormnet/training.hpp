#pragma once

// Mini-batch Adam training, validation tracking, metrics, window sweep.

#include <chrono>
#include <cmath>
#include <functional>
#include <future>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "stormnet/adam.hpp"
#include "stormnet/ingest.hpp"
#include "stormnet/model.hpp"

namespace stormnet {

struct TrainConfig {
  std::size_t epochs = 200;
  double learning_rate = 3e-5;
  double weight_decay = 5e-7;
  std::size_t batch_size = 20;
  std::uint64_t seed = 0;
  bool shuffle = true;
  std::size_t patience = 0;  // epochs without validation improvement before stopping; 0 disables
  std::size_t shards = 1;    // gradient shards per batch, summed in shard order
  bool parallel_shards = false;
  std::size_t stride = 1;    // step between consecutive training windows

  AdamOptions adam() const {
    AdamOptions o;
    o.learning_rate = learning_rate;
    o.weight_decay = weight_decay;
    return o;
  }
};

inline void validate(const TrainConfig& c) {
  if (c.batch_size == 0) throw InvalidSpec("batch_size must be positive");
  if (c.shards == 0) throw InvalidSpec("shards must be positive");
  if (c.stride == 0) throw InvalidSpec("stride must be positive");
  if (!(c.learning_rate >= 0.0) || !(c.weight_decay >= 0.0)) {
    throw InvalidSpec("learning_rate and weight_decay must be non-negative");
  }
}

struct TrainReport {
  std::vector<double> train_loss;
  std::vector<double> val_loss;  // empty when no validation set is given
  std::vector<double> epoch_seconds;
  double seconds = 0.0;
  std::size_t best_epoch = 0;  // 1-based; 0 when nothing was trained
  double best_val = std::numeric_limits<double>::infinity();
  bool stopped_early = false;
};

/// Everything carried between epochs; restoring it resumes training exactly.
struct TrainState {
  AdamState optimizer;
  std::size_t epoch = 0;
  TrainReport report;
  std::vector<Tensor> best_parameters;
  std::size_t epochs_since_best = 0;
};

// ---------------------------------------------------------------------------
// Deterministic per-epoch random streams
// ---------------------------------------------------------------------------

inline Rng stream_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::vector<std::uint32_t> words = {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  for (std::uint64_t p : path) {
    words.push_back(static_cast<std::uint32_t>(p));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

/// Fisher-Yates with a multiply-shift bounded draw, identical on every platform.
inline void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>((static_cast<unsigned __int128>(rng()) * i) >> 64);
    std::swap(idx[i - 1], idx[j]);
  }
}

inline std::vector<std::size_t> epoch_order(std::size_t n, const TrainConfig& c, std::size_t epoch) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (c.shuffle) {
    Rng rng = stream_rng(c.seed, {epoch, 0});
    shuffle_indices(idx, rng);
  }
  return idx;
}

// ---------------------------------------------------------------------------
// Loss and gradients
// ---------------------------------------------------------------------------

struct BatchGradient {
  double loss = 0.0;
  std::vector<Tensor> grads;
};

/// Mean squared error over the batch and its gradient. With several shards
/// each shard contributes its squared-error sum / batch element count.
inline BatchGradient batch_gradient(const StormNet& model, const WindowedDataset& data,
                                    const std::vector<std::size_t>& windows, const GraphContext& g,
                                    const TrainConfig& cfg, std::uint64_t dropout_key) {
  const std::size_t shards = std::min(cfg.shards, windows.size());
  const double denom = static_cast<double>(windows.size() * data.w_out * data.stations);
  auto run_shard = [&](std::size_t s) {
    const std::size_t lo = windows.size() * s / shards, hi = windows.size() * (s + 1) / shards;
    const std::vector<std::size_t> part(windows.begin() + static_cast<std::ptrdiff_t>(lo),
                                        windows.begin() + static_cast<std::ptrdiff_t>(hi));
    const auto [x, y] = data.batch(part);
    Tape tape;
    const BoundParameters p = bind(tape, model.parameters());
    Rng drop = stream_rng(cfg.seed, {dropout_key, s, 1});
    const Var pred = model.forward(p, tape.constant(x), g, model.config().dropout > 0 ? &drop : nullptr);
    const Var loss = scale(sum(square(sub(pred, tape.constant(y)))), 1.0 / denom);
    BatchGradient out;
    out.loss = loss.value().item();
    if (std::isfinite(out.loss)) out.grads = backward(loss, p.vars);
    return out;
  };

  std::vector<BatchGradient> parts(shards);
  if (cfg.parallel_shards && shards > 1) {
    std::vector<std::future<BatchGradient>> futures;
    for (std::size_t s = 0; s < shards; ++s) futures.push_back(std::async(std::launch::async, run_shard, s));
    for (std::size_t s = 0; s < shards; ++s) parts[s] = futures[s].get();
  } else {
    for (std::size_t s = 0; s < shards; ++s) parts[s] = run_shard(s);
  }

  BatchGradient total = std::move(parts.front());
  for (std::size_t s = 1; s < shards; ++s) {
    total.loss += parts[s].loss;
    if (!std::isfinite(parts[s].loss) || total.grads.empty()) {
      total.grads.clear();
      continue;
    }
    for (std::size_t k = 0; k < total.grads.size(); ++k) {
      auto dst = total.grads[k].data();
      auto src = parts[s].grads[k].data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
  return total;
}

/// Scaled-space MSE of the model over a whole dataset, in chunks.
inline double dataset_mse(const StormNet& model, const WindowedDataset& data, const GraphContext& g,
                          std::size_t chunk = 64) {
  if (data.empty()) throw EmptyDataset("dataset has no windows");
  double sse = 0.0;
  for (std::size_t lo = 0; lo < data.size(); lo += chunk) {
    std::vector<std::size_t> idx(std::min(chunk, data.size() - lo));
    std::iota(idx.begin(), idx.end(), lo);
    const auto [x, y] = data.batch(idx);
    const Tensor pred = model.predict(x, g);
    for (std::size_t i = 0; i < pred.size(); ++i) sse += (pred[i] - y[i]) * (pred[i] - y[i]);
  }
  return sse / static_cast<double>(data.size() * data.w_out * data.stations);
}

inline TrainState initial_state(const StormNet& model, const TrainConfig& cfg) {
  TrainState s;
  s.optimizer = AdamState(cfg.adam(), model.parameters().values());
  s.best_parameters = model.parameters().values();
  return s;
}

using EpochCallback = std::function<void(const TrainState&, const StormNet&)>;

/// Trains `model` in place until `cfg.epochs` epochs have completed in total
/// (counting epochs already recorded in `state`).
inline TrainState train(StormNet& model, const WindowedDataset& train_set, const WindowedDataset* val_set,
                        const GraphContext& g, const TrainConfig& cfg, std::optional<TrainState> resume = std::nullopt,
                        const EpochCallback& on_epoch = {}) {
  validate(cfg);
  if (train_set.empty()) throw EmptyDataset("training set has no windows");
  if (val_set && val_set->empty()) throw EmptyDataset("validation set has no windows");
  if (train_set.stations != model.config().stations || train_set.w_in != model.config().w_in ||
      train_set.w_out != model.config().w_out) {
    throw ShapeMismatch("training windows do not match the model configuration");
  }
  TrainState st = resume ? std::move(*resume) : initial_state(model, cfg);
  st.optimizer.options = cfg.adam();
  const auto start = std::chrono::steady_clock::now();
  std::vector<Tensor>& params = model.parameters().values();

  while (st.epoch < cfg.epochs && !st.report.stopped_early) {
    const auto epoch_start = std::chrono::steady_clock::now();
    const std::vector<std::size_t> order = epoch_order(train_set.size(), cfg, st.epoch);
    double sse = 0.0;  // epoch loss is the window-weighted mean, independent of batch composition
    std::size_t batches = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size, ++batches) {
      const std::vector<std::size_t> windows(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                             order.begin() + static_cast<std::ptrdiff_t>(std::min(lo + cfg.batch_size, order.size())));
      const BatchGradient bg = batch_gradient(model, train_set, windows, g, cfg, st.epoch * 1000003 + batches);
      if (!std::isfinite(bg.loss) || bg.grads.empty()) {
        const WindowOrigin& o = train_set.origins[windows.front()];
        throw NonFiniteLoss("epoch " + std::to_string(st.epoch + 1) + ", batch " + std::to_string(batches) +
                            " (first window: storm " + o.storm_id + " at " + format_iso8601(o.start) +
                            "): loss = " + std::to_string(bg.loss));
      }
      adam_step(params, bg.grads, st.optimizer);
      sse += bg.loss * static_cast<double>(windows.size());
    }
    ++st.epoch;
    st.report.train_loss.push_back(sse / static_cast<double>(order.size()));
    // Model selection uses validation MSE, or training loss without a validation set.
    double select = st.report.train_loss.back();
    if (val_set) {
      select = dataset_mse(model, *val_set, g);
      st.report.val_loss.push_back(select);
    }
    if (select < st.report.best_val) {
      st.report.best_val = select;
      st.report.best_epoch = st.epoch;
      st.best_parameters = params;
      st.epochs_since_best = 0;
    } else {
      ++st.epochs_since_best;
      if (cfg.patience > 0 && st.epochs_since_best >= cfg.patience) st.report.stopped_early = true;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    st.report.epoch_seconds.push_back(secs);
    if (on_epoch) on_epoch(st, model);
  }
  st.report.seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return st;
}

/// Checkpoint holding the current parameters plus everything `train` needs to
/// resume. Wall-clock timings stay out so identical runs give identical files.
inline Checkpoint training_checkpoint(const StormNet& model, const std::string& graph_hash, const TrainState& st) {
  Checkpoint ck = make_checkpoint(model, graph_hash);
  ck.optimizer = st.optimizer;
  ck.epoch = st.epoch;
  ck.train_loss = st.report.train_loss;
  ck.val_loss = st.report.val_loss;
  nlohmann::json best = nlohmann::json::array();
  for (const Tensor& t : st.best_parameters) best.push_back(tensor_to_json(t));
  ck.extra["best_parameters"] = std::move(best);
  ck.extra["best_epoch"] = st.report.best_epoch;
  ck.extra["best_val"] = std::isfinite(st.report.best_val) ? nlohmann::json(st.report.best_val) : nlohmann::json();
  ck.extra["epochs_since_best"] = st.epochs_since_best;
  ck.extra["stopped_early"] = st.report.stopped_early;
  return ck;
}

inline TrainState resume_state(const Checkpoint& ck) {
  if (!ck.optimizer) throw CorruptCheckpoint("checkpoint has no optimizer state to resume from");
  TrainState st;
  st.optimizer = *ck.optimizer;
  st.epoch = ck.epoch;
  st.report.train_loss = ck.train_loss;
  st.report.val_loss = ck.val_loss;
  try {
    const nlohmann::json& e = ck.extra;
    for (const auto& t : e.at("best_parameters")) st.best_parameters.push_back(tensor_from_json(t));
    st.report.best_epoch = e.at("best_epoch").get<std::size_t>();
    if (!e.at("best_val").is_null()) st.report.best_val = e.at("best_val").get<double>();
    st.epochs_since_best = e.at("epochs_since_best").get<std::size_t>();
    st.report.stopped_early = e.at("stopped_early").get<bool>();
  } catch (const nlohmann::json::exception& ex) {
    throw CorruptCheckpoint(std::string("training state incomplete: ") + ex.what());
  }
  if (st.best_parameters.size() != ck.values.size() || st.report.train_loss.size() != st.epoch) {
    throw CorruptCheckpoint("training state is inconsistent with the stored parameters");
  }
  return st;
}

// ---------------------------------------------------------------------------
// Metrics in metres
// ---------------------------------------------------------------------------

struct Metrics {
  double mse = 0.0;
  double rmse = 0.0;
  double mae = 0.0;
  std::size_t count = 0;
};

inline Metrics compute_metrics(std::span<const double> prediction, std::span<const double> target) {
  if (prediction.size() != target.size()) throw LengthMismatch("prediction/target lengths differ");
  if (prediction.empty()) throw EmptyDataset("no values to score");
  Metrics m;
  m.count = prediction.size();
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double e = prediction[i] - target[i];
    m.mse += e * e;
    m.mae += std::abs(e);
  }
  m.mse /= static_cast<double>(m.count);
  m.mae /= static_cast<double>(m.count);
  m.rmse = std::sqrt(m.mse);
  return m;
}

struct MetricTable {
  Metrics pooled;
  std::vector<Metrics> per_station;
};

/// Predictions and targets in metres, both [windows × W_out × N].
struct Evaluation {
  Tensor prediction;
  Tensor target;
  MetricTable metrics;
};

inline Tensor unscale(const Tensor& t, const ScalerParams& scaler) {
  const std::size_t n = t.dim(t.rank() - 1);
  if (n != scaler.stations()) throw StationMismatch("scaler covers " + std::to_string(scaler.stations()) + " stations");
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = scaler.invert(t[i], i % n);
  return out;
}

inline MetricTable metric_table(const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape()) throw ShapeMismatch("prediction/target shapes differ");
  const std::size_t n = target.dim(target.rank() - 1);
  MetricTable t;
  t.pooled = compute_metrics(prediction.data(), target.data());
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<double> p, y;
    for (std::size_t i = k; i < target.size(); i += n) {
      p.push_back(prediction[i]);
      y.push_back(target[i]);
    }
    t.per_station.push_back(compute_metrics(p, y));
  }
  return t;
}

inline Tensor predict_dataset(const StormNet& model, const WindowedDataset& data, const GraphContext& g,
                              std::size_t chunk = 64) {
  if (data.empty()) throw EmptyDataset("dataset has no windows");
  Tensor out(Shape{data.size(), data.w_out, data.stations});
  const std::size_t block = data.w_out * data.stations;
  for (std::size_t lo = 0; lo < data.size(); lo += chunk) {
    std::vector<std::size_t> idx(std::min(chunk, data.size() - lo));
    std::iota(idx.begin(), idx.end(), lo);
    const Tensor pred = model.predict(data.batch(idx).first, g);
    std::copy(pred.data().begin(), pred.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(lo * block));
  }
  return out;
}

inline Tensor dataset_targets(const WindowedDataset& data) {
  return Tensor(Shape{data.size(), data.w_out, data.stations}, data.targets);
}

inline Evaluation evaluate(const StormNet& model, const WindowedDataset& data, const ScalerParams& scaler,
                           const GraphContext& g) {
  Evaluation e;
  e.prediction = unscale(predict_dataset(model, data, g), scaler);
  e.target = unscale(dataset_targets(data), scaler);
  e.metrics = metric_table(e.prediction, e.target);
  return e;
}

// ---------------------------------------------------------------------------
// Window sweep
// ---------------------------------------------------------------------------

struct SweepResult {
  std::size_t w_in = 0;
  std::size_t w_out = 0;
  double val_rmse = 0.0;  // metres, best-validation parameters
  std::size_t best_epoch = 0;
};

/// Trains one model per (W_in, W_out) cell on scaled storms; rows sorted by validation RMSE.
inline std::vector<SweepResult> sweep_windows(const ModelConfig& base, const TrainConfig& cfg,
                                              const std::vector<StormOffsets>& train_storms,
                                              const StormOffsets& val_storm, const ScalerParams& scaler,
                                              const GraphContext& g, const std::vector<std::size_t>& w_in_grid,
                                              const std::vector<std::size_t>& w_out_grid) {
  if (w_in_grid.empty() || w_out_grid.empty()) throw InvalidSpec("window grids must be non-empty");
  std::vector<SweepResult> rows;
  for (std::size_t w_in : w_in_grid)
    for (std::size_t w_out : w_out_grid) {
      ModelConfig mc = base;
      mc.w_in = w_in;
      mc.w_out = w_out;
      StormNet model(mc);
      const WindowedDataset tr = make_windows(train_storms, w_in, w_out, cfg.stride).dataset;
      const WindowedDataset va = make_windows({val_storm}, w_in, w_out).dataset;
      TrainState st = train(model, tr, &va, g, cfg);
      model.parameters().values() = st.best_parameters;
      rows.push_back({w_in, w_out, evaluate(model, va, scaler, g).metrics.pooled.rmse, st.report.best_epoch});
    }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const SweepResult& a, const SweepResult& b) { return a.val_rmse < b.val_rmse; });
  return rows;
}

}  // namespace stormnet
