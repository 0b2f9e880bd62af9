#pragma once

// The stormnet command line: one subcommand per pipeline stage. Every command
// is callable in-process through cli::run, which returns the exit code.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "stormnet/config.hpp"
#include "stormnet/correction.hpp"
#include "stormnet/geo_graph.hpp"
#include "stormnet/ingest.hpp"
#include "stormnet/model.hpp"
#include "stormnet/svg.hpp"
#include "stormnet/synth.hpp"
#include "stormnet/training.hpp"

#ifndef STORMNET_VERSION
#define STORMNET_VERSION "unknown"
#endif

namespace stormnet::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Run manifests
// ---------------------------------------------------------------------------

class RunManifest {
 public:
  RunManifest(std::string command, std::vector<std::string> args)
      : command_(std::move(command)), args_(std::move(args)), start_(std::chrono::system_clock::now()) {}

  void input(const std::string& role, const std::string& path) {
    inputs_[role] = {{"path", path}, {"fnv1a", fs::is_regular_file(path) ? file_hash(path) : tree_hash(path)}};
  }
  void output(const std::string& role, const std::string& path) { outputs_[role] = path; }
  void set(const std::string& key, json value) { extra_[key] = std::move(value); }

  /// Writes <dir>/run_<command>.json.
  void write(const fs::path& dir) const {
    const auto end = std::chrono::system_clock::now();
    json j = {{"command", command_},
              {"args", args_},
              {"version", STORMNET_VERSION},
              {"inputs", inputs_},
              {"outputs", outputs_},
              {"started_at", format_iso8601(std::chrono::duration_cast<std::chrono::seconds>(start_.time_since_epoch()).count())},
              {"wall_seconds", std::chrono::duration<double>(end - start_).count()}};
    for (auto it = extra_.begin(); it != extra_.end(); ++it) j[it.key()] = it.value();
    write_text_file((dir / ("run_" + command_ + ".json")).string(), j.dump(2) + "\n");
  }

  /// Hash over every regular file below `dir`, in path order.
  static std::string tree_hash(const std::string& dir) {
    if (!fs::is_directory(dir)) return "";
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
      if (e.is_regular_file() && e.path().filename().string().rfind("run_", 0) != 0) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::string acc;
    for (const auto& f : files) acc += fs::relative(f, dir).generic_string() + ":" + file_hash(f.string()) + "\n";
    return fnv1a_hex(acc);
  }

 private:
  std::string command_;
  std::vector<std::string> args_;
  std::chrono::system_clock::time_point start_;
  json inputs_ = json::object();
  json outputs_ = json::object();
  json extra_ = json::object();
};

inline void make_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create '" + p.string() + "': " + ec.message());
}

inline fs::path parent_dir(const std::string& file) {
  const fs::path p = fs::path(file).parent_path();
  return p.empty() ? fs::path(".") : p;
}

inline void require_file(const std::string& path, const std::string& what) {
  if (!fs::exists(path)) throw IoError(what + " '" + path + "' does not exist");
}

inline void progress(const std::string& msg) { std::cerr << msg << std::endl; }

// ---------------------------------------------------------------------------
// Prepared datasets on disk
// ---------------------------------------------------------------------------

struct PreparedDir {
  DatasetManifest manifest;
  std::string data_dir;
  std::vector<StormOffsets> train;  // metres
  StormOffsets val;
  StormOffsets test;
  ScalerParams scaler;

  const StormOffsets& storm(const std::string& id) const {
    if (val.storm_id == id) return val;
    if (test.storm_id == id) return test;
    for (const auto& s : train)
      if (s.storm_id == id) return s;
    throw UnknownStorm("storm '" + id + "' is not part of the prepared dataset");
  }
};

inline std::string prepared_offsets_path(const fs::path& dir, const std::string& storm) {
  return (dir / "offsets" / (storm + ".csv")).string();
}

inline void write_prepared(const fs::path& dir, const PreparedData& p, const std::string& data_dir) {
  make_dir(dir / "offsets");
  // Relative to the prepared directory, so identical runs in different places match.
  json d = {{"data_dir", fs::relative(fs::absolute(data_dir), fs::absolute(dir)).generic_string()}, {"manifest", manifest_to_json(p.manifest)}};
  write_text_file((dir / "dataset.json").string(), d.dump(2) + "\n");
  write_text_file((dir / "scaler.json").string(), scaler_to_json(p.scaler).dump(2) + "\n");
  for (const auto& s : p.train) write_text_file(prepared_offsets_path(dir, s.storm_id), offsets_csv_text(s));
  write_text_file(prepared_offsets_path(dir, p.val.storm_id), offsets_csv_text(p.val));
  write_text_file(prepared_offsets_path(dir, p.test.storm_id), offsets_csv_text(p.test));
}

inline PreparedDir load_prepared(const fs::path& dir) {
  const std::string meta = (dir / "dataset.json").string();
  require_file(meta, "prepared dataset");
  PreparedDir p;
  json d;
  try {
    d = json::parse(read_text_file(meta));
    p.data_dir = d.at("data_dir").get<std::string>();
  } catch (const json::exception& e) {
    throw ParseError("'" + meta + "': " + e.what());
  }
  p.manifest = manifest_from_json(d.at("manifest"));
  try {
    p.scaler = scaler_from_json(json::parse(read_text_file((dir / "scaler.json").string())));
  } catch (const json::parse_error& e) {
    throw ParseError("scaler.json: " + std::string(e.what()));
  }
  for (const auto& id : p.manifest.storm_ids(StormRole::train)) p.train.push_back(read_offsets_csv(prepared_offsets_path(dir, id), id));
  const std::string v = p.manifest.single(StormRole::val), t = p.manifest.single(StormRole::test);
  p.val = read_offsets_csv(prepared_offsets_path(dir, v), v);
  p.test = read_offsets_csv(prepared_offsets_path(dir, t), t);
  return p;
}

inline StormRole split_role(const std::string& s) {
  try {
    return storm_role_from_string(s);
  } catch (const Error&) {
    throw InvalidSpec("split must be train, val or test, got '" + s + "'");
  }
}

// ---------------------------------------------------------------------------
// Shared pieces
// ---------------------------------------------------------------------------

/// Config lookup: an existing path wins; otherwise a bare name is looked up in
/// $STORMNET_CONFIG_DIR, and with no --config at all that directory's
/// stormnet.cfg is used when present.
inline std::string resolve_config(const std::string& given) {
  const char* env = std::getenv("STORMNET_CONFIG_DIR");
  if (!given.empty()) {
    if (fs::exists(given) || !env) return given;
    const fs::path candidate = fs::path(env) / given;
    return fs::exists(candidate) ? candidate.string() : given;
  }
  if (env && fs::exists(fs::path(env) / "stormnet.cfg")) return (fs::path(env) / "stormnet.cfg").string();
  return "";
}

inline RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig c = path.empty() ? RunConfig{} : read_config(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw InvalidSpec("--set expects key=value, got '" + kv + "'");
    try {
      set_config_value(c, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
    } catch (const InvalidVariant& e) {
      throw InvalidSpec(e.what());
    }
  }
  validate(c.train);
  return c;
}

inline ModelConfig model_config_for(const RunConfig& rc, const PreparedDir& p) {
  ModelConfig m = rc.model;
  m.stations = p.manifest.stations.size();
  m.w_in = p.manifest.w_in;
  m.w_out = p.manifest.w_out;
  variant_label(m);
  return m;
}

inline svg::Plot loss_plot(const TrainReport& r, const std::string& title) {
  svg::Plot p{title, "epoch", "MSE (scaled)", {}, {}, true};
  svg::Series tr{"train", {}, r.train_loss, "#1f77b4", false};
  for (std::size_t e = 0; e < r.train_loss.size(); ++e) tr.x.push_back(static_cast<double>(e + 1));
  p.series.push_back(tr);
  if (!r.val_loss.empty()) p.series.push_back({"validation", tr.x, r.val_loss, "#d62728", true});
  return p;
}

inline json metrics_json(const Metrics& m) {
  return {{"rmse", m.rmse}, {"mse", m.mse}, {"mae", m.mae}, {"count", m.count}};
}

inline json metric_table_json(const MetricTable& t) {
  json j = {{"pooled", metrics_json(t.pooled)}, {"per_station", json::array()}};
  for (std::size_t k = 0; k < t.per_station.size(); ++k) {
    json s = metrics_json(t.per_station[k]);
    s["node_id"] = k;
    j["per_station"].push_back(s);
  }
  return j;
}

struct TrainedModel {
  StormNet model;
  TrainState state;
};

/// Windows and training for one model on a prepared dataset. `on_epoch` runs after
/// the progress line of every epoch.
inline TrainedModel train_on(const PreparedDir& p, const StationGraph& graph, StormNet model, const TrainConfig& tc,
                             const std::string& tag, std::optional<TrainState> resume = std::nullopt,
                             const EpochCallback& on_epoch = {}) {
  const ModelConfig& mc = model.config();
  const WindowingResult tr = make_windows(scaled(p.train, p.scaler), mc.w_in, mc.w_out, tc.stride);
  const WindowedDataset va = make_windows(scaled({p.val}, p.scaler), mc.w_in, mc.w_out).dataset;
  for (const auto& s : tr.skipped_storms) progress("warning: storm " + s + " is shorter than w_in + w_out; skipped");
  TrainedModel out{std::move(model), {}};
  const GraphContext g = out.model.graph_context(graph);
  progress(tag + ": " + variant_label(mc) + ", " + std::to_string(out.model.parameters().scalar_count()) +
           " parameters, " + std::to_string(tr.dataset.size()) + " training windows");
  out.state = train(out.model, tr.dataset, &va, g, tc, std::move(resume), [&](const TrainState& s, const StormNet& m) {
    std::ostringstream os;
    os << tag << ": epoch " << s.epoch << "/" << tc.epochs << "  train " << s.report.train_loss.back() << "  val "
       << s.report.val_loss.back() << "  (" << std::fixed << std::setprecision(1) << s.report.epoch_seconds.back() << " s)";
    progress(os.str());
    if (on_epoch) on_epoch(s, m);
  });
  return out;
}

inline Tensor predict_split(const StormNet& model, const PreparedDir& p, const StationGraph& graph,
                            const StormOffsets& storm, std::vector<WindowOrigin>* origins = nullptr) {
  const WindowedDataset data = make_windows(scaled({storm}, p.scaler), model.config().w_in, model.config().w_out).dataset;
  if (data.empty()) throw EmptyDataset("storm " + storm.storm_id + " is too short for one window");
  if (origins) *origins = data.origins;
  return unscale(predict_dataset(model, data, model.graph_context(graph)), p.scaler);
}

inline MetricTable offset_metrics(const StormNet& model, const PreparedDir& p, const StationGraph& graph,
                                  const StormOffsets& storm) {
  const WindowedDataset data = make_windows(scaled({storm}, p.scaler), model.config().w_in, model.config().w_out).dataset;
  return evaluate(model, data, p.scaler, model.graph_context(graph)).metrics;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string spec;
  std::string out;
  std::optional<std::uint64_t> seed;
};

inline int cmd_synth(const SynthArgs& a, RunManifest& rm) {
  SynthSpec spec = read_synth_spec(a.spec);
  if (a.seed) spec.seed = *a.seed;
  const SynthCorpus c = generate(spec);
  write_corpus(c, a.out);
  rm.input("spec", a.spec);
  rm.output("dataset", a.out);
  rm.set("seed", spec.seed);
  progress("synth: " + std::to_string(c.stations.size()) + " stations, " + std::to_string(c.storms.size()) +
           " storms written to " + a.out);
  rm.write(a.out);
  return 0;
}

struct BuildGraphArgs {
  std::string data;
  std::string manifest;
  std::string stations;
  double rho_min = kDefaultRhoMin;
  double d_max = kDefaultDMaxKm;
  std::string out;
  std::string sweep_out;
  std::vector<double> sweep_rho = {0.6, 0.7, 0.8, 0.85, 0.9};
  std::vector<double> sweep_d = {100, 250, 500, 750, 1000};
};

inline int cmd_build_graph(const BuildGraphArgs& a, RunManifest& rm) {
  const std::string manifest_path = a.manifest.empty() ? (fs::path(a.data) / "manifest.json").string() : a.manifest;
  require_file(manifest_path, "manifest");
  const DatasetManifest m = read_manifest(manifest_path);
  const std::string stations_path = a.stations.empty() ? (fs::path(a.data) / m.stations_file).string() : a.stations;
  require_file(stations_path, "stations file");
  const std::vector<Station> stations = read_stations_csv(stations_path);
  if (stations.size() != m.stations.size()) {
    throw StationMismatch("stations file lists " + std::to_string(stations.size()) + " stations, manifest " +
                          std::to_string(m.stations.size()));
  }
  const auto observed = graph_observed(load_corpus(a.data, m), m);
  const StationGraph g = build_graph(stations, observed, a.rho_min, a.d_max);
  make_dir(parent_dir(a.out));
  write_graph_file(a.out, g);

  const DegreeReport d = degree_report(g);
  progress("build-graph: " + std::to_string(g.edges().size()) + " edges; degree min " + std::to_string(d.min_degree) +
           " (node " + std::to_string(d.argmin) + "), max " + std::to_string(d.max_degree) + " (node " +
           std::to_string(d.argmax) + ")");
  for (std::size_t k = 0; k < d.degree.size(); ++k) progress("  node " + std::to_string(k) + ": degree " + std::to_string(d.degree[k]));
  for (int k : g.isolated_nodes()) progress("warning: node " + std::to_string(k) + " is isolated");

  rm.input("manifest", manifest_path);
  rm.input("stations", stations_path);
  rm.input("data", a.data);
  rm.output("graph", a.out);
  rm.set("rho_min", a.rho_min);
  rm.set("d_max_km", a.d_max);
  if (!a.sweep_out.empty()) {
    std::string csv = "rho_min,d_max_km,edges,isolated,min_degree\n";
    for (const auto& r : threshold_sweep(stations, observed, a.sweep_rho, a.sweep_d)) {
      csv += csv::format_double(r.rho_min) + "," + csv::format_double(r.d_max_km) + "," + std::to_string(r.edges) + "," +
             std::to_string(r.isolated) + "," + std::to_string(r.min_degree) + "\n";
    }
    write_text_file(a.sweep_out, csv);
    rm.output("sweep", a.sweep_out);
  }
  rm.write(parent_dir(a.out));
  return 0;
}

struct PrepareArgs {
  std::string data;
  std::string manifest;
  std::optional<std::size_t> w_in;
  std::optional<std::size_t> w_out;
  std::string out;
};

inline int cmd_prepare(const PrepareArgs& a, RunManifest& rm) {
  const std::string manifest_path = a.manifest.empty() ? (fs::path(a.data) / "manifest.json").string() : a.manifest;
  require_file(manifest_path, "manifest");
  DatasetManifest m = read_manifest(manifest_path);
  if (a.w_in) m.w_in = *a.w_in;
  if (a.w_out) m.w_out = *a.w_out;
  if (m.w_in == 0 || m.w_out == 0) throw InvalidSpec("w_in and w_out must be positive");
  const PreparedData p = prepare(load_corpus(a.data, m), m);
  make_dir(a.out);
  write_prepared(a.out, p, a.data);

  json report = {{"outliers",
                  {{"mean", p.outliers.stats.mean},
                   {"stddev", p.outliers.stats.stddev},
                   {"count", p.outliers.stats.count},
                   {"removed_total", p.outliers.removed_total}}},
                 {"w_in", m.w_in},
                 {"w_out", m.w_out}};
  for (const auto& [node, n] : p.outliers.removed_per_station) report["outliers"]["removed_per_station"][std::to_string(node)] = n;
  auto windows = [&](const std::vector<StormOffsets>& storms) {
    const WindowingResult r = make_windows(storms, m.w_in, m.w_out);
    return json{{"windows", r.dataset.size()}, {"skipped_storms", r.skipped_storms}};
  };
  report["train"] = windows(p.train);
  report["val"] = windows({p.val});
  report["test"] = windows({p.test});
  write_text_file((fs::path(a.out) / "prepare_report.json").string(), report.dump(2) + "\n");
  progress("prepare: " + std::to_string(p.outliers.removed_total) + " outliers repaired; " +
           std::to_string(report["train"]["windows"].get<std::size_t>()) + " training windows");
  rm.input("manifest", manifest_path);
  rm.input("data", a.data);
  rm.output("prepared", a.out);
  rm.write(a.out);
  return 0;
}

struct TrainArgs {
  std::string prepared;
  std::string graph;
  std::string config;
  std::vector<std::string> set;
  std::string out;
  std::string resume;
};

inline json train_report_json(const TrainState& st, const ModelConfig& mc, const MetricTable& val_metrics) {
  return {{"variant", variant_label(mc)},
          {"epochs", st.epoch},
          {"train_loss", st.report.train_loss},
          {"val_loss", st.report.val_loss},
          {"best_epoch", st.report.best_epoch},
          {"best_val_loss", st.report.best_val},
          {"stopped_early", st.report.stopped_early},
          {"val_metrics_m", metric_table_json(val_metrics)}};
}

inline int cmd_train(const TrainArgs& a, RunManifest& rm) {
  const RunConfig rc = load_run_config(a.config, a.set);
  const PreparedDir p = load_prepared(a.prepared);
  require_file(a.graph, "graph file");
  const StationGraph graph = read_graph_file(a.graph);
  const ModelConfig mc = model_config_for(rc, p);
  const std::string hash = graph_hash(graph);

  std::optional<TrainState> resume;
  std::optional<StormNet> start;
  if (!a.resume.empty()) {
    require_file(a.resume, "checkpoint");
    const Checkpoint ck = load_checkpoint(a.resume);
    check_graph(ck, graph);
    if (!(ck.config == mc)) throw InvalidSpec("checkpoint model configuration differs from the requested one");
    resume = resume_state(ck);
    start = restore_model(ck);
    progress("train: resuming after epoch " + std::to_string(ck.epoch));
  }
  make_dir(a.out);
  const std::string final_path = (fs::path(a.out) / "checkpoint_final.json").string();
  const std::string best_path = (fs::path(a.out) / "checkpoint_best.json").string();
  // The final checkpoint is rewritten every epoch so an interrupted run can resume.
  TrainedModel t = train_on(p, graph, start ? std::move(*start) : StormNet(mc), rc.train, "train", std::move(resume),
                            [&](const TrainState& s, const StormNet& m) {
                              save_checkpoint(final_path, training_checkpoint(m, hash, s));
                            });
  save_checkpoint(final_path, training_checkpoint(t.model, hash, t.state));
  StormNet best = t.model;
  best.parameters().values() = t.state.best_parameters;
  Checkpoint best_ck = make_checkpoint(best, hash);
  best_ck.epoch = t.state.report.best_epoch;
  best_ck.train_loss = t.state.report.train_loss;
  best_ck.val_loss = t.state.report.val_loss;
  save_checkpoint(best_path, best_ck);

  const MetricTable val_metrics = offset_metrics(best, p, graph, p.val);
  write_text_file((fs::path(a.out) / "train_report.json").string(), train_report_json(t.state, mc, val_metrics).dump(2) + "\n");
  std::string csv = "epoch,train_loss,val_loss\n";
  for (std::size_t e = 0; e < t.state.report.train_loss.size(); ++e) {
    csv += std::to_string(e + 1) + "," + csv::format_double(t.state.report.train_loss[e]) + "," +
           csv::format_double(t.state.report.val_loss[e]) + "\n";
  }
  write_text_file((fs::path(a.out) / "train_report.csv").string(), csv);
  write_text_file((fs::path(a.out) / "loss.svg").string(), svg::render(loss_plot(t.state.report, "Training loss, " + variant_label(mc))));
  write_text_file((fs::path(a.out) / "config_effective.txt").string(), config_text({rc.train, mc}));
  progress("train: best epoch " + std::to_string(t.state.report.best_epoch) + ", validation RMSE " +
           std::to_string(val_metrics.pooled.rmse) + " m");

  rm.input("prepared", a.prepared);
  rm.input("graph", a.graph);
  if (!a.config.empty()) rm.input("config", a.config);
  if (!a.resume.empty()) rm.input("resume", a.resume);
  rm.output("checkpoint_best", best_path);
  rm.output("checkpoint_final", final_path);
  rm.output("report", (fs::path(a.out) / "train_report.json").string());
  rm.set("seed", rc.train.seed);
  rm.set("model_seed", mc.seed);
  rm.set("epoch_seconds", t.state.report.epoch_seconds);
  rm.set("train_seconds", t.state.report.seconds);
  rm.write(a.out);
  return 0;
}

struct PredictArgs {
  std::string prepared;
  std::string checkpoint;
  std::string graph;
  std::string split = "test";
  std::string out;
};

inline std::string predictions_csv_text(const std::string& storm, const std::vector<WindowOrigin>& origins,
                                        const Tensor& pred, const std::vector<TimePoint>& times, std::size_t w_in) {
  std::string text = "storm_id,issue_time,lead_h,node_id,valid_time,offset_m\n";
  const std::size_t w_out = pred.dim(1), n = pred.dim(2);
  for (std::size_t w = 0; w < origins.size(); ++w) {
    const std::size_t issue = origins[w].start_index + w_in - 1;
    for (std::size_t l = 0; l < w_out; ++l)
      for (std::size_t k = 0; k < n; ++k) {
        text += storm + "," + format_iso8601(times[issue]) + "," + std::to_string(l + 1) + "," + std::to_string(k) + "," +
                format_iso8601(times[issue + l + 1]) + "," + csv::format_double(pred[(w * w_out + l) * n + k]) + "\n";
      }
  }
  return text;
}

inline int cmd_predict(const PredictArgs& a, RunManifest& rm) {
  const PreparedDir p = load_prepared(a.prepared);
  require_file(a.checkpoint, "checkpoint");
  require_file(a.graph, "graph file");
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const StationGraph graph = read_graph_file(a.graph);
  check_graph(ck, graph);
  const StormNet model = restore_model(ck);
  if (model.config().stations != p.manifest.stations.size()) throw StationMismatch("checkpoint and dataset station counts differ");
  const StormRole role = split_role(a.split);
  std::vector<const StormOffsets*> storms;
  if (role == StormRole::train) {
    for (const auto& s : p.train) storms.push_back(&s);
  } else {
    storms.push_back(role == StormRole::val ? &p.val : &p.test);
  }
  make_dir(a.out);
  for (const StormOffsets* s : storms) {
    std::vector<WindowOrigin> origins;
    const Tensor pred = predict_split(model, p, graph, *s, &origins);
    const std::string path = (fs::path(a.out) / ("predictions_" + s->storm_id + ".csv")).string();
    write_text_file(path, predictions_csv_text(s->storm_id, origins, pred, s->timestamps, model.config().w_in));
    rm.output("predictions_" + s->storm_id, path);
    progress("predict: " + std::to_string(origins.size()) + " forecasts for storm " + s->storm_id);
  }
  rm.input("prepared", a.prepared);
  rm.input("checkpoint", a.checkpoint);
  rm.input("graph", a.graph);
  rm.write(a.out);
  return 0;
}

struct CorrectArgs {
  std::string data;
  std::string manifest;
  std::string predictions;
  std::string out;
};

inline int cmd_correct(const CorrectArgs& a, RunManifest& rm) {
  require_file(a.predictions, "predictions file");
  const std::string manifest_path = a.manifest.empty() ? (fs::path(a.data) / "manifest.json").string() : a.manifest;
  require_file(manifest_path, "manifest");
  const DatasetManifest m = read_manifest(manifest_path);
  const csv::Table t = csv::read_file(a.predictions);
  if (t.header != csv::Row{"storm_id", "issue_time", "lead_h", "node_id", "valid_time", "offset_m"}) {
    throw ParseError("'" + a.predictions + "' is not a predictions file");
  }
  if (t.rows.empty()) throw EmptyDataset("'" + a.predictions + "' has no rows");
  const std::string storm_id = t.rows.front()[0];
  DatasetManifest one = m;
  one.storms.clear();
  for (const auto& s : m.storms)
    if (s.id == storm_id) one.storms.push_back(s);
  if (one.storms.empty()) throw UnknownStorm("storm '" + storm_id + "' is not in the manifest");
  const StormSeries storm = load_corpus(a.data, one).front();
  std::map<TimePoint, std::size_t> index;
  for (std::size_t i = 0; i < storm.timestamps.size(); ++i) index[storm.timestamps[i]] = i;

  std::vector<ForecastPoint> pts;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string where = a.predictions + ":" + std::to_string(r + 2);
    if (row[0] != storm_id) throw ParseError(where + ": predictions mix storms");
    ForecastPoint fp;
    fp.issue = parse_iso8601(row[1]);
    fp.lead = static_cast<std::size_t>(csv::parse_int(row[2], where));
    fp.node_id = static_cast<int>(csv::parse_int(row[3], where));
    fp.valid = parse_iso8601(row[4]);
    fp.offset = csv::parse_double(row[5], where);
    const auto it = index.find(fp.valid);
    if (it == index.end()) throw AlignmentError(where + ": no modeled value at " + row[4]);
    if (fp.node_id < 0 || static_cast<std::size_t>(fp.node_id) >= storm.stations.size()) {
      throw AlignmentError(where + ": unknown station " + row[3]);
    }
    const StationSeries& s = storm.stations[static_cast<std::size_t>(fp.node_id)];
    fp.modeled = s.modeled[it->second];
    fp.observed = s.observed[it->second];
    fp.corrected = fp.modeled - fp.offset;
    pts.push_back(fp);
  }
  make_dir(a.out);
  const std::string path = (fs::path(a.out) / ("corrected_" + storm_id + ".csv")).string();
  write_text_file(path, forecast_csv_text(pts));
  progress("correct: " + std::to_string(pts.size()) + " corrected levels for storm " + storm_id);
  rm.input("predictions", a.predictions);
  rm.input("manifest", manifest_path);
  rm.input("data", a.data);
  rm.output("corrected", path);
  rm.write(a.out);
  return 0;
}

struct EvaluateArgs {
  std::string corrected;
  std::string manifest;
  std::string storm;
  std::string landfall;
  std::vector<double> thresholds = {0.50, 0.80, 1.17};
  std::string out;
  bool plots = true;
};

inline int cmd_evaluate(const EvaluateArgs& a, RunManifest& rm) {
  require_file(a.corrected, "corrected file");
  const std::vector<ForecastPoint> pts = read_forecast_csv(a.corrected);
  if (pts.empty()) throw EmptyDataset("'" + a.corrected + "' has no rows");
  if (a.thresholds.size() != 3) throw InvalidSpec("--thresholds takes minor,moderate,major");
  const FloodThresholds th{a.thresholds[0], a.thresholds[1], a.thresholds[2]};
  validate(th);

  std::optional<TimePoint> landfall;
  if (!a.landfall.empty()) landfall = parse_iso8601(a.landfall);
  if (!landfall && !a.manifest.empty()) {
    require_file(a.manifest, "manifest");
    const DatasetManifest m = read_manifest(a.manifest);
    std::string id = a.storm;
    if (id.empty()) {
      const std::string name = fs::path(a.corrected).stem().string();
      id = name.rfind("corrected_", 0) == 0 ? name.substr(10) : m.single(StormRole::test);
    }
    for (const auto& s : m.storms)
      if (s.id == id) landfall = s.landfall;
  }

  // Offset metrics: predicted ô against the true offset modeled − observed.
  std::size_t n = 0;
  for (const auto& p : pts) n = std::max(n, static_cast<std::size_t>(p.node_id) + 1);
  std::vector<std::vector<double>> pred(n), truth(n);
  std::vector<double> all_pred, all_truth;
  for (const auto& p : pts) {
    if (std::isnan(p.observed)) continue;
    pred[static_cast<std::size_t>(p.node_id)].push_back(p.offset);
    truth[static_cast<std::size_t>(p.node_id)].push_back(p.modeled - p.observed);
    all_pred.push_back(p.offset);
    all_truth.push_back(p.modeled - p.observed);
  }
  MetricTable offsets;
  offsets.pooled = compute_metrics(all_pred, all_truth);
  for (std::size_t k = 0; k < n; ++k) offsets.per_station.push_back(compute_metrics(pred[k], truth[k]));

  const ImprovementReport full = improvement_report(level_samples(pts));
  json j = {{"offset_metrics_m", metric_table_json(offsets)}, {"full", to_json(full)}};
  if (landfall) j["landfall"] = to_json(improvement_report(level_samples(pts), WindowSpec::landfall(*landfall)));
  std::size_t max_lead = 0;
  for (const auto& p : pts) max_lead = std::max(max_lead, p.lead);
  std::string lead_csv = "lead_h,count,rmse_modeled_m,rmse_corrected_m,reduction_pct\n";
  j["per_lead"] = json::array();
  for (std::size_t l = 1; l <= max_lead; ++l) {
    const auto samples = level_samples(pts, l);
    if (samples.empty()) continue;
    const ImprovementReport r = improvement_report(samples);
    j["per_lead"].push_back({{"lead_h", l}, {"pooled", to_json(r.pooled)}});
    lead_csv += std::to_string(l) + "," + std::to_string(r.pooled.count) + "," + csv::format_double(r.pooled.rmse_modeled) +
                "," + csv::format_double(r.pooled.rmse_corrected) + "," + csv::format_double(r.pooled.reduction_pct) + "\n";
  }
  j["thresholds"] = {{"minor", th.minor}, {"moderate", th.moderate}, {"major", th.major}};
  j["lead_time_check"] = to_json(lead_time_check(pts, th));

  make_dir(a.out);
  const fs::path out(a.out);
  write_text_file((out / "evaluation.json").string(), j.dump(2) + "\n");
  write_text_file((out / "evaluation_stations.csv").string(), improvement_csv_text(full));
  write_text_file((out / "evaluation_leads.csv").string(), lead_csv);
  if (a.plots) {
    for (std::size_t k = 0; k < n; ++k) {
      svg::Plot plot{"Station " + std::to_string(k) + ", lead " + std::to_string(max_lead) + " h", "hours since first valid time",
                     "water level (m)", {}, {}, false};
      svg::Series obs{"observed", {}, {}, "#000000", false}, mod{"modeled", {}, {}, "#ff7f0e", true},
          cor{"corrected", {}, {}, "#1f77b4", false};
      std::vector<const ForecastPoint*> xs;
      for (const auto& p : pts)
        if (p.lead == max_lead && static_cast<std::size_t>(p.node_id) == k) xs.push_back(&p);
      std::stable_sort(xs.begin(), xs.end(), [](auto* x, auto* y) { return x->valid < y->valid; });
      if (xs.empty()) continue;
      for (const auto* p : xs) {
        const double h = static_cast<double>(p->valid - xs.front()->valid) / kHour;
        obs.x.push_back(h);
        obs.y.push_back(p->observed);
        mod.x.push_back(h);
        mod.y.push_back(p->modeled);
        cor.x.push_back(h);
        cor.y.push_back(p->corrected);
      }
      plot.series = {obs, mod, cor};
      plot.hlines = {{"minor", th.minor, "#2ca02c"}, {"moderate", th.moderate, "#bcbd22"}, {"major", th.major, "#d62728"}};
      write_text_file((out / ("station_" + std::to_string(k) + ".svg")).string(), svg::render(plot));
    }
  }
  std::ostringstream os;
  os << "evaluate: pooled RMSE modeled " << full.pooled.rmse_modeled << " m, corrected " << full.pooled.rmse_corrected
     << " m (" << std::fixed << std::setprecision(1) << full.pooled.reduction_pct << "% reduction)";
  progress(os.str());
  rm.input("corrected", a.corrected);
  if (!a.manifest.empty()) rm.input("manifest", a.manifest);
  rm.output("evaluation", (out / "evaluation.json").string());
  rm.write(a.out);
  return 0;
}

struct AblateArgs {
  std::string prepared;
  std::string graph;
  std::string config;
  std::vector<std::string> set;
  std::string out;
};

inline int cmd_ablate(const AblateArgs& a, RunManifest& rm) {
  const PreparedDir p = load_prepared(a.prepared);
  require_file(a.graph, "graph file");
  const StationGraph graph = read_graph_file(a.graph);
  const RunConfig rc = load_run_config(a.config, a.set);
  make_dir(a.out);
  std::string csv = "variant,rmse_m,mse_m2,mae_m,best_epoch\n";
  json rows = json::array();
  json timing = json::object();
  for (const auto& [label, flags] : variant_table()) {
    TrainedModel t = train_on(p, graph, StormNet(with_variant(model_config_for(rc, p), flags)), rc.train, label);
    t.model.parameters().values() = t.state.best_parameters;
    const MetricTable m = offset_metrics(t.model, p, graph, p.test);
    csv += label + "," + csv::format_double(m.pooled.rmse) + "," + csv::format_double(m.pooled.mse) + "," +
           csv::format_double(m.pooled.mae) + "," + std::to_string(t.state.report.best_epoch) + "\n";
    rows.push_back({{"variant", label}, {"test_metrics_m", metric_table_json(m)}, {"best_epoch", t.state.report.best_epoch},
                    {"train_loss", t.state.report.train_loss}, {"val_loss", t.state.report.val_loss}});
    timing[label] = t.state.report.seconds;
    progress("ablate: " + label + " test RMSE " + std::to_string(m.pooled.rmse) + " m");
  }
  write_text_file((fs::path(a.out) / "ablation.csv").string(), csv);
  write_text_file((fs::path(a.out) / "ablation.json").string(), rows.dump(2) + "\n");
  rm.input("prepared", a.prepared);
  rm.input("graph", a.graph);
  if (!a.config.empty()) rm.input("config", a.config);
  rm.output("table", (fs::path(a.out) / "ablation.csv").string());
  rm.set("seed", rc.train.seed);
  rm.set("train_seconds", timing);
  rm.write(a.out);
  return 0;
}

struct SweepArgs {
  std::string prepared;
  std::string graph;
  std::string config;
  std::vector<std::string> set;
  std::vector<std::size_t> w_in = {6, 12, 24, 36, 48};
  std::vector<std::size_t> w_out = {24};
  std::string out;
};

inline int cmd_sweep(const SweepArgs& a, RunManifest& rm) {
  const PreparedDir p = load_prepared(a.prepared);
  require_file(a.graph, "graph file");
  const StationGraph graph = read_graph_file(a.graph);
  const RunConfig rc = load_run_config(a.config, a.set);
  const ModelConfig base = model_config_for(rc, p);
  const GraphContext g = StormNet(base).graph_context(graph);
  const auto rows = sweep_windows(base, rc.train, scaled(p.train, p.scaler), apply_scaler(p.val, p.scaler), p.scaler, g,
                                  a.w_in, a.w_out);
  make_dir(a.out);
  std::string csv = "w_in,w_out,val_rmse_m,best_epoch\n";
  for (const auto& r : rows) {
    csv += std::to_string(r.w_in) + "," + std::to_string(r.w_out) + "," + csv::format_double(r.val_rmse) + "," +
           std::to_string(r.best_epoch) + "\n";
  }
  write_text_file((fs::path(a.out) / "sweep.csv").string(), csv);
  progress("sweep: best W_in " + std::to_string(rows.front().w_in) + ", W_out " + std::to_string(rows.front().w_out));
  rm.input("prepared", a.prepared);
  rm.input("graph", a.graph);
  if (!a.config.empty()) rm.input("config", a.config);
  rm.output("table", (fs::path(a.out) / "sweep.csv").string());
  rm.write(a.out);
  return 0;
}

struct CompareArgs {
  std::string a;
  std::string b;
  std::string out;
};

inline ImprovementReport report_from_evaluation(const std::string& path) {
  require_file(path, "evaluation file");
  ImprovementReport r;
  try {
    const json j = json::parse(read_text_file(path));
    for (const auto& s : j.at("full").at("stations")) {
      StationImprovement si;
      si.node_id = s.at("node_id").get<int>();
      si.count = s.at("count").get<std::size_t>();
      si.rmse_modeled = s.at("rmse_modeled").get<double>();
      si.rmse_corrected = s.at("rmse_corrected").get<double>();
      r.stations.push_back(si);
    }
  } catch (const json::exception& e) {
    throw ParseError("'" + path + "': " + e.what());
  }
  return r;
}

inline int cmd_compare(const CompareArgs& a, RunManifest& rm) {
  const ModelComparison c = compare_models(report_from_evaluation(a.a), report_from_evaluation(a.b));
  make_dir(a.out);
  write_text_file((fs::path(a.out) / "comparison.json").string(), to_json(c).dump(2) + "\n");
  std::string csv = "node_id,winner\n";
  for (std::size_t k = 0; k < c.nodes.size(); ++k) csv += std::to_string(c.nodes[k]) + "," + std::string(1, c.winner[k]) + "\n";
  write_text_file((fs::path(a.out) / "comparison.csv").string(), csv);
  progress("compare: A wins " + std::to_string(c.wins_a) + ", B wins " + std::to_string(c.wins_b));
  rm.input("a", a.a);
  rm.input("b", a.b);
  rm.output("comparison", (fs::path(a.out) / "comparison.json").string());
  rm.write(a.out);
  return 0;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

/// Parses `args` (args[0] is the program name) and runs one subcommand.
inline int run(const std::vector<std::string>& args) {
  CLI::App app{"stormnet: graph-based correction of storm-surge water level forecasts"};
  app.require_subcommand(1);
  app.set_version_flag("--version", STORMNET_VERSION);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "generate a synthetic storm corpus");
  c_synth->add_option("--spec", synth.spec, "synth spec JSON")->required();
  c_synth->add_option("--out", synth.out, "output dataset directory")->required();
  c_synth->add_option("--seed", synth.seed, "override the spec seed");

  BuildGraphArgs bg;
  auto* c_bg = app.add_subcommand("build-graph", "build the station graph from training observations");
  c_bg->add_option("--data", bg.data, "dataset directory")->required();
  c_bg->add_option("--manifest", bg.manifest, "dataset manifest (default DATA/manifest.json)");
  c_bg->add_option("--stations", bg.stations, "stations CSV (default from the manifest)");
  c_bg->add_option("--rho-min", bg.rho_min, "correlation threshold")->capture_default_str();
  c_bg->add_option("--d-max", bg.d_max, "distance threshold in km")->capture_default_str();
  c_bg->add_option("--out", bg.out, "graph JSON to write")->required();
  c_bg->add_option("--sweep-out", bg.sweep_out, "also write a threshold sweep CSV");
  c_bg->add_option("--sweep-rho", bg.sweep_rho, "correlation grid for the sweep")->delimiter(',');
  c_bg->add_option("--sweep-d", bg.sweep_d, "distance grid for the sweep")->delimiter(',');

  PrepareArgs prep;
  auto* c_prep = app.add_subcommand("prepare", "offsets, outlier repair, splits and scaler");
  c_prep->add_option("--data", prep.data, "dataset directory")->required();
  c_prep->add_option("--manifest", prep.manifest, "dataset manifest (default DATA/manifest.json)");
  c_prep->add_option("--w-in", prep.w_in, "past window in hours (default from the manifest)");
  c_prep->add_option("--w-out", prep.w_out, "forecast window in hours (default from the manifest)");
  c_prep->add_option("--out", prep.out, "prepared dataset directory")->required();

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "train a model");
  c_train->add_option("--prepared", tr.prepared, "prepared dataset directory")->required();
  c_train->add_option("--graph", tr.graph, "graph JSON")->required();
  c_train->add_option("--config", tr.config, "key = value config file");
  c_train->add_option("--set", tr.set, "config override key=value (repeatable)");
  c_train->add_option("--out", tr.out, "output directory")->required();
  c_train->add_option("--resume", tr.resume, "continue from a training checkpoint");

  PredictArgs pr;
  auto* c_pred = app.add_subcommand("predict", "forecast offsets for a split");
  c_pred->add_option("--prepared", pr.prepared, "prepared dataset directory")->required();
  c_pred->add_option("--checkpoint", pr.checkpoint, "model checkpoint")->required();
  c_pred->add_option("--graph", pr.graph, "graph JSON")->required();
  c_pred->add_option("--split", pr.split, "train, val or test")->capture_default_str();
  c_pred->add_option("--out", pr.out, "output directory")->required();

  CorrectArgs co;
  auto* c_corr = app.add_subcommand("correct", "apply predicted offsets to modeled levels");
  c_corr->add_option("--data", co.data, "dataset directory")->required();
  c_corr->add_option("--manifest", co.manifest, "dataset manifest (default DATA/manifest.json)");
  c_corr->add_option("--predictions", co.predictions, "predictions CSV")->required();
  c_corr->add_option("--out", co.out, "output directory")->required();

  EvaluateArgs ev;
  auto* c_eval = app.add_subcommand("evaluate", "score corrected levels against observations");
  c_eval->add_option("--corrected", ev.corrected, "corrected CSV")->required();
  c_eval->add_option("--manifest", ev.manifest, "dataset manifest, for the landfall window");
  c_eval->add_option("--storm", ev.storm, "storm id for the landfall lookup");
  c_eval->add_option("--landfall", ev.landfall, "landfall time (ISO 8601)");
  c_eval->add_option("--thresholds", ev.thresholds, "minor,moderate,major in metres")->delimiter(',');
  c_eval->add_flag("!--no-plots", ev.plots, "skip SVG plots");
  c_eval->add_option("--out", ev.out, "output directory")->required();

  AblateArgs ab;
  auto* c_abl = app.add_subcommand("ablate", "train and score the six component variants");
  c_abl->add_option("--prepared", ab.prepared, "prepared dataset directory")->required();
  c_abl->add_option("--graph", ab.graph, "graph JSON")->required();
  c_abl->add_option("--config", ab.config, "key = value config file");
  c_abl->add_option("--set", ab.set, "config override key=value (repeatable)");
  c_abl->add_option("--out", ab.out, "output directory")->required();

  SweepArgs sw;
  auto* c_sweep = app.add_subcommand("sweep", "validation RMSE over a grid of window sizes");
  c_sweep->add_option("--prepared", sw.prepared, "prepared dataset directory")->required();
  c_sweep->add_option("--graph", sw.graph, "graph JSON")->required();
  c_sweep->add_option("--config", sw.config, "key = value config file");
  c_sweep->add_option("--set", sw.set, "config override key=value (repeatable)");
  c_sweep->add_option("--w-in", sw.w_in, "past window grid")->delimiter(',');
  c_sweep->add_option("--w-out", sw.w_out, "forecast window grid")->delimiter(',');
  c_sweep->add_option("--out", sw.out, "output directory")->required();

  CompareArgs cm;
  auto* c_cmp = app.add_subcommand("compare", "per-station winner between two evaluations");
  c_cmp->add_option("--a", cm.a, "evaluation.json of model A")->required();
  c_cmp->add_option("--b", cm.b, "evaluation.json of model B")->required();
  c_cmp->add_option("--out", cm.out, "output directory")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    std::cout << STORMNET_VERSION << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  const std::vector<std::string> rest(args.begin() + 1, args.end());
  try {
    tr.config = resolve_config(tr.config);
    ab.config = resolve_config(ab.config);
    sw.config = resolve_config(sw.config);
    if (*c_synth) {
      RunManifest rm("synth", rest);
      return cmd_synth(synth, rm);
    }
    if (*c_bg) {
      RunManifest rm("build-graph", rest);
      return cmd_build_graph(bg, rm);
    }
    if (*c_prep) {
      RunManifest rm("prepare", rest);
      return cmd_prepare(prep, rm);
    }
    if (*c_train) {
      RunManifest rm("train", rest);
      return cmd_train(tr, rm);
    }
    if (*c_pred) {
      RunManifest rm("predict", rest);
      return cmd_predict(pr, rm);
    }
    if (*c_corr) {
      RunManifest rm("correct", rest);
      return cmd_correct(co, rm);
    }
    if (*c_eval) {
      RunManifest rm("evaluate", rest);
      return cmd_evaluate(ev, rm);
    }
    if (*c_abl) {
      RunManifest rm("ablate", rest);
      return cmd_ablate(ab, rm);
    }
    if (*c_sweep) {
      RunManifest rm("sweep", rest);
      return cmd_sweep(sw, rm);
    }
    if (*c_cmp) {
      RunManifest rm("compare", rest);
      return cmd_compare(cm, rm);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

inline int run(int argc, char** argv) { return run(std::vector<std::string>(argv, argv + argc)); }

}  // namespace stormnet::cli
