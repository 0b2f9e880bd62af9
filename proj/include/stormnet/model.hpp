#pragma once

// The spatio-temporal offset forecaster: optional MLP lift, optional GCN,
// optional GAT, two LSTM layers, linear head.

#include <algorithm>
#include <cctype>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stormnet/adam.hpp"
#include "stormnet/hash.hpp"
#include "stormnet/layers.hpp"

namespace stormnet {

inline constexpr int kCheckpointVersion = 1;

struct ModelConfig {
  std::size_t stations = 1;
  std::size_t w_in = 48;
  std::size_t w_out = 24;

  bool mlp = true;
  bool gcn = true;
  bool gat = true;
  bool allow_pure_lstm = false;  // permits a model with no spatial stage

  std::size_t mlp_width = 64;
  std::size_t gcn_width = 64;
  std::size_t gat_head_width = 64;
  std::size_t gat_heads = 4;
  HeadMerge gat_merge = HeadMerge::concat;
  bool gat_edge_weights = false;
  GcnNorm gcn_norm = GcnNorm::symmetric;
  bool gcn_edge_weights = true;
  std::size_t lstm_hidden = 64;
  std::size_t lstm_layers = 2;
  Activation mlp_activation = Activation::relu;
  Activation gcn_activation = Activation::relu;
  Activation gat_activation = Activation::relu;
  double dropout = 0.0;
  std::uint64_t seed = 0;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// ---------------------------------------------------------------------------
// Variants
// ---------------------------------------------------------------------------

struct VariantFlags {
  bool mlp = false, gcn = false, gat = false;
};

inline const std::vector<std::pair<std::string, VariantFlags>>& variant_table() {
  static const std::vector<std::pair<std::string, VariantFlags>> table = {
      {"GAT+LSTM", {false, false, true}},        {"GCN+LSTM", {false, true, false}},
      {"GCN+GAT+LSTM", {false, true, true}},     {"MLP+GAT+LSTM", {true, false, true}},
      {"MLP+GCN+LSTM", {true, true, false}},     {"MLP+GAT+GCN+LSTM", {true, true, true}},
  };
  return table;
}

inline std::string variant_label(const ModelConfig& c) {
  for (const auto& [label, f] : variant_table())
    if (f.mlp == c.mlp && f.gcn == c.gcn && f.gat == c.gat) return label;
  if (!c.gcn && !c.gat && c.allow_pure_lstm) return c.mlp ? "MLP+LSTM" : "LSTM";
  throw InvalidVariant("component set {" + std::string(c.mlp ? "mlp " : "") + (c.gcn ? "gcn " : "") +
                       (c.gat ? "gat " : "") + "lstm} is not a supported variant");
}

/// Parses component names such as {"mlp","gat","lstm"}; "lstm" is implied by every variant.
inline VariantFlags parse_variant(const std::vector<std::string>& components) {
  VariantFlags f;
  bool lstm = false;
  for (std::string c : components) {
    std::transform(c.begin(), c.end(), c.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (c == "mlp") f.mlp = true;
    else if (c == "gcn") f.gcn = true;
    else if (c == "gat") f.gat = true;
    else if (c == "lstm") lstm = true;
    else throw InvalidVariant("unknown component '" + c + "'");
  }
  if (!lstm) throw InvalidVariant("every variant needs the LSTM stage");
  return f;
}

inline VariantFlags variant_from_label(const std::string& label) {
  for (const auto& [l, f] : variant_table())
    if (l == label) return f;
  throw InvalidVariant("unknown variant '" + label + "'");
}

inline ModelConfig with_variant(ModelConfig c, VariantFlags f) {
  c.mlp = f.mlp;
  c.gcn = f.gcn;
  c.gat = f.gat;
  variant_label(c);
  return c;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

class StormNet {
 public:
  explicit StormNet(ModelConfig config) : config_(std::move(config)) {
    variant_label(config_);
    if (config_.stations == 0 || config_.w_in == 0 || config_.w_out == 0 || config_.lstm_layers == 0) {
      throw InvalidSpec("stations, windows and LSTM depth must be positive");
    }
    if (config_.dropout < 0.0 || config_.dropout >= 1.0) throw InvalidSpec("dropout must be in [0, 1)");
    Rng rng(config_.seed);
    std::size_t width = 1;
    if (config_.mlp) {
      mlp_ = MlpLayer(params_, "mlp", width, config_.mlp_width, config_.mlp_activation, rng);
      width = config_.mlp_width;
    }
    if (config_.gcn) {
      gcn_ = GcnLayer(params_, "gcn", width, config_.gcn_width, config_.gcn_activation, rng);
      width = config_.gcn_width;
    }
    if (config_.gat) {
      gat_ = GatLayer(params_, "gat", width, config_.gat_head_width, config_.gat_heads, config_.gat_merge,
                      config_.gat_activation, rng);
      gat_->edge_weights = config_.gat_edge_weights;
      width = gat_->out_width();
    }
    for (std::size_t l = 0; l < config_.lstm_layers; ++l) {
      lstm_.emplace_back(params_, "lstm" + std::to_string(l), width, config_.lstm_hidden, rng);
      width = config_.lstm_hidden;
    }
    head_ = MlpLayer(params_, "head", width, config_.w_out, Activation::linear, rng);
  }

  const ModelConfig& config() const noexcept { return config_; }
  std::string label() const { return variant_label(config_); }
  ParameterSet& parameters() noexcept { return params_; }
  const ParameterSet& parameters() const noexcept { return params_; }

  GraphContext graph_context(const StationGraph& graph) const {
    if (graph.size() != config_.stations) {
      throw GraphMismatch("model expects " + std::to_string(config_.stations) + " stations, graph has " +
                          std::to_string(graph.size()));
    }
    return make_graph_context(graph, config_.gcn_norm, config_.gcn_edge_weights);
  }

  /// x: [B × W_in × N] -> [B × W_out × N]. Dropout is active only when `dropout_rng` is given.
  Var forward(const BoundParameters& p, const Var& x, const GraphContext& g, Rng* dropout_rng = nullptr) const {
    const Tensor& xv = x.value();
    const std::size_t n = config_.stations, w_in = config_.w_in, w_out = config_.w_out;
    if (xv.rank() != 3 || xv.dim(1) != w_in || xv.dim(2) != n) {
      throw ShapeMismatch("model input " + shape_str(xv.shape()) + ", expected [B × " + std::to_string(w_in) +
                          " × " + std::to_string(n) + "]");
    }
    if (g.n != n) throw GraphMismatch("graph has " + std::to_string(g.n) + " nodes, model " + std::to_string(n));
    const std::size_t batch = xv.dim(0);

    // Rows ordered (t, b, n): each timestep is a block of B stacked graphs.
    std::vector<std::size_t> index;
    index.reserve(xv.size());
    for (std::size_t t = 0; t < w_in; ++t)
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t k = 0; k < n; ++k) index.push_back((b * w_in + t) * n + k);
    Var h = gather(x, std::move(index), Shape{w_in * batch * n, 1});

    if (mlp_) h = mlp_->forward(p, h);
    if (gcn_) h = gcn_->forward(p, h, g);
    if (gat_) {
      h = gat_->forward(p, h, g);
      if (dropout_rng && config_.dropout > 0.0) h = dropout(h, *dropout_rng);
    }

    for (const LstmLayer& layer : lstm_) h = layer.run(p, h, w_in);
    const std::size_t rows = batch * n;
    const Var last = w_in == 1 ? h : slice_rows(h, (w_in - 1) * rows, rows);
    const Var out = head_.forward(p, last);  // [B·N × W_out], row b·N + k

    std::vector<std::size_t> back;
    back.reserve(batch * w_out * n);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t l = 0; l < w_out; ++l)
        for (std::size_t k = 0; k < n; ++k) back.push_back((b * n + k) * w_out + l);
    return gather(out, std::move(back), Shape{batch, w_out, n});
  }

  /// Inference without gradient bookkeeping.
  Tensor predict(const Tensor& x, const GraphContext& g) const {
    Tape tape;
    const BoundParameters p = bind(tape, params_, false);
    return forward(p, tape.constant(x), g).value();
  }

 private:
  Var dropout(const Var& h, Rng& rng) const {
    const double keep = 1.0 - config_.dropout;
    std::bernoulli_distribution coin(keep);
    Tensor mask(h.shape());
    for (double& m : mask.data()) m = coin(rng) ? 1.0 / keep : 0.0;
    return mul(h, h.tape()->constant(std::move(mask)));
  }

  ModelConfig config_;
  ParameterSet params_;
  std::optional<MlpLayer> mlp_;
  std::optional<GcnLayer> gcn_;
  std::optional<GatLayer> gat_;
  std::vector<LstmLayer> lstm_;
  MlpLayer head_;
};

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {
      {"stations", c.stations},
      {"w_in", c.w_in},
      {"w_out", c.w_out},
      {"mlp", c.mlp},
      {"gcn", c.gcn},
      {"gat", c.gat},
      {"allow_pure_lstm", c.allow_pure_lstm},
      {"mlp_width", c.mlp_width},
      {"gcn_width", c.gcn_width},
      {"gat_head_width", c.gat_head_width},
      {"gat_heads", c.gat_heads},
      {"gat_merge", to_string(c.gat_merge)},
      {"gat_edge_weights", c.gat_edge_weights},
      {"gcn_norm", to_string(c.gcn_norm)},
      {"gcn_edge_weights", c.gcn_edge_weights},
      {"lstm_hidden", c.lstm_hidden},
      {"lstm_layers", c.lstm_layers},
      {"mlp_activation", to_string(c.mlp_activation)},
      {"gcn_activation", to_string(c.gcn_activation)},
      {"gat_activation", to_string(c.gat_activation)},
      {"dropout", c.dropout},
      {"seed", c.seed},
  };
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.stations = j.at("stations").get<std::size_t>();
  c.w_in = j.at("w_in").get<std::size_t>();
  c.w_out = j.at("w_out").get<std::size_t>();
  c.mlp = j.at("mlp").get<bool>();
  c.gcn = j.at("gcn").get<bool>();
  c.gat = j.at("gat").get<bool>();
  c.allow_pure_lstm = j.value("allow_pure_lstm", false);
  c.mlp_width = j.at("mlp_width").get<std::size_t>();
  c.gcn_width = j.at("gcn_width").get<std::size_t>();
  c.gat_head_width = j.at("gat_head_width").get<std::size_t>();
  c.gat_heads = j.at("gat_heads").get<std::size_t>();
  c.gat_merge = head_merge_from_string(j.at("gat_merge").get<std::string>());
  c.gat_edge_weights = j.at("gat_edge_weights").get<bool>();
  c.gcn_norm = gcn_norm_from_string(j.at("gcn_norm").get<std::string>());
  c.gcn_edge_weights = j.at("gcn_edge_weights").get<bool>();
  c.lstm_hidden = j.at("lstm_hidden").get<std::size_t>();
  c.lstm_layers = j.at("lstm_layers").get<std::size_t>();
  c.mlp_activation = activation_from_string(j.at("mlp_activation").get<std::string>());
  c.gcn_activation = activation_from_string(j.at("gcn_activation").get<std::string>());
  c.gat_activation = activation_from_string(j.at("gat_activation").get<std::string>());
  c.dropout = j.at("dropout").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline nlohmann::json tensor_to_json(const Tensor& t) { return {{"shape", t.shape()}, {"data", t.storage()}}; }

inline Tensor tensor_from_json(const nlohmann::json& j) {
  return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

/// Everything needed to resume training or run inference.
struct Checkpoint {
  ModelConfig config;
  std::string graph_hash;
  std::vector<std::string> names;
  std::vector<Tensor> values;
  std::optional<AdamState> optimizer;
  std::size_t epoch = 0;  // completed epochs
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  nlohmann::json extra = nlohmann::json::object();  // free-form training metadata
};

inline Checkpoint make_checkpoint(const StormNet& model, const std::string& graph_hash) {
  return {model.config(), graph_hash, model.parameters().names(), model.parameters().values(), std::nullopt, 0, {},
          {}, nlohmann::json::object()};
}

/// Rebuilds the model and installs the stored parameters.
inline StormNet restore_model(const Checkpoint& ck) {
  StormNet m(ck.config);
  ParameterSet& ps = m.parameters();
  if (ps.names() != ck.names) throw CorruptCheckpoint("parameter names do not match the configured model");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps[i].shape() != ck.values[i].shape()) {
      throw CorruptCheckpoint("parameter '" + ck.names[i] + "' has shape " + shape_str(ck.values[i].shape()));
    }
    ps[i] = ck.values[i];
  }
  return m;
}

inline std::string checkpoint_text(const Checkpoint& ck) {
  nlohmann::json j;
  j["format"] = "stormnet-checkpoint";
  j["version"] = kCheckpointVersion;
  j["config"] = config_to_json(ck.config);
  j["graph_hash"] = ck.graph_hash;
  j["parameters"] = nlohmann::json::array();
  for (std::size_t i = 0; i < ck.names.size(); ++i) {
    nlohmann::json p = tensor_to_json(ck.values[i]);
    p["name"] = ck.names[i];
    j["parameters"].push_back(std::move(p));
  }
  if (ck.optimizer) {
    const AdamState& s = *ck.optimizer;
    nlohmann::json o = {{"learning_rate", s.options.learning_rate}, {"beta1", s.options.beta1},
                        {"beta2", s.options.beta2},                 {"epsilon", s.options.epsilon},
                        {"weight_decay", s.options.weight_decay},   {"step", s.step}};
    o["first_moment"] = nlohmann::json::array();
    o["second_moment"] = nlohmann::json::array();
    for (const Tensor& t : s.first_moment) o["first_moment"].push_back(tensor_to_json(t));
    for (const Tensor& t : s.second_moment) o["second_moment"].push_back(tensor_to_json(t));
    j["optimizer"] = std::move(o);
  }
  j["epoch"] = ck.epoch;
  j["train_loss"] = ck.train_loss;
  j["val_loss"] = ck.val_loss;
  j["extra"] = ck.extra;
  return j.dump() + "\n";
}

inline Checkpoint checkpoint_from_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw CorruptCheckpoint(std::string("not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "stormnet-checkpoint") throw CorruptCheckpoint("unknown format tag");
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw VersionMismatch("checkpoint version " + std::to_string(version) + ", reader expects " +
                            std::to_string(kCheckpointVersion));
    }
    Checkpoint ck;
    ck.config = config_from_json(j.at("config"));
    ck.graph_hash = j.at("graph_hash").get<std::string>();
    for (const auto& p : j.at("parameters")) {
      ck.names.push_back(p.at("name").get<std::string>());
      ck.values.push_back(tensor_from_json(p));
    }
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      AdamState s;
      s.options = {o.at("learning_rate").get<double>(), o.at("beta1").get<double>(), o.at("beta2").get<double>(),
                   o.at("epsilon").get<double>(), o.at("weight_decay").get<double>()};
      s.step = o.at("step").get<std::uint64_t>();
      for (const auto& t : o.at("first_moment")) s.first_moment.push_back(tensor_from_json(t));
      for (const auto& t : o.at("second_moment")) s.second_moment.push_back(tensor_from_json(t));
      if (s.first_moment.size() != ck.values.size() || s.second_moment.size() != ck.values.size()) {
        throw CorruptCheckpoint("optimizer state does not cover every parameter");
      }
      ck.optimizer = std::move(s);
    }
    ck.epoch = j.at("epoch").get<std::size_t>();
    ck.train_loss = j.at("train_loss").get<std::vector<double>>();
    ck.val_loss = j.at("val_loss").get<std::vector<double>>();
    ck.extra = j.value("extra", nlohmann::json::object());
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpoint(std::string("missing or malformed field: ") + e.what());
  } catch (const ShapeMismatch& e) {
    throw CorruptCheckpoint(e.what());
  } catch (const InvalidSpec& e) {
    throw CorruptCheckpoint(e.what());
  }
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) { write_text_file(path, checkpoint_text(ck)); }

inline Checkpoint load_checkpoint(const std::string& path) { return checkpoint_from_text(read_text_file(path)); }

/// Fails unless `graph` is the graph the checkpoint was trained against.
inline void check_graph(const Checkpoint& ck, const StationGraph& graph) {
  if (graph.size() != ck.config.stations) {
    throw GraphMismatch("checkpoint trained on " + std::to_string(ck.config.stations) + " stations, graph has " +
                        std::to_string(graph.size()));
  }
  const std::string h = graph_hash(graph);
  if (!ck.graph_hash.empty() && h != ck.graph_hash) {
    throw GraphMismatch("graph hash " + h + " differs from checkpoint " + ck.graph_hash);
  }
}

}  // namespace stormnet
