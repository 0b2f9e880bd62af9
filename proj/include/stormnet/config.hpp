#pragma once

// Flat key = value run configuration. Training keys are bare, model keys carry
// a "model." prefix; '#' starts a comment. Unknown keys are errors.

#include <charconv>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "stormnet/model.hpp"
#include "stormnet/training.hpp"

namespace stormnet {

struct RunConfig {
  TrainConfig train;
  ModelConfig model;  // stations, w_in and w_out are taken from the prepared data
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
}

inline std::size_t parse_count(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw InvalidSpec(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw InvalidSpec(key + ": expected a number, got '" + v + "'");
}

inline bool parse_flag(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw InvalidSpec(key + ": expected true or false, got '" + v + "'");
}

inline std::string flag_text(bool b) { return b ? "true" : "false"; }

inline std::string real_text(double d) { return csv::format_double(d); }

struct ConfigKey {
  std::string name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename Enum, typename FromString>
ConfigKey enum_key(std::string name, Enum ModelConfig::*field, FromString from) {
  return {name, [field](const RunConfig& c) { return to_string(c.model.*field); },
          [field, from, name](RunConfig& c, const std::string& v) {
            try {
              c.model.*field = from(v);
            } catch (const Error& e) {
              throw InvalidSpec(name + ": " + e.what());
            }
          }};
}

#define STORMNET_COUNT(KEY, EXPR) \
  {KEY, [](const RunConfig& c) { return std::to_string(c.EXPR); }, [](RunConfig& c, const std::string& v) { c.EXPR = parse_count(KEY, v); }}
#define STORMNET_REAL(KEY, EXPR) \
  {KEY, [](const RunConfig& c) { return real_text(c.EXPR); }, [](RunConfig& c, const std::string& v) { c.EXPR = parse_real(KEY, v); }}
#define STORMNET_FLAG(KEY, EXPR) \
  {KEY, [](const RunConfig& c) { return flag_text(c.EXPR); }, [](RunConfig& c, const std::string& v) { c.EXPR = parse_flag(KEY, v); }}

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      STORMNET_COUNT("epochs", train.epochs),
      STORMNET_REAL("learning_rate", train.learning_rate),
      STORMNET_REAL("weight_decay", train.weight_decay),
      STORMNET_COUNT("batch_size", train.batch_size),
      STORMNET_COUNT("seed", train.seed),
      STORMNET_FLAG("shuffle", train.shuffle),
      STORMNET_COUNT("patience", train.patience),
      STORMNET_COUNT("shards", train.shards),
      STORMNET_FLAG("parallel_shards", train.parallel_shards),
      STORMNET_COUNT("stride", train.stride),
      STORMNET_FLAG("model.mlp", model.mlp),
      STORMNET_FLAG("model.gcn", model.gcn),
      STORMNET_FLAG("model.gat", model.gat),
      STORMNET_FLAG("model.allow_pure_lstm", model.allow_pure_lstm),
      STORMNET_COUNT("model.mlp_width", model.mlp_width),
      STORMNET_COUNT("model.gcn_width", model.gcn_width),
      STORMNET_COUNT("model.gat_head_width", model.gat_head_width),
      STORMNET_COUNT("model.gat_heads", model.gat_heads),
      enum_key("model.gat_merge", &ModelConfig::gat_merge, head_merge_from_string),
      STORMNET_FLAG("model.gat_edge_weights", model.gat_edge_weights),
      enum_key("model.gcn_norm", &ModelConfig::gcn_norm, gcn_norm_from_string),
      STORMNET_FLAG("model.gcn_edge_weights", model.gcn_edge_weights),
      STORMNET_COUNT("model.lstm_hidden", model.lstm_hidden),
      STORMNET_COUNT("model.lstm_layers", model.lstm_layers),
      enum_key("model.mlp_activation", &ModelConfig::mlp_activation, activation_from_string),
      enum_key("model.gcn_activation", &ModelConfig::gcn_activation, activation_from_string),
      enum_key("model.gat_activation", &ModelConfig::gat_activation, activation_from_string),
      STORMNET_REAL("model.dropout", model.dropout),
      STORMNET_COUNT("model.seed", model.seed),
  };
  return keys;
}

#undef STORMNET_COUNT
#undef STORMNET_REAL
#undef STORMNET_FLAG

}  // namespace detail

/// Applies one assignment; "model.variant" sets the three component flags from a label.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  if (key == "model.variant") {
    const VariantFlags f = variant_from_label(value);
    c.model.mlp = f.mlp;
    c.model.gcn = f.gcn;
    c.model.gat = f.gat;
    return;
  }
  for (const auto& k : detail::config_keys()) {
    if (k.name == key) {
      k.set(c, value);
      return;
    }
  }
  throw InvalidSpec("unknown config key '" + key + "'");
}

inline RunConfig parse_config(const std::string& text, const std::string& origin = "config") {
  RunConfig c;
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InvalidSpec(origin + ":" + std::to_string(line_no) + ": expected key = value");
    }
    try {
      set_config_value(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const InvalidVariant& e) {
      throw InvalidSpec(origin + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const InvalidSpec& e) {
      throw InvalidSpec(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  validate(c.train);
  return c;
}

inline RunConfig read_config(const std::string& path) {
  if (!std::filesystem::exists(path)) throw InvalidSpec("config file '" + path + "' does not exist");
  return parse_config(read_text_file(path), path);
}

/// Every key with its effective value; parse_config(config_text(c)) == c.
inline std::string config_text(const RunConfig& c) {
  std::string text;
  for (const auto& k : detail::config_keys()) text += k.name + " = " + k.get(c) + "\n";
  return text;
}

}  // namespace stormnet
