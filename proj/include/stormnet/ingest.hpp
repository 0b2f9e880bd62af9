#pragma once

// Station time series -> offsets -> cleaned, scaled, windowed training data.
//
// Missing values are NaN throughout. Offsets follow the bias convention
// offset = modeled - observed.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stormnet/csv.hpp"
#include "stormnet/error.hpp"
#include "stormnet/hash.hpp"
#include "stormnet/tensor.hpp"
#include "stormnet/timeutil.hpp"

namespace stormnet {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct StationSeries {
  int node_id = 0;
  std::string storm_id;
  std::vector<TimePoint> timestamps;  // hourly, strictly increasing
  std::vector<double> observed;       // metres, NaN = missing
  std::vector<double> modeled;        // metres, NaN = missing

  std::size_t size() const { return timestamps.size(); }
  bool valid(std::size_t t) const { return !std::isnan(observed[t]) && !std::isnan(modeled[t]); }
};

struct OffsetSeries {
  int node_id = 0;
  std::string storm_id;
  std::vector<TimePoint> timestamps;
  std::vector<double> values;        // metres; filled in by repair()
  std::vector<std::uint8_t> valid;   // 1 where the value is an original measurement

  std::size_t size() const { return values.size(); }
};

inline void check_series(const StationSeries& s) {
  const std::size_t n = s.timestamps.size();
  if (s.observed.size() != n || s.modeled.size() != n) {
    throw LengthMismatch("station " + std::to_string(s.node_id) + " storm " + s.storm_id +
                         ": timestamp/observed/modeled lengths differ");
  }
  for (std::size_t t = 1; t < n; ++t) {
    if (s.timestamps[t] - s.timestamps[t - 1] != kHour) {
      throw ParseError("station " + std::to_string(s.node_id) + " storm " + s.storm_id +
                       ": timestamps not hourly at " + format_iso8601(s.timestamps[t]));
    }
  }
}

inline OffsetSeries compute_offsets(const StationSeries& s) {
  check_series(s);
  OffsetSeries o{s.node_id, s.storm_id, s.timestamps, std::vector<double>(s.size(), kNaN),
                 std::vector<std::uint8_t>(s.size(), 0)};
  for (std::size_t t = 0; t < s.size(); ++t) {
    if (s.valid(t)) {
      o.values[t] = s.modeled[t] - s.observed[t];
      o.valid[t] = 1;
    }
  }
  return o;
}

// ---------------------------------------------------------------------------
// Storm-level containers
// ---------------------------------------------------------------------------

enum class StormRole { train, val, test };

inline std::string to_string(StormRole r) {
  switch (r) {
    case StormRole::train: return "train";
    case StormRole::val: return "val";
    case StormRole::test: return "test";
  }
  return "train";
}

inline StormRole storm_role_from_string(const std::string& s) {
  if (s == "train") return StormRole::train;
  if (s == "val" || s == "validation") return StormRole::val;
  if (s == "test") return StormRole::test;
  throw ParseError("unknown storm role '" + s + "'");
}

/// All stations of one storm on a shared hourly time axis.
struct StormSeries {
  std::string storm_id;
  std::vector<TimePoint> timestamps;
  std::vector<StationSeries> stations;  // position k holds station k
};

struct StormOffsets {
  std::string storm_id;
  std::vector<TimePoint> timestamps;
  std::vector<OffsetSeries> stations;

  std::size_t length() const { return timestamps.size(); }
};

inline StormOffsets compute_offsets(const StormSeries& storm) {
  StormOffsets out{storm.storm_id, storm.timestamps, {}};
  for (const StationSeries& s : storm.stations) {
    if (s.timestamps != storm.timestamps) {
      throw AlignmentError("storm " + storm.storm_id + ": station " + std::to_string(s.node_id) +
                           " is not on the storm time axis");
    }
    out.stations.push_back(compute_offsets(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Missing-data screening
// ---------------------------------------------------------------------------

struct MissingDataFinding {
  int node_id = 0;
  std::string storm_id;
  double missing_fraction = 0.0;
};

/// Stations whose missing fraction in any of `storms` exceeds `max_fraction`.
inline std::vector<MissingDataFinding> screen_missing(const std::vector<StormOffsets>& storms,
                                                      double max_fraction = 0.2) {
  std::vector<MissingDataFinding> out;
  for (const StormOffsets& st : storms) {
    for (const OffsetSeries& s : st.stations) {
      const auto good = std::count(s.valid.begin(), s.valid.end(), std::uint8_t{1});
      const double frac = 1.0 - static_cast<double>(good) / static_cast<double>(s.size());
      if (frac > max_fraction) out.push_back({s.node_id, st.storm_id, frac});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Outliers
// ---------------------------------------------------------------------------

struct OutlierStats {
  double mean = 0.0;
  double stddev = 0.0;  // population (1/n)
  std::size_t count = 0;
};

/// Mean and population standard deviation over every valid offset.
inline OutlierStats outlier_stats(const std::vector<StormOffsets>& storms) {
  OutlierStats s;
  double total = 0.0;
  for (const auto& st : storms)
    for (const auto& o : st.stations)
      for (std::size_t t = 0; t < o.size(); ++t)
        if (o.valid[t]) {
          total += o.values[t];
          ++s.count;
        }
  if (s.count < 2) throw DegenerateDataset("fewer than two valid offsets");
  s.mean = total / static_cast<double>(s.count);
  double ss = 0.0;
  for (const auto& st : storms)
    for (const auto& o : st.stations)
      for (std::size_t t = 0; t < o.size(); ++t)
        if (o.valid[t]) ss += (o.values[t] - s.mean) * (o.values[t] - s.mean);
  s.stddev = std::sqrt(ss / static_cast<double>(s.count));
  if (s.stddev == 0.0) throw DegenerateDataset("all offsets are identical (zero spread)");
  return s;
}

/// Fills every invalid entry by linear interpolation between the nearest valid
/// neighbours; leading/trailing gaps copy the nearest valid value.
inline void repair(OffsetSeries& o) {
  const std::size_t n = o.size();
  std::optional<std::size_t> prev;
  std::size_t t = 0;
  while (t < n) {
    if (o.valid[t]) {
      prev = t++;
      continue;
    }
    std::size_t next = t;
    while (next < n && !o.valid[next]) ++next;
    if (!prev && next == n) {
      throw MissingData("station " + std::to_string(o.node_id) + " has no valid offsets in storm " +
                        o.storm_id);
    }
    for (std::size_t k = t; k < next; ++k) {
      if (!prev) {
        o.values[k] = o.values[next];
      } else if (next == n) {
        o.values[k] = o.values[*prev];
      } else {
        const double w = static_cast<double>(k - *prev) / static_cast<double>(next - *prev);
        o.values[k] = o.values[*prev] + w * (o.values[next] - o.values[*prev]);
      }
    }
    t = next;
  }
}

struct OutlierReport {
  OutlierStats stats;
  std::map<int, std::size_t> removed_per_station;
  std::size_t removed_total = 0;
};

/// Marks offsets outside [mean - 3σ, mean + 3σ] invalid, then repairs all
/// invalid entries. With `frozen` unset the statistics come from `storms`.
inline OutlierReport remove_outliers(std::vector<StormOffsets>& storms,
                                     std::optional<OutlierStats> frozen = std::nullopt) {
  OutlierReport report;
  report.stats = frozen ? *frozen : outlier_stats(storms);
  const double lo = report.stats.mean - 3.0 * report.stats.stddev;
  const double hi = report.stats.mean + 3.0 * report.stats.stddev;
  for (auto& st : storms) {
    for (auto& o : st.stations) {
      report.removed_per_station.try_emplace(o.node_id, 0);
      for (std::size_t t = 0; t < o.size(); ++t) {
        if (o.valid[t] && (o.values[t] < lo || o.values[t] > hi)) {
          o.valid[t] = 0;
          ++report.removed_per_station[o.node_id];
          ++report.removed_total;
        }
      }
      repair(o);
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct StormSplit {
  std::vector<std::string> train;
  std::string val;
  std::string test;
};

/// Partitions storm ids; training storms keep their input order.
inline StormSplit split_storms(const std::vector<std::string>& storm_ids, const std::string& val_id,
                               const std::string& test_id) {
  if (val_id == test_id) {
    throw UnknownStorm("validation and test storm must differ (both '" + val_id + "')");
  }
  auto has = [&](const std::string& id) {
    return std::find(storm_ids.begin(), storm_ids.end(), id) != storm_ids.end();
  };
  if (!has(val_id)) throw UnknownStorm("validation storm '" + val_id + "' not in corpus");
  if (!has(test_id)) throw UnknownStorm("test storm '" + test_id + "' not in corpus");
  StormSplit s{{}, val_id, test_id};
  for (const auto& id : storm_ids)
    if (id != val_id && id != test_id) s.train.push_back(id);
  if (s.train.empty()) throw UnknownStorm("no training storms remain after the split");
  return s;
}

// ---------------------------------------------------------------------------
// Scaling
// ---------------------------------------------------------------------------

/// Per-station min-max map onto [0, 1], fitted on training data only.
struct ScalerParams {
  std::vector<double> data_min;
  std::vector<double> data_max;

  std::size_t stations() const { return data_min.size(); }
  double apply(double v, std::size_t station) const {
    return (v - data_min[station]) / (data_max[station] - data_min[station]);
  }
  double invert(double v, std::size_t station) const {
    return v * (data_max[station] - data_min[station]) + data_min[station];
  }
  friend bool operator==(const ScalerParams&, const ScalerParams&) = default;
};

inline ScalerParams fit_scaler(const std::vector<StormOffsets>& train) {
  if (train.empty()) throw EmptyDataset("no training storms to fit the scaler");
  const std::size_t n = train.front().stations.size();
  ScalerParams p{std::vector<double>(n, std::numeric_limits<double>::infinity()),
                 std::vector<double>(n, -std::numeric_limits<double>::infinity())};
  for (const auto& st : train) {
    if (st.stations.size() != n) throw StationMismatch("storms disagree on station count");
    for (std::size_t k = 0; k < n; ++k)
      for (double v : st.stations[k].values) {
        if (std::isnan(v)) continue;
        p.data_min[k] = std::min(p.data_min[k], v);
        p.data_max[k] = std::max(p.data_max[k], v);
      }
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (!(p.data_max[k] > p.data_min[k])) {
      throw DegenerateDataset("station " + std::to_string(k) + " has a constant training range");
    }
  }
  return p;
}

inline StormOffsets apply_scaler(const StormOffsets& storm, const ScalerParams& p) {
  if (storm.stations.size() != p.stations()) throw StationMismatch("scaler/station count differs");
  StormOffsets out = storm;
  for (std::size_t k = 0; k < out.stations.size(); ++k)
    for (double& v : out.stations[k].values) v = p.apply(v, k);
  return out;
}

inline StormOffsets invert_scaler(const StormOffsets& storm, const ScalerParams& p) {
  if (storm.stations.size() != p.stations()) throw StationMismatch("scaler/station count differs");
  StormOffsets out = storm;
  for (std::size_t k = 0; k < out.stations.size(); ++k)
    for (double& v : out.stations[k].values) v = p.invert(v, k);
  return out;
}

inline nlohmann::json scaler_to_json(const ScalerParams& p) {
  nlohmann::json j;
  j["feature_range"] = {0.0, 1.0};
  j["stations"] = nlohmann::json::array();
  for (std::size_t k = 0; k < p.stations(); ++k)
    j["stations"].push_back({{"node_id", k}, {"min", p.data_min[k]}, {"max", p.data_max[k]}});
  return j;
}

inline ScalerParams scaler_from_json(const nlohmann::json& j) {
  ScalerParams p;
  try {
    for (const auto& s : j.at("stations")) {
      p.data_min.push_back(s.at("min").get<double>());
      p.data_max.push_back(s.at("max").get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("scaler file: ") + e.what());
  }
  return p;
}

// ---------------------------------------------------------------------------
// Windows
// ---------------------------------------------------------------------------

struct WindowOrigin {
  std::string storm_id;
  TimePoint start = 0;          // timestamp of the first input step
  std::size_t start_index = 0;  // index of the first input step within the storm
};

/// Supervised pairs over all stations: inputs [count × w_in × N], targets [count × w_out × N].
struct WindowedDataset {
  std::size_t w_in = 0;
  std::size_t w_out = 0;
  std::size_t stations = 0;
  std::vector<double> inputs;
  std::vector<double> targets;
  std::vector<WindowOrigin> origins;

  std::size_t size() const { return origins.size(); }
  bool empty() const { return origins.empty(); }

  double input(std::size_t w, std::size_t lag, std::size_t station) const {
    return inputs[(w * w_in + lag) * stations + station];
  }
  double target(std::size_t w, std::size_t lag, std::size_t station) const {
    return targets[(w * w_out + lag) * stations + station];
  }

  /// Stacks the chosen windows into [B × w_in × N] and [B × w_out × N].
  std::pair<Tensor, Tensor> batch(const std::vector<std::size_t>& which) const {
    if (which.empty()) throw EmptyDataset("empty batch");
    const std::size_t in_block = w_in * stations, out_block = w_out * stations;
    Tensor x(Shape{which.size(), w_in, stations});
    Tensor y(Shape{which.size(), w_out, stations});
    for (std::size_t b = 0; b < which.size(); ++b) {
      std::copy_n(inputs.begin() + static_cast<std::ptrdiff_t>(which[b] * in_block), in_block,
                  x.data().begin() + static_cast<std::ptrdiff_t>(b * in_block));
      std::copy_n(targets.begin() + static_cast<std::ptrdiff_t>(which[b] * out_block), out_block,
                  y.data().begin() + static_cast<std::ptrdiff_t>(b * out_block));
    }
    return {std::move(x), std::move(y)};
  }
};

struct WindowingResult {
  WindowedDataset dataset;
  std::vector<std::string> skipped_storms;  // shorter than w_in + w_out
};

/// Slides a window over each storm separately; windows never cross storms.
inline WindowingResult make_windows(const std::vector<StormOffsets>& storms, std::size_t w_in,
                                    std::size_t w_out, std::size_t stride = 1) {
  if (w_in == 0 || w_out == 0 || stride == 0) throw ParseError("window sizes and stride must be positive");
  WindowingResult r;
  WindowedDataset& d = r.dataset;
  d.w_in = w_in;
  d.w_out = w_out;
  d.stations = storms.empty() ? 0 : storms.front().stations.size();
  for (const StormOffsets& st : storms) {
    if (st.stations.size() != d.stations) throw StationMismatch("storms disagree on station count");
    const std::size_t len = st.length();
    for (const auto& o : st.stations) {
      if (o.size() != len) throw AlignmentError("storm " + st.storm_id + " has ragged stations");
    }
    if (len < w_in + w_out) {
      r.skipped_storms.push_back(st.storm_id);
      continue;
    }
    for (std::size_t s = 0; s + w_in + w_out <= len; s += stride) {
      for (std::size_t lag = 0; lag < w_in; ++lag)
        for (std::size_t k = 0; k < d.stations; ++k) d.inputs.push_back(st.stations[k].values[s + lag]);
      for (std::size_t lag = 0; lag < w_out; ++lag)
        for (std::size_t k = 0; k < d.stations; ++k)
          d.targets.push_back(st.stations[k].values[s + w_in + lag]);
      d.origins.push_back({st.storm_id, st.timestamps[s], s});
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Files: series CSVs, dataset manifest, prepared offsets
// ---------------------------------------------------------------------------

struct StormEntry {
  std::string id;
  StormRole role = StormRole::train;
  std::optional<TimePoint> landfall = std::nullopt;  // used by landfall-window reports
};

struct DatasetManifest {
  std::vector<StormEntry> storms;
  std::vector<int> stations;
  std::size_t w_in = 48;
  std::size_t w_out = 24;
  std::string stations_file = "stations.csv";
  double max_missing_fraction = 0.2;

  std::vector<std::string> storm_ids(std::optional<StormRole> role = std::nullopt) const {
    std::vector<std::string> out;
    for (const auto& s : storms)
      if (!role || s.role == *role) out.push_back(s.id);
    return out;
  }

  /// The single storm with `role` (val or test).
  std::string single(StormRole role) const {
    const auto ids = storm_ids(role);
    if (ids.size() != 1) {
      throw UnknownStorm("manifest must name exactly one " + to_string(role) + " storm");
    }
    return ids.front();
  }
};

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["storms"] = nlohmann::json::array();
  for (const auto& s : m.storms) {
    nlohmann::json e = {{"id", s.id}, {"role", to_string(s.role)}};
    if (s.landfall) e["landfall"] = format_iso8601(*s.landfall);
    j["storms"].push_back(std::move(e));
  }
  j["stations"] = m.stations;
  j["w_in"] = m.w_in;
  j["w_out"] = m.w_out;
  j["stations_file"] = m.stations_file;
  j["max_missing_fraction"] = m.max_missing_fraction;
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    for (const auto& s : j.at("storms")) {
      StormEntry e{s.at("id").get<std::string>(), storm_role_from_string(s.at("role").get<std::string>()), {}};
      if (s.contains("landfall")) e.landfall = parse_iso8601(s.at("landfall").get<std::string>());
      m.storms.push_back(std::move(e));
    }
    m.stations = j.at("stations").get<std::vector<int>>();
    m.w_in = j.value("w_in", m.w_in);
    m.w_out = j.value("w_out", m.w_out);
    m.stations_file = j.value("stations_file", m.stations_file);
    m.max_missing_fraction = j.value("max_missing_fraction", m.max_missing_fraction);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("dataset manifest: ") + e.what());
  }
  for (std::size_t k = 0; k < m.stations.size(); ++k) {
    if (m.stations[k] != static_cast<int>(k)) throw ParseError("manifest stations must be 0..N-1");
  }
  return m;
}

inline DatasetManifest read_manifest(const std::string& path) {
  try {
    return manifest_from_json(nlohmann::json::parse(read_text_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("'" + path + "': " + e.what());
  }
}

inline std::string series_path(const std::filesystem::path& root, const std::string& storm_id, int node_id) {
  return (root / storm_id / (std::to_string(node_id) + ".csv")).string();
}

inline StationSeries read_series_csv(const std::string& path, int node_id, const std::string& storm_id) {
  const csv::Table t = csv::read_file(path);
  if (t.header != csv::Row{"timestamp", "observed_m", "modeled_m"}) {
    throw ParseError("'" + path + "': header must be timestamp,observed_m,modeled_m");
  }
  StationSeries s{node_id, storm_id, {}, {}, {}};
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string where = path + ":" + std::to_string(r + 2);
    s.timestamps.push_back(parse_iso8601(row[0]));
    s.observed.push_back(row[1].empty() ? kNaN : csv::parse_double(row[1], where));
    s.modeled.push_back(row[2].empty() ? kNaN : csv::parse_double(row[2], where));
  }
  check_series(s);
  return s;
}

inline std::string series_csv_text(const StationSeries& s) {
  std::string text = "timestamp,observed_m,modeled_m\n";
  for (std::size_t t = 0; t < s.size(); ++t) {
    text += format_iso8601(s.timestamps[t]) + ",";
    text += (std::isnan(s.observed[t]) ? "" : csv::format_double(s.observed[t])) + ",";
    text += (std::isnan(s.modeled[t]) ? "" : csv::format_double(s.modeled[t])) + "\n";
  }
  return text;
}

inline std::vector<StormSeries> load_corpus(const std::filesystem::path& root, const DatasetManifest& m) {
  std::vector<StormSeries> out;
  for (const auto& entry : m.storms) {
    StormSeries storm{entry.id, {}, {}};
    for (int node : m.stations) {
      StationSeries s = read_series_csv(series_path(root, entry.id, node), node, entry.id);
      if (storm.stations.empty()) {
        storm.timestamps = s.timestamps;
      } else if (s.timestamps != storm.timestamps) {
        throw AlignmentError("storm " + entry.id + ": station " + std::to_string(node) +
                             " timestamps differ from station 0");
      }
      storm.stations.push_back(std::move(s));
    }
    out.push_back(std::move(storm));
  }
  return out;
}

/// Wide CSV of one storm's offsets: timestamp, then one column per station.
inline std::string offsets_csv_text(const StormOffsets& st) {
  std::string text = "timestamp";
  for (const auto& o : st.stations) text += "," + std::to_string(o.node_id);
  text += "\n";
  for (std::size_t t = 0; t < st.length(); ++t) {
    text += format_iso8601(st.timestamps[t]);
    for (const auto& o : st.stations) text += "," + csv::format_double(o.values[t]);
    text += "\n";
  }
  return text;
}

inline StormOffsets read_offsets_csv(const std::string& path, const std::string& storm_id) {
  const csv::Table t = csv::read_file(path);
  if (t.header.size() < 2 || t.header[0] != "timestamp") throw ParseError("'" + path + "': bad header");
  StormOffsets st{storm_id, {}, {}};
  for (std::size_t k = 1; k < t.header.size(); ++k) {
    const int node = static_cast<int>(csv::parse_int(t.header[k], path));
    st.stations.push_back({node, storm_id, {}, {}, {}});
  }
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string where = path + ":" + std::to_string(r + 2);
    st.timestamps.push_back(parse_iso8601(t.rows[r][0]));
    for (std::size_t k = 1; k < t.header.size(); ++k) {
      st.stations[k - 1].values.push_back(csv::parse_double(t.rows[r][k], where));
      st.stations[k - 1].valid.push_back(1);
    }
  }
  for (auto& o : st.stations) o.timestamps = st.timestamps;
  return st;
}

// ---------------------------------------------------------------------------
// End-to-end preprocessing
// ---------------------------------------------------------------------------

struct PreparedData {
  DatasetManifest manifest;
  std::vector<StormOffsets> train;  // cleaned offsets in metres
  StormOffsets val;
  StormOffsets test;
  ScalerParams scaler;
  OutlierReport outliers;
};

/// Offsets -> missing-data screen -> 3σ gate (training statistics applied to
/// every split) -> per-station scaler fitted on the training split.
inline PreparedData prepare(const std::vector<StormSeries>& corpus, const DatasetManifest& m) {
  std::vector<std::string> ids;
  for (const auto& s : corpus) ids.push_back(s.storm_id);
  const StormSplit split = split_storms(ids, m.single(StormRole::val), m.single(StormRole::test));

  PreparedData p;
  p.manifest = m;
  auto find = [&](const std::string& id) -> const StormSeries& {
    for (const auto& s : corpus)
      if (s.storm_id == id) return s;
    throw UnknownStorm(id);
  };
  for (const auto& id : split.train) p.train.push_back(compute_offsets(find(id)));
  p.val = compute_offsets(find(split.val));
  p.test = compute_offsets(find(split.test));

  const auto findings = screen_missing(p.train, m.max_missing_fraction);
  if (!findings.empty()) {
    std::string msg = "stations exceed the missing-data cutoff:";
    for (const auto& f : findings) {
      msg += std::string(&f == &findings.front() ? " " : ", ") + "station " + std::to_string(f.node_id) + " in " + f.storm_id + " (" +
             std::to_string(static_cast<int>(std::round(100 * f.missing_fraction))) + "% missing)";
    }
    throw MissingData(msg + "; drop them from the manifest");
  }

  p.outliers = remove_outliers(p.train);
  std::vector<StormOffsets> held_out = {p.val, p.test};
  const OutlierReport held_report = remove_outliers(held_out, p.outliers.stats);
  for (const auto& [node, count] : held_report.removed_per_station) p.outliers.removed_per_station[node] += count;
  p.outliers.removed_total += held_report.removed_total;
  p.val = std::move(held_out[0]);
  p.test = std::move(held_out[1]);
  p.scaler = fit_scaler(p.train);
  return p;
}

/// Observed levels of the training storms concatenated per station, the input
/// to graph construction. Cells whose offset fails the 3σ gate become NaN.
inline std::vector<std::vector<double>> graph_observed(const std::vector<StormSeries>& corpus,
                                                       const DatasetManifest& m) {
  std::vector<const StormSeries*> train;
  for (const auto& id : m.storm_ids(StormRole::train)) {
    const auto it = std::find_if(corpus.begin(), corpus.end(), [&](const StormSeries& s) { return s.storm_id == id; });
    if (it == corpus.end()) throw UnknownStorm(id);
    train.push_back(&*it);
  }
  if (train.empty()) throw UnknownStorm("manifest lists no training storms");
  std::vector<StormOffsets> offsets;
  for (const StormSeries* s : train) offsets.push_back(compute_offsets(*s));
  const OutlierStats st = outlier_stats(offsets);
  const double lo = st.mean - 3.0 * st.stddev, hi = st.mean + 3.0 * st.stddev;
  std::vector<std::vector<double>> out(m.stations.size());
  for (std::size_t s = 0; s < train.size(); ++s)
    for (std::size_t k = 0; k < out.size(); ++k) {
      const OffsetSeries& o = offsets[s].stations[k];
      for (std::size_t t = 0; t < o.size(); ++t) {
        const bool keep = o.valid[t] && o.values[t] >= lo && o.values[t] <= hi;
        out[k].push_back(keep ? train[s]->stations[k].observed[t] : kNaN);
      }
    }
  return out;
}

inline std::vector<StormOffsets> scaled(const std::vector<StormOffsets>& storms, const ScalerParams& p) {
  std::vector<StormOffsets> out;
  for (const auto& s : storms) out.push_back(apply_scaler(s, p));
  return out;
}

}  // namespace stormnet
