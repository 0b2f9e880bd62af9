#pragma once

// Applying predicted offsets to modeled levels, and scoring the corrected levels.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stormnet/ingest.hpp"

namespace stormnet {

// ---------------------------------------------------------------------------
// Correction
// ---------------------------------------------------------------------------

struct CorrectedSeries {
  int node_id = 0;
  std::vector<TimePoint> timestamps;
  std::vector<double> modeled;
  std::vector<double> offset;  // predicted ô
  std::vector<double> corrected;
  std::vector<double> observed;  // NaN where unavailable
};

/// corrected(t) = modeled(t) − ô(t).
inline CorrectedSeries apply_correction(const StationSeries& series, const OffsetSeries& predicted) {
  if (series.node_id != predicted.node_id) {
    throw AlignmentError("series is station " + std::to_string(series.node_id) + ", offsets are station " +
                         std::to_string(predicted.node_id));
  }
  if (series.timestamps != predicted.timestamps) {
    throw AlignmentError("station " + std::to_string(series.node_id) + ": offset timestamps do not match the series");
  }
  CorrectedSeries c{series.node_id, series.timestamps, series.modeled, predicted.values, {}, series.observed};
  c.corrected.resize(c.modeled.size());
  for (std::size_t t = 0; t < c.modeled.size(); ++t) c.corrected[t] = c.modeled[t] - c.offset[t];
  return c;
}

inline std::vector<CorrectedSeries> apply_correction(const StormSeries& storm, const StormOffsets& predicted) {
  if (storm.stations.size() != predicted.stations.size()) {
    throw AlignmentError("storm " + storm.storm_id + " has " + std::to_string(storm.stations.size()) +
                         " stations, offsets cover " + std::to_string(predicted.stations.size()));
  }
  std::vector<CorrectedSeries> out;
  for (std::size_t k = 0; k < storm.stations.size(); ++k) out.push_back(apply_correction(storm.stations[k], predicted.stations[k]));
  return out;
}

// ---------------------------------------------------------------------------
// Multi-horizon forecasts, keyed by (issue time, lead)
// ---------------------------------------------------------------------------

struct ForecastPoint {
  TimePoint issue = 0;  // time of the last input step
  std::size_t lead = 0;  // hours ahead, 1..W_out
  int node_id = 0;
  TimePoint valid = 0;
  double modeled = 0.0;
  double observed = 0.0;  // NaN where unavailable
  double offset = 0.0;
  double corrected = 0.0;
};

/// Expands window predictions [windows × W_out × N] (metres) against one storm's series.
inline std::vector<ForecastPoint> forecast_points(const StormSeries& storm, const Tensor& predicted,
                                                  const std::vector<WindowOrigin>& origins, std::size_t w_in) {
  if (predicted.rank() != 3 || predicted.dim(0) != origins.size() || predicted.dim(2) != storm.stations.size()) {
    throw AlignmentError("predictions " + shape_str(predicted.shape()) + " do not match " +
                         std::to_string(origins.size()) + " windows over " + std::to_string(storm.stations.size()) +
                         " stations");
  }
  const std::size_t w_out = predicted.dim(1), n = predicted.dim(2);
  std::vector<ForecastPoint> out;
  out.reserve(predicted.size());
  for (std::size_t w = 0; w < origins.size(); ++w) {
    const WindowOrigin& o = origins[w];
    if (o.storm_id != storm.storm_id) throw AlignmentError("window from storm " + o.storm_id + " applied to " + storm.storm_id);
    if (o.start_index + w_in + w_out > storm.timestamps.size() || storm.timestamps[o.start_index] != o.start) {
      throw AlignmentError("window at " + format_iso8601(o.start) + " does not fit storm " + storm.storm_id);
    }
    const std::size_t issue_idx = o.start_index + w_in - 1;
    for (std::size_t l = 0; l < w_out; ++l)
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t t = issue_idx + 1 + l;
        const StationSeries& s = storm.stations[k];
        ForecastPoint p{storm.timestamps[issue_idx], l + 1, s.node_id, storm.timestamps[t], s.modeled[t], s.observed[t],
                        predicted[(w * w_out + l) * n + k], 0.0};
        p.corrected = p.modeled - p.offset;
        out.push_back(p);
      }
  }
  return out;
}

inline std::string forecast_csv_text(const std::vector<ForecastPoint>& pts) {
  std::string text = "issue_time,lead_h,node_id,valid_time,modeled_m,observed_m,offset_m,corrected_m\n";
  for (const auto& p : pts) {
    text += format_iso8601(p.issue) + "," + std::to_string(p.lead) + "," + std::to_string(p.node_id) + "," +
            format_iso8601(p.valid) + "," + csv::format_double(p.modeled) + "," +
            (std::isnan(p.observed) ? "" : csv::format_double(p.observed)) + "," + csv::format_double(p.offset) + "," +
            csv::format_double(p.corrected) + "\n";
  }
  return text;
}

inline std::vector<ForecastPoint> read_forecast_csv(const std::string& path) {
  const csv::Table t = csv::read_file(path);
  if (t.header.size() != 8 || t.header[0] != "issue_time") throw ParseError("'" + path + "': not a forecast table");
  std::vector<ForecastPoint> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string where = path + ":" + std::to_string(r + 2);
    out.push_back({parse_iso8601(row[0]), static_cast<std::size_t>(csv::parse_int(row[1], where)),
                   static_cast<int>(csv::parse_int(row[2], where)), parse_iso8601(row[3]), csv::parse_double(row[4], where),
                   row[5].empty() ? kNaN : csv::parse_double(row[5], where), csv::parse_double(row[6], where),
                   csv::parse_double(row[7], where)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Improvement reports
// ---------------------------------------------------------------------------

/// One scored sample: a station's levels at one time (and, for forecasts, one lead).
struct LevelSample {
  int node_id = 0;
  TimePoint time = 0;
  double observed = 0.0;
  double modeled = 0.0;
  double corrected = 0.0;
};

inline std::vector<LevelSample> level_samples(const std::vector<CorrectedSeries>& series) {
  std::vector<LevelSample> out;
  for (const auto& s : series)
    for (std::size_t t = 0; t < s.timestamps.size(); ++t)
      out.push_back({s.node_id, s.timestamps[t], s.observed[t], s.modeled[t], s.corrected[t]});
  return out;
}

/// Forecast samples, optionally restricted to one lead.
inline std::vector<LevelSample> level_samples(const std::vector<ForecastPoint>& pts,
                                              std::optional<std::size_t> lead = std::nullopt) {
  std::vector<LevelSample> out;
  for (const auto& p : pts)
    if (!lead || p.lead == *lead) out.push_back({p.node_id, p.valid, p.observed, p.modeled, p.corrected});
  return out;
}

struct WindowSpec {
  std::optional<TimePoint> from;  // inclusive
  std::optional<TimePoint> to;    // inclusive
  std::string label = "full";

  static WindowSpec full() { return {}; }
  static WindowSpec range(TimePoint a, TimePoint b) { return {a, b, "range"}; }
  /// Two days centred on landfall.
  static WindowSpec landfall(TimePoint t) { return {t - 24 * kHour, t + 24 * kHour, "landfall"}; }

  bool contains(TimePoint t) const { return (!from || t >= *from) && (!to || t <= *to); }
};

struct StationImprovement {
  int node_id = -1;  // -1 for the pooled row
  std::size_t count = 0;
  double rmse_modeled = 0.0;
  double rmse_corrected = 0.0;
  double reduction_pct = 0.0;  // NaN when the modeled RMSE is zero
  // Error at the time of the highest observed level.
  TimePoint peak_time = 0;
  double peak_observed = 0.0;
  double peak_error_modeled = 0.0;
  double peak_error_corrected = 0.0;
};

struct ImprovementReport {
  WindowSpec window;
  std::vector<StationImprovement> stations;
  StationImprovement pooled;
};

inline double reduction_percent(double rmse_modeled, double rmse_corrected) {
  return rmse_modeled > 0 ? 100.0 * (1.0 - rmse_corrected / rmse_modeled) : kNaN;
}

namespace detail {

inline StationImprovement score_samples(int node, const std::vector<const LevelSample*>& xs) {
  StationImprovement s;
  s.node_id = node;
  s.count = xs.size();
  double sm = 0, sc = 0;
  const LevelSample* peak = xs.front();
  for (const LevelSample* x : xs) {
    sm += (x->modeled - x->observed) * (x->modeled - x->observed);
    sc += (x->corrected - x->observed) * (x->corrected - x->observed);
    if (x->observed > peak->observed) peak = x;
  }
  s.rmse_modeled = std::sqrt(sm / static_cast<double>(xs.size()));
  s.rmse_corrected = std::sqrt(sc / static_cast<double>(xs.size()));
  s.reduction_pct = reduction_percent(s.rmse_modeled, s.rmse_corrected);
  s.peak_time = peak->time;
  s.peak_observed = peak->observed;
  s.peak_error_modeled = std::abs(peak->modeled - peak->observed);
  s.peak_error_corrected = std::abs(peak->corrected - peak->observed);
  return s;
}

}  // namespace detail

/// RMSE of modeled and corrected levels against observations, per station and
/// pooled, over samples inside `window` with a valid observation.
inline ImprovementReport improvement_report(const std::vector<LevelSample>& samples, const WindowSpec& window = {}) {
  std::map<int, std::vector<const LevelSample*>> by_station;
  std::vector<const LevelSample*> all;
  for (const auto& s : samples) by_station[s.node_id];  // every station gets a row
  for (const auto& s : samples) {
    if (std::isnan(s.observed) || !window.contains(s.time)) continue;
    by_station[s.node_id].push_back(&s);
    all.push_back(&s);
  }
  ImprovementReport r;
  r.window = window;
  for (const auto& [node, xs] : by_station) {
    if (xs.empty()) throw EmptyWindow("station " + std::to_string(node) + " has no observed samples in the " + window.label + " window");
    r.stations.push_back(detail::score_samples(node, xs));
  }
  if (all.empty()) throw EmptyWindow("no observed samples in the " + window.label + " window");
  r.pooled = detail::score_samples(-1, all);
  return r;
}

inline nlohmann::json to_json(const StationImprovement& s) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); };
  nlohmann::json j = {{"count", s.count},
                      {"rmse_modeled", s.rmse_modeled},
                      {"rmse_corrected", s.rmse_corrected},
                      {"reduction_pct", num(s.reduction_pct)},
                      {"peak_time", format_iso8601(s.peak_time)},
                      {"peak_observed", s.peak_observed},
                      {"peak_error_modeled", s.peak_error_modeled},
                      {"peak_error_corrected", s.peak_error_corrected}};
  if (s.node_id >= 0) j["node_id"] = s.node_id;
  return j;
}

inline nlohmann::json to_json(const ImprovementReport& r) {
  nlohmann::json j;
  j["window"] = {{"label", r.window.label}};
  if (r.window.from) j["window"]["from"] = format_iso8601(*r.window.from);
  if (r.window.to) j["window"]["to"] = format_iso8601(*r.window.to);
  j["pooled"] = to_json(r.pooled);
  j["stations"] = nlohmann::json::array();
  for (const auto& s : r.stations) j["stations"].push_back(to_json(s));
  return j;
}

inline std::string improvement_csv_text(const ImprovementReport& r) {
  std::string text =
      "node_id,count,rmse_modeled_m,rmse_corrected_m,reduction_pct,peak_time,peak_observed_m,peak_error_modeled_m,"
      "peak_error_corrected_m\n";
  auto row = [&](const std::string& id, const StationImprovement& s) {
    text += id + "," + std::to_string(s.count) + "," + csv::format_double(s.rmse_modeled) + "," +
            csv::format_double(s.rmse_corrected) + "," +
            (std::isnan(s.reduction_pct) ? "" : csv::format_double(s.reduction_pct)) + "," + format_iso8601(s.peak_time) +
            "," + csv::format_double(s.peak_observed) + "," + csv::format_double(s.peak_error_modeled) + "," +
            csv::format_double(s.peak_error_corrected) + "\n";
  };
  for (const auto& s : r.stations) row(std::to_string(s.node_id), s);
  row("pooled", r.pooled);
  return text;
}

// ---------------------------------------------------------------------------
// Flood thresholds
// ---------------------------------------------------------------------------

enum class Severity { minor, moderate, major };

inline std::string to_string(Severity s) {
  switch (s) {
    case Severity::minor: return "minor";
    case Severity::moderate: return "moderate";
    case Severity::major: return "major";
  }
  return "?";
}

inline constexpr Severity kSeverities[] = {Severity::minor, Severity::moderate, Severity::major};

struct FloodThresholds {
  double minor = 0.50;
  double moderate = 0.80;
  double major = 1.17;

  double level(Severity s) const {
    return s == Severity::minor ? minor : s == Severity::moderate ? moderate : major;
  }
};

inline void validate(const FloodThresholds& t) {
  if (!(t.minor < t.moderate && t.moderate < t.major)) {
    throw InvalidSpec("flood thresholds must satisfy minor < moderate < major");
  }
}

struct ExceedanceEvent {
  Severity severity = Severity::minor;
  std::size_t first = 0;  // indices into the series, inclusive
  std::size_t last = 0;
  TimePoint start = 0;
  TimePoint end = 0;
  TimePoint peak_time = 0;
  double peak = 0.0;
};

/// Maximal runs at or above each level; NaN ends a run.
inline std::vector<ExceedanceEvent> threshold_events(const std::vector<TimePoint>& times,
                                                     const std::vector<double>& values,
                                                     const FloodThresholds& thresholds) {
  validate(thresholds);
  if (times.size() != values.size()) throw LengthMismatch("timestamps and values differ in length");
  std::vector<ExceedanceEvent> out;
  for (Severity sev : kSeverities) {
    const double level = thresholds.level(sev);
    std::size_t t = 0;
    while (t < values.size()) {
      if (!(values[t] >= level)) {
        ++t;
        continue;
      }
      ExceedanceEvent e{sev, t, t, times[t], times[t], times[t], values[t]};
      while (t < values.size() && values[t] >= level) {
        e.last = t;
        e.end = times[t];
        if (values[t] > e.peak) {
          e.peak = values[t];
          e.peak_time = times[t];
        }
        ++t;
      }
      out.push_back(e);
    }
  }
  return out;
}

struct SeverityAgreement {
  Severity severity = Severity::minor;
  std::size_t observed_events = 0;
  std::size_t predicted_events = 0;
  std::size_t false_negatives = 0;  // observed events no predicted event overlaps
  std::size_t false_positives = 0;  // predicted events no observed event overlaps
};

/// Event-level agreement of a predicted level series with observations.
inline std::vector<SeverityAgreement> compare_exceedance(const std::vector<TimePoint>& times,
                                                         const std::vector<double>& observed,
                                                         const std::vector<double>& predicted,
                                                         const FloodThresholds& thresholds) {
  const auto obs = threshold_events(times, observed, thresholds);
  const auto pred = threshold_events(times, predicted, thresholds);
  auto overlaps = [](const ExceedanceEvent& a, const ExceedanceEvent& b) { return a.first <= b.last && b.first <= a.last; };
  std::vector<SeverityAgreement> out;
  for (Severity sev : kSeverities) {
    SeverityAgreement a;
    a.severity = sev;
    for (const auto& o : obs) {
      if (o.severity != sev) continue;
      ++a.observed_events;
      if (std::none_of(pred.begin(), pred.end(), [&](const auto& p) { return p.severity == sev && overlaps(o, p); })) {
        ++a.false_negatives;
      }
    }
    for (const auto& p : pred) {
      if (p.severity != sev) continue;
      ++a.predicted_events;
      if (std::none_of(obs.begin(), obs.end(), [&](const auto& o) { return o.severity == sev && overlaps(o, p); })) {
        ++a.false_positives;
      }
    }
    out.push_back(a);
  }
  return out;
}

struct LeadAgreement {
  std::size_t lead = 0;
  std::vector<SeverityAgreement> severities;
};

struct StationLeadCheck {
  int node_id = 0;
  std::vector<LeadAgreement> leads;
  /// Longest L such that every lead 1..L has no minor-level misses or false alarms.
  std::size_t agreeing_lead = 0;
};

/// Per station and lead: the corrected series at that lead, ordered by valid
/// time, compared with observations for threshold agreement.
inline std::vector<StationLeadCheck> lead_time_check(const std::vector<ForecastPoint>& pts,
                                                     const FloodThresholds& thresholds) {
  std::map<int, std::map<std::size_t, std::vector<const ForecastPoint*>>> grouped;
  for (const auto& p : pts) grouped[p.node_id][p.lead].push_back(&p);
  std::vector<StationLeadCheck> out;
  for (auto& [node, leads] : grouped) {
    StationLeadCheck c;
    c.node_id = node;
    bool agreeing = true;
    for (auto& [lead, xs] : leads) {
      std::stable_sort(xs.begin(), xs.end(), [](const auto* a, const auto* b) { return a->valid < b->valid; });
      std::vector<TimePoint> times;
      std::vector<double> obs, corr;
      for (const auto* p : xs) {
        times.push_back(p->valid);
        obs.push_back(p->observed);
        corr.push_back(p->corrected);
      }
      LeadAgreement la{lead, compare_exceedance(times, obs, corr, thresholds)};
      const auto& minor = la.severities.front();
      agreeing = agreeing && lead == c.agreeing_lead + 1 && minor.false_negatives == 0 && minor.false_positives == 0;
      if (agreeing) c.agreeing_lead = lead;
      c.leads.push_back(std::move(la));
    }
    out.push_back(std::move(c));
  }
  return out;
}

inline nlohmann::json to_json(const std::vector<StationLeadCheck>& checks) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& c : checks) {
    nlohmann::json s = {{"node_id", c.node_id}, {"agreeing_lead_h", c.agreeing_lead}, {"leads", nlohmann::json::array()}};
    for (const auto& l : c.leads) {
      nlohmann::json lj = {{"lead_h", l.lead}};
      for (const auto& a : l.severities) {
        lj[to_string(a.severity)] = {{"observed_events", a.observed_events},
                                     {"predicted_events", a.predicted_events},
                                     {"false_negatives", a.false_negatives},
                                     {"false_positives", a.false_positives}};
      }
      s["leads"].push_back(std::move(lj));
    }
    j.push_back(std::move(s));
  }
  return j;
}

// ---------------------------------------------------------------------------
// Model comparison
// ---------------------------------------------------------------------------

struct ModelComparison {
  std::vector<int> nodes;
  std::vector<char> winner;  // 'A' or 'B' per station; ties go to A
  std::size_t wins_a = 0;
  std::size_t wins_b = 0;
  double mean_a = 0.0, std_a = 0.0;
  double mean_b = 0.0, std_b = 0.0;
  double mean_best = 0.0, std_best = 0.0;  // each station represented by its winner
};

/// Compares the corrected-level RMSE of two reports station by station.
inline ModelComparison compare_models(const ImprovementReport& a, const ImprovementReport& b) {
  if (a.stations.size() != b.stations.size()) throw StationMismatch("reports cover different station counts");
  ModelComparison c;
  std::vector<double> ra, rb, best;
  for (std::size_t k = 0; k < a.stations.size(); ++k) {
    if (a.stations[k].node_id != b.stations[k].node_id) {
      throw StationMismatch("station " + std::to_string(a.stations[k].node_id) + " vs " +
                            std::to_string(b.stations[k].node_id) + " at row " + std::to_string(k));
    }
    const double x = a.stations[k].rmse_corrected, y = b.stations[k].rmse_corrected;
    c.nodes.push_back(a.stations[k].node_id);
    c.winner.push_back(x <= y ? 'A' : 'B');
    (x <= y ? c.wins_a : c.wins_b)++;
    ra.push_back(x);
    rb.push_back(y);
    best.push_back(std::min(x, y));
  }
  auto stats = [](const std::vector<double>& v, double& mean, double& sd) {
    mean = 0;
    for (double x : v) mean += x / static_cast<double>(v.size());
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    sd = v.size() > 0 ? std::sqrt(ss / static_cast<double>(v.size())) : 0.0;
  };
  if (!ra.empty()) {
    stats(ra, c.mean_a, c.std_a);
    stats(rb, c.mean_b, c.std_b);
    stats(best, c.mean_best, c.std_best);
  }
  return c;
}

inline nlohmann::json to_json(const ModelComparison& c) {
  nlohmann::json j = {{"wins_a", c.wins_a},     {"wins_b", c.wins_b},       {"mean_rmse_a", c.mean_a},
                      {"std_rmse_a", c.std_a},  {"mean_rmse_b", c.mean_b},  {"std_rmse_b", c.std_b},
                      {"mean_rmse_best", c.mean_best}, {"std_rmse_best", c.std_best}};
  j["winners"] = nlohmann::json::array();
  for (std::size_t k = 0; k < c.nodes.size(); ++k)
    j["winners"].push_back({{"node_id", c.nodes[k]}, {"winner", std::string(1, c.winner[k])}});
  return j;
}

}  // namespace stormnet
