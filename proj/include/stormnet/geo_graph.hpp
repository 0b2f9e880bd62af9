#pragma once

// Station graph: nodes are gauge stations, an undirected edge joins two
// stations whose observed water levels are strongly correlated and which lie
// within a great-circle distance cutoff. Edge weights are the correlations.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "stormnet/csv.hpp"
#include "stormnet/error.hpp"
#include "stormnet/hash.hpp"

namespace stormnet {

inline constexpr double kEarthRadiusKm = 6371.0;
inline constexpr double kDefaultRhoMin = 0.8;
inline constexpr double kDefaultDMaxKm = 500.0;

struct GeoPoint {
  double lat = 0.0;  // degrees, [-90, 90]
  double lon = 0.0;  // degrees, [-180, 180]
};

struct Station {
  int node_id = 0;
  std::string name;
  std::string agency;
  double lat = 0.0;
  double lon = 0.0;

  GeoPoint location() const { return {lat, lon}; }
  friend bool operator==(const Station&, const Station&) = default;
};

struct Edge {
  int i = 0;  // i < j
  int j = 0;
  double weight = 0.0;
  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Great-circle distance in kilometres.
inline double haversine(GeoPoint a, GeoPoint b, double radius_km = kEarthRadiusKm) {
  constexpr double deg = std::numbers::pi / 180.0;
  const double dlat = (b.lat - a.lat) * deg;
  const double dlon = (b.lon - a.lon) * deg;
  const double s1 = std::sin(dlat / 2), s2 = std::sin(dlon / 2);
  double h = s1 * s1 + std::cos(a.lat * deg) * std::cos(b.lat * deg) * s2 * s2;
  h = std::clamp(h, 0.0, 1.0);
  return 2.0 * radius_km * std::asin(std::sqrt(h));
}

/// Product-moment correlation. NaN entries mark missing samples and are
/// dropped pairwise (a timestep counts only if both series have it).
inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw LengthMismatch("pearson: series lengths " + std::to_string(x.size()) + " and " +
                         std::to_string(y.size()));
  }
  double mx = 0, my = 0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < x.size(); ++t) {
    if (std::isnan(x[t]) || std::isnan(y[t])) continue;
    mx += x[t];
    my += y[t];
    ++n;
  }
  if (n < 2) throw LengthMismatch("pearson: fewer than two paired samples");
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t t = 0; t < x.size(); ++t) {
    if (std::isnan(x[t]) || std::isnan(y[t])) continue;
    const double dx = x[t] - mx, dy = y[t] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw ZeroVariance("pearson: constant series");
  return std::clamp(sxy / (std::sqrt(sxx) * std::sqrt(syy)), -1.0, 1.0);
}

class StationGraph {
 public:
  StationGraph() = default;
  StationGraph(std::vector<Station> stations, std::vector<Edge> edges, double rho_min,
               double d_max_km, double earth_radius_km = kEarthRadiusKm)
      : stations_(std::move(stations)),
        edges_(std::move(edges)),
        rho_min_(rho_min),
        d_max_km_(d_max_km),
        earth_radius_km_(earth_radius_km) {
    const std::size_t n = stations_.size();
    for (std::size_t k = 0; k < n; ++k) {
      if (stations_[k].node_id != static_cast<int>(k)) {
        throw ParseError("station node_ids must be 0..N-1 in order");
      }
    }
    std::sort(edges_.begin(), edges_.end(),
              [](const Edge& a, const Edge& b) { return std::tie(a.i, a.j) < std::tie(b.i, b.j); });
    adjacency_.assign(n * n, 0.0);
    for (const Edge& e : edges_) {
      if (e.i < 0 || e.j < 0 || e.i >= e.j || static_cast<std::size_t>(e.j) >= n) {
        throw ParseError("invalid edge (" + std::to_string(e.i) + "," + std::to_string(e.j) + ")");
      }
      adjacency_[static_cast<std::size_t>(e.i) * n + static_cast<std::size_t>(e.j)] = e.weight;
      adjacency_[static_cast<std::size_t>(e.j) * n + static_cast<std::size_t>(e.i)] = e.weight;
    }
  }

  std::size_t size() const noexcept { return stations_.size(); }
  const std::vector<Station>& stations() const noexcept { return stations_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  double rho_min() const noexcept { return rho_min_; }
  double d_max_km() const noexcept { return d_max_km_; }
  double earth_radius_km() const noexcept { return earth_radius_km_; }

  /// Weighted adjacency, row-major N×N, zero diagonal.
  const std::vector<double>& adjacency() const noexcept { return adjacency_; }
  double weight(std::size_t i, std::size_t j) const { return adjacency_[i * size() + j]; }
  bool connected(std::size_t i, std::size_t j) const { return weight(i, j) != 0.0; }

  std::vector<std::size_t> neighbors(std::size_t i) const {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < size(); ++j)
      if (j != i && connected(i, j)) out.push_back(j);
    return out;
  }

  std::vector<int> isolated_nodes() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < size(); ++i)
      if (neighbors(i).empty()) out.push_back(static_cast<int>(i));
    return out;
  }

  /// Relabels nodes: new node k is old node perm[k].
  StationGraph permuted(const std::vector<std::size_t>& perm) const {
    std::vector<std::size_t> inverse(size());
    for (std::size_t k = 0; k < perm.size(); ++k) inverse[perm[k]] = k;
    std::vector<Station> st;
    for (std::size_t k = 0; k < perm.size(); ++k) {
      st.push_back(stations_[perm[k]]);
      st.back().node_id = static_cast<int>(k);
    }
    std::vector<Edge> es;
    for (const Edge& e : edges_) {
      int a = static_cast<int>(inverse[static_cast<std::size_t>(e.i)]);
      int b = static_cast<int>(inverse[static_cast<std::size_t>(e.j)]);
      es.push_back({std::min(a, b), std::max(a, b), e.weight});
    }
    return StationGraph(std::move(st), std::move(es), rho_min_, d_max_km_, earth_radius_km_);
  }

 private:
  std::vector<Station> stations_;
  std::vector<Edge> edges_;
  std::vector<double> adjacency_;
  double rho_min_ = kDefaultRhoMin;
  double d_max_km_ = kDefaultDMaxKm;
  double earth_radius_km_ = kEarthRadiusKm;
};

inline void validate_stations(const std::vector<Station>& stations) {
  for (std::size_t k = 0; k < stations.size(); ++k) {
    const Station& s = stations[k];
    if (s.node_id != static_cast<int>(k)) {
      throw ParseError("station node_ids must be 0..N-1 in order; found " +
                       std::to_string(s.node_id) + " at position " + std::to_string(k));
    }
    if (!(s.lat >= -90 && s.lat <= 90) || !(s.lon >= -180 && s.lon <= 180)) {
      throw ParseError("station " + std::to_string(s.node_id) + " has out-of-range coordinates");
    }
  }
}

/// Pairwise correlation and distance tables, row-major N×N.
struct PairTables {
  std::size_t n = 0;
  std::vector<double> rho;
  std::vector<double> dist_km;
};

inline PairTables pair_tables(const std::vector<Station>& stations,
                              const std::vector<std::vector<double>>& observed,
                              double earth_radius_km = kEarthRadiusKm) {
  validate_stations(stations);
  const std::size_t n = stations.size();
  if (observed.size() != n) {
    throw LengthMismatch("expected " + std::to_string(n) + " observed series, got " +
                         std::to_string(observed.size()));
  }
  for (std::size_t i = 0; i < n; ++i) {
    double first = std::numeric_limits<double>::quiet_NaN();
    bool varies = false;
    for (double v : observed[i]) {
      if (std::isnan(v)) continue;
      if (std::isnan(first)) first = v;
      else if (v != first) varies = true;
    }
    if (!varies) {
      throw ZeroVariance("observed series of station " + std::to_string(stations[i].node_id) +
                         " (" + stations[i].name + ") is constant");
    }
  }
  PairTables t{n, std::vector<double>(n * n, 1.0), std::vector<double>(n * n, 0.0)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double r = pearson(observed[i], observed[j]);
      const double d = haversine(stations[i].location(), stations[j].location(), earth_radius_km);
      t.rho[i * n + j] = t.rho[j * n + i] = r;
      t.dist_km[i * n + j] = t.dist_km[j * n + i] = d;
    }
  }
  return t;
}

/// Applies the strict gates ρ > ρ_min and d < d_max to precomputed tables.
inline StationGraph graph_from_tables(const std::vector<Station>& stations, const PairTables& t,
                                      double rho_min, double d_max_km,
                                      double earth_radius_km = kEarthRadiusKm) {
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < t.n; ++i)
    for (std::size_t j = i + 1; j < t.n; ++j)
      if (t.rho[i * t.n + j] > rho_min && t.dist_km[i * t.n + j] < d_max_km)
        edges.push_back({static_cast<int>(i), static_cast<int>(j), t.rho[i * t.n + j]});
  return StationGraph(stations, std::move(edges), rho_min, d_max_km, earth_radius_km);
}

/// Builds the graph from per-station observed series (training storms only,
/// concatenated, equal length; NaN = missing). Isolated stations are allowed;
/// see StationGraph::isolated_nodes().
inline StationGraph build_graph(const std::vector<Station>& stations,
                                const std::vector<std::vector<double>>& observed,
                                double rho_min = kDefaultRhoMin, double d_max_km = kDefaultDMaxKm) {
  if (stations.size() < 2) throw ParseError("build_graph needs at least two stations");
  for (const auto& s : observed) {
    if (s.size() != observed.front().size()) {
      throw LengthMismatch("observed series have different lengths");
    }
  }
  return graph_from_tables(stations, pair_tables(stations, observed), rho_min, d_max_km);
}

struct DegreeReport {
  std::vector<int> degree;
  int min_degree = 0;
  int max_degree = 0;
  int argmin = 0;
  int argmax = 0;
};

inline DegreeReport degree_report(const StationGraph& g) {
  DegreeReport r;
  r.degree.assign(g.size(), 0);
  for (const Edge& e : g.edges()) {
    ++r.degree[static_cast<std::size_t>(e.i)];
    ++r.degree[static_cast<std::size_t>(e.j)];
  }
  if (!r.degree.empty()) {
    const auto mn = std::min_element(r.degree.begin(), r.degree.end());
    const auto mx = std::max_element(r.degree.begin(), r.degree.end());
    r.min_degree = *mn;
    r.max_degree = *mx;
    r.argmin = static_cast<int>(mn - r.degree.begin());
    r.argmax = static_cast<int>(mx - r.degree.begin());
  }
  return r;
}

struct SweepRow {
  double rho_min = 0;
  double d_max_km = 0;
  std::size_t edges = 0;
  std::size_t isolated = 0;
  int min_degree = 0;
};

inline std::vector<SweepRow> threshold_sweep(const std::vector<Station>& stations,
                                             const std::vector<std::vector<double>>& observed,
                                             const std::vector<double>& rho_grid,
                                             const std::vector<double>& d_grid) {
  if (rho_grid.empty() || d_grid.empty()) throw ParseError("threshold_sweep: empty grid");
  const PairTables tables = pair_tables(stations, observed);
  std::vector<SweepRow> rows;
  for (double r : rho_grid) {
    for (double d : d_grid) {
      const StationGraph g = graph_from_tables(stations, tables, r, d);
      rows.push_back({r, d, g.edges().size(), g.isolated_nodes().size(), degree_report(g).min_degree});
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

inline nlohmann::json graph_to_json(const StationGraph& g) {
  nlohmann::json j;
  j["earth_radius_km"] = g.earth_radius_km();
  j["rho_min"] = g.rho_min();
  j["d_max_km"] = g.d_max_km();
  j["stations"] = nlohmann::json::array();
  for (const Station& s : g.stations()) {
    j["stations"].push_back(
        {{"id", s.node_id}, {"name", s.name}, {"agency", s.agency}, {"lat", s.lat}, {"lon", s.lon}});
  }
  j["edges"] = nlohmann::json::array();
  for (const Edge& e : g.edges()) j["edges"].push_back({{"i", e.i}, {"j", e.j}, {"weight", e.weight}});
  return j;
}

inline StationGraph graph_from_json(const nlohmann::json& j) {
  try {
    std::vector<Station> st;
    for (const auto& s : j.at("stations")) {
      st.push_back({s.at("id").get<int>(), s.at("name").get<std::string>(),
                    s.at("agency").get<std::string>(), s.at("lat").get<double>(),
                    s.at("lon").get<double>()});
    }
    validate_stations(st);
    std::vector<Edge> es;
    for (const auto& e : j.at("edges")) {
      es.push_back({e.at("i").get<int>(), e.at("j").get<int>(), e.at("weight").get<double>()});
    }
    return StationGraph(std::move(st), std::move(es), j.at("rho_min").get<double>(),
                        j.at("d_max_km").get<double>(), j.at("earth_radius_km").get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("graph file: ") + e.what());
  }
}

inline std::string graph_file_text(const StationGraph& g) { return graph_to_json(g).dump(2) + "\n"; }

/// Provenance hash of the canonical graph file text.
inline std::string graph_hash(const StationGraph& g) { return fnv1a_hex(graph_file_text(g)); }

inline void write_graph_file(const std::string& path, const StationGraph& g) {
  write_text_file(path, graph_file_text(g));
}

inline StationGraph read_graph_file(const std::string& path) {
  const std::string text = read_text_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("graph file '" + path + "': " + e.what());
  }
  return graph_from_json(j);
}

inline std::vector<Station> read_stations_csv(const std::string& path) {
  const csv::Table t = csv::read_file(path);
  const csv::Row expected = {"node_id", "name", "agency", "lat", "lon"};
  if (t.header != expected) {
    throw ParseError("'" + path + "': header must be node_id,name,agency,lat,lon");
  }
  std::vector<Station> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string where = path + ":" + std::to_string(r + 2);
    out.push_back({static_cast<int>(csv::parse_int(row[0], where)), row[1], row[2],
                   csv::parse_double(row[3], where), csv::parse_double(row[4], where)});
  }
  std::sort(out.begin(), out.end(),
            [](const Station& a, const Station& b) { return a.node_id < b.node_id; });
  validate_stations(out);
  return out;
}

inline void write_stations_csv(const std::string& path, const std::vector<Station>& stations) {
  std::string text = "node_id,name,agency,lat,lon\n";
  for (const Station& s : stations) {
    text += std::to_string(s.node_id) + "," + csv::quote(s.name) + "," + csv::quote(s.agency) + "," +
            csv::format_double(s.lat) + "," + csv::format_double(s.lon) + "\n";
  }
  write_text_file(path, text);
}

}  // namespace stormnet
