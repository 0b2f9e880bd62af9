#pragma once

// Synthetic multi-station storm corpora with known bias, in the ingest file formats.

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "stormnet/geo_graph.hpp"
#include "stormnet/ingest.hpp"

namespace stormnet {

struct SynthStation {
  std::string name;
  double lat = 0.0;
  double lon = 0.0;
};

struct TideComponent {
  double period_h = 12.42;
  double amplitude_m = 0.4;
};

struct SynthSpec {
  std::uint64_t seed = 1;

  // Coastline: explicit stations win over the generated line.
  std::size_t stations = 8;
  std::vector<SynthStation> station_list;
  double coast_lat = 29.0;
  double coast_lon = -95.0;
  double spacing_km = 70.0;

  // Storms: train, then val, then test; each `storm_hours` long, `gap_days` apart.
  std::size_t train_storms = 4;
  std::size_t val_storms = 1;
  std::size_t test_storms = 1;
  std::size_t storm_hours = 1000;
  std::string start = "2020-06-01T00:00:00Z";
  double gap_days = 60.0;
  std::size_t w_in = 48;
  std::size_t w_out = 24;

  std::vector<TideComponent> tides = {{12.42, 0.45}, {23.93, 0.20}};
  double tide_amplitude_jitter = 0.3;  // relative, per station and component
  double tide_phase_step = 0.12;       // radians per station along the coast

  double surge_peak_min = 0.8;
  double surge_peak_max = 1.8;
  double surge_width_h = 16.0;
  double surge_footprint_km = 250.0;

  // bias(t, k) = constant_k + a_k(t),  a(t) = φ a(t-1) + sqrt(1-φ²) σ L ε(t),  L Lᵀ = exp(-d/ℓ)
  double bias_constant_min = 0.10;
  double bias_constant_max = 0.40;
  std::vector<double> bias_constants;  // explicit per-station constants, signs included
  double ar_coefficient = 0.97;
  double ar_std = 0.06;
  double correlation_length_km = 200.0;

  double noise_std = 0.01;
  double missing_fraction = 0.0;  // observed cells blanked at random

  // Planted mode: observed levels become a Gaussian copula with this correlation.
  std::vector<std::vector<double>> target_correlation;
  double planted_std_m = 0.3;
};

inline std::size_t station_count(const SynthSpec& s) {
  return s.station_list.empty() ? s.stations : s.station_list.size();
}

inline void validate(const SynthSpec& s) {
  const std::size_t n = station_count(s);
  auto fail = [](const std::string& m) { throw InvalidSpec(m); };
  if (n == 0) fail("at least one station is required");
  if (s.train_storms == 0) fail("at least one training storm is required");
  if (s.w_in == 0 || s.w_out == 0) fail("w_in and w_out must be positive");
  if (s.storm_hours < s.w_in + s.w_out) {
    fail("storm_hours " + std::to_string(s.storm_hours) + " is shorter than w_in + w_out = " +
         std::to_string(s.w_in + s.w_out));
  }
  if (!(s.noise_std >= 0)) fail("noise_std must be >= 0");
  if (!(s.ar_std >= 0)) fail("ar_std must be >= 0");
  if (!(s.ar_coefficient > -1 && s.ar_coefficient < 1)) fail("ar_coefficient must lie in (-1, 1)");
  if (!(s.correlation_length_km >= 0)) fail("correlation_length_km must be >= 0");
  if (!(s.missing_fraction >= 0 && s.missing_fraction < 1)) fail("missing_fraction must lie in [0, 1)");
  if (!(s.spacing_km > 0)) fail("spacing_km must be positive");
  if (!(s.surge_width_h > 0) || !(s.surge_footprint_km > 0)) fail("surge width and footprint must be positive");
  if (s.surge_peak_min > s.surge_peak_max) fail("surge_peak_min exceeds surge_peak_max");
  if (s.bias_constant_min > s.bias_constant_max) fail("bias_constant_min exceeds bias_constant_max");
  if (!s.bias_constants.empty() && s.bias_constants.size() != n) fail("bias_constants needs one value per station");
  if (!(s.gap_days >= 0)) fail("gap_days must be >= 0");
  for (const auto& t : s.tides)
    if (!(t.period_h > 0)) fail("tide periods must be positive");
  if (!s.target_correlation.empty() && s.target_correlation.size() != n) {
    fail("target_correlation must be " + std::to_string(n) + "x" + std::to_string(n));
  }
  parse_iso8601(s.start);
}

namespace detail {

/// Platform-independent standard normals (Marsaglia polar method on a 53-bit uniform).
class NormalStream {
 public:
  explicit NormalStream(std::mt19937_64 rng) : rng_(std::move(rng)) {}

  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

 private:
  std::mt19937_64 rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline std::mt19937_64 synth_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), 0x5EEDu};
  return std::mt19937_64(seq);
}

using Matrix = Eigen::MatrixXd;

inline Matrix to_matrix(const std::vector<std::vector<double>>& m) {
  Matrix out(static_cast<Eigen::Index>(m.size()), static_cast<Eigen::Index>(m.size()));
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i].size() != m.size()) throw InvalidSpec("correlation matrix must be square");
    for (std::size_t j = 0; j < m.size(); ++j) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m[i][j];
  }
  return out;
}

/// Symmetric square root of a correlation matrix; NotPSD below -1e-10.
inline Matrix correlation_sqrt(const Matrix& c) {
  const Eigen::Index n = c.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(c(i, i) - 1.0) > 1e-12) throw InvalidSpec("correlation matrix must have a unit diagonal");
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!std::isfinite(c(i, j)) || std::abs(c(i, j)) > 1.0 + 1e-12) {
        throw InvalidSpec("correlation entries must lie in [-1, 1]");
      }
      if (std::abs(c(i, j) - c(j, i)) > 1e-12) throw InvalidSpec("correlation matrix must be symmetric");
    }
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(c);
  const Eigen::VectorXd lambda = eig.eigenvalues();
  if (lambda.minCoeff() < -1e-10) {
    throw NotPSD("smallest eigenvalue is " + std::to_string(lambda.minCoeff()));
  }
  return eig.eigenvectors() * lambda.cwiseMax(0.0).cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace detail

/// Returns `spec` set to emit observed levels with the given pairwise correlation.
inline SynthSpec plant_correlation(SynthSpec spec, const std::vector<std::vector<double>>& target) {
  if (target.size() != station_count(spec)) {
    throw InvalidSpec("target correlation has " + std::to_string(target.size()) + " rows for " +
                      std::to_string(station_count(spec)) + " stations");
  }
  detail::correlation_sqrt(detail::to_matrix(target));
  spec.target_correlation = target;
  return spec;
}

inline std::vector<Station> synth_stations(const SynthSpec& s) {
  std::vector<Station> out;
  if (!s.station_list.empty()) {
    for (std::size_t k = 0; k < s.station_list.size(); ++k) {
      const auto& st = s.station_list[k];
      out.push_back({static_cast<int>(k), st.name.empty() ? "SYN" + std::to_string(k) : st.name, "SYNTH", st.lat, st.lon});
    }
    return out;
  }
  // A gently curving east-west coastline.
  const double km_per_deg_lat = kEarthRadiusKm * std::numbers::pi / 180.0;
  double lon = s.coast_lon;
  for (std::size_t k = 0; k < s.stations; ++k) {
    const double lat = s.coast_lat + 0.4 * std::sin(0.35 * static_cast<double>(k));
    out.push_back({static_cast<int>(k), "SYN" + std::to_string(k), "SYNTH", lat, lon});
    lon += s.spacing_km / (km_per_deg_lat * std::cos(lat * std::numbers::pi / 180.0));
  }
  return out;
}

struct SynthCorpus {
  std::vector<Station> stations;
  DatasetManifest manifest;
  std::vector<StormSeries> storms;
  std::vector<StormOffsets> truth;  // modeled − observed before any blanking
  nlohmann::json realized;          // drawn per-station and per-storm parameters
};

inline SynthCorpus generate(const SynthSpec& spec) {
  validate(spec);
  const std::size_t n = station_count(spec);
  SynthCorpus c;
  c.stations = synth_stations(spec);
  validate_stations(c.stations);

  // Per-station draws come from stream 0 so they do not depend on storm count.
  detail::NormalStream srng(detail::synth_rng(spec.seed, 0));
  std::vector<double> constants(n);
  std::vector<std::vector<double>> tide_amp(n, std::vector<double>(spec.tides.size()));
  std::vector<std::vector<double>> tide_phase(n, std::vector<double>(spec.tides.size()));
  const double base_phase = 2.0 * std::numbers::pi * srng.uniform();
  for (std::size_t k = 0; k < n; ++k) {
    const double mag = spec.bias_constant_min + (spec.bias_constant_max - spec.bias_constant_min) * srng.uniform();
    const double sign = srng.uniform() < 0.5 ? -1.0 : 1.0;
    constants[k] = spec.bias_constants.empty() ? sign * mag : spec.bias_constants[k];
    for (std::size_t m = 0; m < spec.tides.size(); ++m) {
      tide_amp[k][m] = spec.tides[m].amplitude_m * (1.0 + spec.tide_amplitude_jitter * (2.0 * srng.uniform() - 1.0));
      tide_phase[k][m] = base_phase * static_cast<double>(m + 1) + spec.tide_phase_step * static_cast<double>(k) +
                         0.05 * srng.normal();
    }
  }

  // Spatial factor of the AR(1) innovations.
  detail::Matrix dist(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          i == j ? 0.0 : haversine(c.stations[i].location(), c.stations[j].location());
  detail::Matrix spatial = detail::Matrix::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  if (spec.correlation_length_km > 0) {
    for (Eigen::Index i = 0; i < spatial.rows(); ++i)
      for (Eigen::Index j = 0; j < spatial.cols(); ++j) spatial(i, j) = std::exp(-dist(i, j) / spec.correlation_length_km);
  }
  const detail::Matrix spatial_factor = detail::correlation_sqrt(spatial);
  const bool planted = !spec.target_correlation.empty();
  const detail::Matrix planted_factor =
      planted ? detail::correlation_sqrt(detail::to_matrix(spec.target_correlation)) : detail::Matrix();

  // Coastline coordinate (km from station 0) for the surge footprint.
  std::vector<double> along(n, 0.0);
  for (std::size_t k = 1; k < n; ++k) along[k] = along[k - 1] + haversine(c.stations[k - 1].location(), c.stations[k].location());

  c.realized["stations"] = nlohmann::json::array();
  for (std::size_t k = 0; k < n; ++k) {
    c.realized["stations"].push_back(
        {{"node_id", k}, {"bias_constant", constants[k]}, {"tide_amplitude", tide_amp[k]}, {"tide_phase", tide_phase[k]}});
  }
  c.realized["storms"] = nlohmann::json::array();

  c.manifest.w_in = spec.w_in;
  c.manifest.w_out = spec.w_out;
  c.manifest.stations_file = "stations.csv";
  for (std::size_t k = 0; k < n; ++k) c.manifest.stations.push_back(static_cast<int>(k));

  const std::size_t storm_total = spec.train_storms + spec.val_storms + spec.test_storms;
  const TimePoint t0 = parse_iso8601(spec.start);
  const auto gap = static_cast<TimePoint>(std::llround(spec.gap_days * 24.0)) * kHour;
  const double innov = std::sqrt(1.0 - spec.ar_coefficient * spec.ar_coefficient) * spec.ar_std;

  for (std::size_t si = 0; si < storm_total; ++si) {
    const StormRole role = si < spec.train_storms                     ? StormRole::train
                           : si < spec.train_storms + spec.val_storms ? StormRole::val
                                                                      : StormRole::test;
    const std::string id = to_string(role) + std::to_string(si + 1);
    detail::NormalStream rng(detail::synth_rng(spec.seed, si + 1));
    const double peak = spec.surge_peak_min + (spec.surge_peak_max - spec.surge_peak_min) * rng.uniform();
    const double center = static_cast<double>(spec.storm_hours) * (0.3 + 0.4 * rng.uniform());
    const double landfall_km = along.back() * rng.uniform();
    const TimePoint start = t0 + static_cast<TimePoint>(si) * (static_cast<TimePoint>(spec.storm_hours) * kHour + gap);
    const TimePoint landfall = start + static_cast<TimePoint>(std::llround(center)) * kHour;
    c.manifest.storms.push_back({id, role, landfall});
    c.realized["storms"].push_back({{"id", id},
                                    {"role", to_string(role)},
                                    {"surge_peak", peak},
                                    {"surge_center_h", center},
                                    {"landfall_km", landfall_km},
                                    {"landfall", format_iso8601(landfall)}});

    StormSeries storm{id, {}, {}};
    StormOffsets truth{id, {}, {}};
    for (std::size_t t = 0; t < spec.storm_hours; ++t) storm.timestamps.push_back(start + static_cast<TimePoint>(t) * kHour);
    truth.timestamps = storm.timestamps;
    for (std::size_t k = 0; k < n; ++k) {
      storm.stations.push_back({static_cast<int>(k), id, storm.timestamps, {}, {}});
      truth.stations.push_back({static_cast<int>(k), id, storm.timestamps, {}, {}});
    }

    Eigen::VectorXd ar(static_cast<Eigen::Index>(n)), eps(static_cast<Eigen::Index>(n));
    for (Eigen::Index k = 0; k < eps.size(); ++k) eps(k) = rng.normal();
    ar = spec.ar_std * (spatial_factor * eps);  // stationary start
    for (std::size_t t = 0; t < spec.storm_hours; ++t) {
      if (t > 0) {
        for (Eigen::Index k = 0; k < eps.size(); ++k) eps(k) = rng.normal();
        ar = spec.ar_coefficient * ar + innov * (spatial_factor * eps);
      }
      Eigen::VectorXd level(static_cast<Eigen::Index>(n));
      if (planted) {
        for (Eigen::Index k = 0; k < eps.size(); ++k) eps(k) = rng.normal();
        level = spec.planted_std_m * (planted_factor * eps);
      } else {
        const double th = static_cast<double>(t);
        const double g = std::exp(-0.5 * std::pow((th - center) / spec.surge_width_h, 2));
        for (std::size_t k = 0; k < n; ++k) {
          double v = 0.0;
          const double abs_h = static_cast<double>(start / kHour) + th;
          for (std::size_t m = 0; m < spec.tides.size(); ++m)
            v += tide_amp[k][m] * std::cos(2.0 * std::numbers::pi * abs_h / spec.tides[m].period_h + tide_phase[k][m]);
          const double dx = (along[k] - landfall_km) / spec.surge_footprint_km;
          v += peak * g * std::exp(-0.5 * dx * dx);
          level(static_cast<Eigen::Index>(k)) = v + spec.noise_std * rng.normal();
        }
      }
      for (std::size_t k = 0; k < n; ++k) {
        const double obs = level(static_cast<Eigen::Index>(k));
        const double mod = obs + constants[k] + ar(static_cast<Eigen::Index>(k));
        storm.stations[k].observed.push_back(obs);
        storm.stations[k].modeled.push_back(mod);
        truth.stations[k].values.push_back(mod - obs);
        truth.stations[k].valid.push_back(1);
      }
    }
    if (spec.missing_fraction > 0) {
      for (auto& s : storm.stations)
        for (double& v : s.observed)
          if (rng.uniform() < spec.missing_fraction) v = kNaN;
    }
    c.storms.push_back(std::move(storm));
    c.truth.push_back(std::move(truth));
  }
  return c;
}

inline std::string truth_path(const std::filesystem::path& root, const std::string& storm_id) {
  return (root / "truth" / (storm_id + ".csv")).string();
}

/// Writes manifest.json, stations.csv, <storm>/<node>.csv, truth/<storm>.csv and synth_truth.json.
inline void write_corpus(const SynthCorpus& c, const std::filesystem::path& root) {
  std::error_code ec;
  std::filesystem::create_directories(root / "truth", ec);
  if (ec) throw IoError("cannot create '" + (root / "truth").string() + "': " + ec.message());
  write_text_file((root / "manifest.json").string(), manifest_to_json(c.manifest).dump(2) + "\n");
  write_stations_csv((root / c.manifest.stations_file).string(), c.stations);
  for (std::size_t s = 0; s < c.storms.size(); ++s) {
    const StormSeries& storm = c.storms[s];
    std::filesystem::create_directories(root / storm.storm_id, ec);
    if (ec) throw IoError("cannot create '" + (root / storm.storm_id).string() + "': " + ec.message());
    for (const auto& st : storm.stations) write_text_file(series_path(root, storm.storm_id, st.node_id), series_csv_text(st));
    write_text_file(truth_path(root, storm.storm_id), offsets_csv_text(c.truth[s]));
  }
  write_text_file((root / "synth_truth.json").string(), c.realized.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Spec files
// ---------------------------------------------------------------------------

inline nlohmann::json synth_spec_to_json(const SynthSpec& s) {
  nlohmann::json j = {{"seed", s.seed},
                      {"stations", s.stations},
                      {"coast_lat", s.coast_lat},
                      {"coast_lon", s.coast_lon},
                      {"spacing_km", s.spacing_km},
                      {"train_storms", s.train_storms},
                      {"val_storms", s.val_storms},
                      {"test_storms", s.test_storms},
                      {"storm_hours", s.storm_hours},
                      {"start", s.start},
                      {"gap_days", s.gap_days},
                      {"w_in", s.w_in},
                      {"w_out", s.w_out},
                      {"tide_amplitude_jitter", s.tide_amplitude_jitter},
                      {"tide_phase_step", s.tide_phase_step},
                      {"surge_peak_min", s.surge_peak_min},
                      {"surge_peak_max", s.surge_peak_max},
                      {"surge_width_h", s.surge_width_h},
                      {"surge_footprint_km", s.surge_footprint_km},
                      {"bias_constant_min", s.bias_constant_min},
                      {"bias_constant_max", s.bias_constant_max},
                      {"bias_constants", s.bias_constants},
                      {"ar_coefficient", s.ar_coefficient},
                      {"ar_std", s.ar_std},
                      {"correlation_length_km", s.correlation_length_km},
                      {"noise_std", s.noise_std},
                      {"missing_fraction", s.missing_fraction},
                      {"target_correlation", s.target_correlation},
                      {"planted_std_m", s.planted_std_m}};
  j["tides"] = nlohmann::json::array();
  for (const auto& t : s.tides) j["tides"].push_back({{"period_h", t.period_h}, {"amplitude_m", t.amplitude_m}});
  j["station_list"] = nlohmann::json::array();
  for (const auto& st : s.station_list) j["station_list"].push_back({{"name", st.name}, {"lat", st.lat}, {"lon", st.lon}});
  return j;
}

/// Missing keys keep their defaults; unknown keys are rejected to catch typos.
inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InvalidSpec("synth spec must be a JSON object");
  SynthSpec s;
  const nlohmann::json known = synth_spec_to_json(s);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) throw InvalidSpec("unknown synth spec key '" + it.key() + "'");
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("seed", s.seed);
    get("stations", s.stations);
    get("coast_lat", s.coast_lat);
    get("coast_lon", s.coast_lon);
    get("spacing_km", s.spacing_km);
    get("train_storms", s.train_storms);
    get("val_storms", s.val_storms);
    get("test_storms", s.test_storms);
    get("storm_hours", s.storm_hours);
    get("start", s.start);
    get("gap_days", s.gap_days);
    get("w_in", s.w_in);
    get("w_out", s.w_out);
    get("tide_amplitude_jitter", s.tide_amplitude_jitter);
    get("tide_phase_step", s.tide_phase_step);
    get("surge_peak_min", s.surge_peak_min);
    get("surge_peak_max", s.surge_peak_max);
    get("surge_width_h", s.surge_width_h);
    get("surge_footprint_km", s.surge_footprint_km);
    get("bias_constant_min", s.bias_constant_min);
    get("bias_constant_max", s.bias_constant_max);
    get("bias_constants", s.bias_constants);
    get("ar_coefficient", s.ar_coefficient);
    get("ar_std", s.ar_std);
    get("correlation_length_km", s.correlation_length_km);
    get("noise_std", s.noise_std);
    get("missing_fraction", s.missing_fraction);
    get("target_correlation", s.target_correlation);
    get("planted_std_m", s.planted_std_m);
    if (j.contains("tides")) {
      s.tides.clear();
      for (const auto& t : j.at("tides")) s.tides.push_back({t.at("period_h").get<double>(), t.at("amplitude_m").get<double>()});
    }
    if (j.contains("station_list")) {
      for (const auto& st : j.at("station_list"))
        s.station_list.push_back({st.value("name", std::string()), st.at("lat").get<double>(), st.at("lon").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidSpec(std::string("synth spec: ") + e.what());
  }
  validate(s);
  if (!s.target_correlation.empty()) s = plant_correlation(s, s.target_correlation);
  return s;
}

inline SynthSpec read_synth_spec(const std::string& path) {
  if (!std::filesystem::exists(path)) throw InvalidSpec("spec file '" + path + "' does not exist");
  try {
    return synth_spec_from_json(nlohmann::json::parse(read_text_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidSpec("'" + path + "': " + e.what());
  }
}

}  // namespace stormnet
