#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "stormnet/ingest.hpp"

using namespace stormnet;

namespace {

constexpr TimePoint kStart = 1661990400;  // 2022-09-01T00:00:00Z

std::vector<TimePoint> hours(std::size_t n, TimePoint start = kStart) {
  std::vector<TimePoint> t(n);
  for (std::size_t k = 0; k < n; ++k) t[k] = start + static_cast<TimePoint>(k) * kHour;
  return t;
}

OffsetSeries offsets(int node, const std::string& storm, std::vector<double> values) {
  OffsetSeries o{node, storm, hours(values.size()), std::move(values), {}};
  o.valid.assign(o.values.size(), 1);
  for (std::size_t t = 0; t < o.size(); ++t)
    if (std::isnan(o.values[t])) o.valid[t] = 0;
  return o;
}

StormOffsets storm_of(const std::string& id, std::vector<std::vector<double>> per_station) {
  StormOffsets s{id, hours(per_station.front().size()), {}};
  for (std::size_t k = 0; k < per_station.size(); ++k)
    s.stations.push_back(offsets(static_cast<int>(k), id, per_station[k]));
  return s;
}

// Value encodes (storm, time, station) so any slice can be checked exactly.
StormOffsets tagged_storm(const std::string& id, int tag, std::size_t len, std::size_t n) {
  std::vector<std::vector<double>> v(n, std::vector<double>(len));
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t t = 0; t < len; ++t) v[k][t] = tag * 1e6 + static_cast<double>(t) * 100 + static_cast<double>(k);
  return storm_of(id, v);
}

}  // namespace

TEST(Timestamps, RoundTrip) {
  EXPECT_EQ(parse_iso8601("2022-09-01T00:00:00Z"), kStart);
  EXPECT_EQ(parse_iso8601("2022-09-01T05:00"), kStart + 5 * kHour);
  EXPECT_EQ(format_iso8601(kStart + 25 * kHour), "2022-09-02T01:00:00Z");
  EXPECT_EQ(format_iso8601(0), "1970-01-01T00:00:00Z");
  EXPECT_THROW(parse_iso8601("yesterday"), ParseError);
  EXPECT_THROW(parse_iso8601("2022-02-30T00:00:00Z"), ParseError);
}

TEST(ComputeOffsets, IdenticalSeriesGiveZero) {
  StationSeries s{0, "a", hours(4), {1, 2, 3, 4}, {1, 2, 3, 4}};
  const auto o = compute_offsets(s);
  for (double v : o.values) EXPECT_EQ(v, 0.0);
}

TEST(ComputeOffsets, SignIsModeledMinusObserved) {
  StationSeries s{0, "a", hours(1), {1.0}, {1.3}};
  EXPECT_NEAR(compute_offsets(s).values[0], 0.3, 1e-15);
}

TEST(ComputeOffsets, MissingPropagates) {
  StationSeries s{0, "a", hours(3), {1.0, kNaN, 2.0}, {1.5, 1.5, kNaN}};
  const auto o = compute_offsets(s);
  EXPECT_EQ(o.valid, (std::vector<std::uint8_t>{1, 0, 0}));
  EXPECT_TRUE(std::isnan(o.values[1]));
}

TEST(ComputeOffsets, RejectsRaggedOrNonHourly) {
  StationSeries ragged{0, "a", hours(3), {1, 2}, {1, 2, 3}};
  EXPECT_THROW(compute_offsets(ragged), LengthMismatch);
  StationSeries gap{0, "a", {kStart, kStart + 2 * kHour}, {1, 2}, {1, 2}};
  EXPECT_THROW(compute_offsets(gap), ParseError);
}

TEST(ComputeOffsets, CorrectionReproducesObserved) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2, 2);
  StationSeries s{0, "a", hours(50), {}, {}};
  for (int t = 0; t < 50; ++t) {
    s.observed.push_back(u(rng));
    s.modeled.push_back(u(rng));
  }
  const auto o = compute_offsets(s);
  for (std::size_t t = 0; t < s.size(); ++t) EXPECT_NEAR(s.modeled[t] - o.values[t], s.observed[t], 1e-14);
}

TEST(Outliers, IdenticalOffsetsAreDegenerate) {
  std::vector<StormOffsets> c = {storm_of("a", {{2, 2, 2, 2}})};
  EXPECT_THROW(remove_outliers(c), DegenerateDataset);
}

TEST(Outliers, BoundaryValueIsKept) {
  // mean = 100/10 = 10; population variance = (9*10^2 + 90^2)/10 = 900 -> s = 30.
  // 10 + 3*30 = 100 sits exactly on the closed gate.
  std::vector<StormOffsets> c = {storm_of("a", {{0, 0, 0, 0, 0, 0, 0, 0, 0, 100}})};
  const auto report = remove_outliers(c);
  EXPECT_DOUBLE_EQ(report.stats.mean, 10.0);
  EXPECT_DOUBLE_EQ(report.stats.stddev, 30.0);
  EXPECT_EQ(report.removed_total, 0u);
  EXPECT_EQ(c[0].stations[0].values[9], 100.0);
}

TEST(Outliers, SpikeReplacedByNeighbourMidpoint) {
  std::vector<double> v;
  for (int t = 0; t < 200; ++t) v.push_back(0.01 * t);
  v[100] = 1e3;
  std::vector<StormOffsets> c = {storm_of("a", {v})};
  const auto report = remove_outliers(c);
  EXPECT_EQ(report.removed_total, 1u);
  EXPECT_EQ(report.removed_per_station.at(0), 1u);
  EXPECT_NEAR(c[0].stations[0].values[100], 0.5 * (v[99] + v[101]), 1e-12);
}

TEST(Outliers, EndpointsTakeNearestValue) {
  OffsetSeries o = offsets(0, "a", {kNaN, kNaN, 3, 5, kNaN});
  repair(o);
  EXPECT_EQ(o.values, (std::vector<double>{3, 3, 3, 5, 5}));
  OffsetSeries empty = offsets(0, "a", {kNaN, kNaN});
  EXPECT_THROW(repair(empty), MissingData);
}

TEST(Outliers, SecondPassWithFrozenStatsIsIdentity) {
  std::mt19937_64 rng(11);
  std::student_t_distribution<double> heavy(2.0);
  std::vector<std::vector<double>> v(3, std::vector<double>(300));
  for (auto& s : v)
    for (double& x : s) x = heavy(rng);
  std::vector<StormOffsets> c = {storm_of("a", v)};
  const auto first = remove_outliers(c);
  ASSERT_GT(first.removed_total, 0u);
  const auto snapshot = c;
  // Repaired values count as fresh measurements on the second pass.
  for (auto& st : c)
    for (auto& o : st.stations) std::fill(o.valid.begin(), o.valid.end(), 1);
  const auto second = remove_outliers(c, first.stats);
  EXPECT_EQ(second.removed_total, 0u);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(c[0].stations[k].values, snapshot[0].stations[k].values);
}

TEST(Outliers, StatisticsPoolAllStationsAndStorms) {
  std::vector<StormOffsets> c = {storm_of("a", {{1, 2}, {3, 4}}), storm_of("b", {{5, kNaN}, {6, 7}})};
  const auto s = outlier_stats(c);
  const std::vector<double> all = {1, 2, 3, 4, 5, 6, 7};
  const double mean = std::accumulate(all.begin(), all.end(), 0.0) / 7.0;
  double ss = 0;
  for (double x : all) ss += (x - mean) * (x - mean);
  EXPECT_EQ(s.count, 7u);
  EXPECT_NEAR(s.mean, mean, 1e-15);
  EXPECT_NEAR(s.stddev, std::sqrt(ss / 7.0), 1e-15);
}

TEST(MissingScreen, FlagsStationsAboveCutoff) {
  std::vector<double> mostly_missing(10, kNaN), fine(10, 1.0);
  mostly_missing[0] = mostly_missing[1] = mostly_missing[2] = 1.0;
  fine[0] = fine[1] = kNaN;  // exactly 20% is allowed
  std::vector<StormOffsets> c = {storm_of("a", {fine, mostly_missing})};
  const auto f = screen_missing(c, 0.2);
  ASSERT_EQ(f.size(), 1u);
  EXPECT_EQ(f[0].node_id, 1);
  EXPECT_NEAR(f[0].missing_fraction, 0.7, 1e-12);
}

TEST(Split, ThirteenStormsLeaveEleven) {
  const std::vector<std::string> ids = {"Katrina", "Rita",     "Gustav", "Ike",  "Irene", "Isaac", "Sandy",
                                        "Harvey",  "Irma",     "Michael", "Ida", "Ian",   "Idalia"};
  const auto s = split_storms(ids, "Ian", "Idalia");
  EXPECT_EQ(s.train.size(), 11u);
  EXPECT_EQ(s.train.front(), "Katrina");
  EXPECT_EQ(s.train.back(), "Ida");
}

TEST(Split, Errors) {
  EXPECT_THROW(split_storms({"s1", "s2"}, "s2", "s2"), UnknownStorm);
  EXPECT_THROW(split_storms({"s1", "s2"}, "s2", "s9"), UnknownStorm);
  EXPECT_THROW(split_storms({"s2", "s3"}, "s2", "s3"), UnknownStorm);
  EXPECT_EQ(split_storms({"s1", "s2", "s3"}, "s2", "s3").train, std::vector<std::string>{"s1"});
}

TEST(Scaler, MapsTrainRangeToUnitInterval) {
  const auto p = fit_scaler({storm_of("a", {{0, 10, 4}})});
  EXPECT_EQ(p.apply(0, 0), 0.0);
  EXPECT_EQ(p.apply(10, 0), 1.0);
  EXPECT_EQ(p.apply(5, 0), 0.5);
  EXPECT_NEAR(p.apply(12, 0), 1.2, 1e-15);
}

TEST(Scaler, ConstantStationIsDegenerate) {
  EXPECT_THROW(fit_scaler({storm_of("a", {{1, 2}, {3, 3}})}), DegenerateDataset);
}

TEST(Scaler, RoundTripIsIdentity) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-3, 3);
  std::vector<std::vector<double>> v(4, std::vector<double>(64));
  for (auto& s : v)
    for (double& x : s) x = u(rng);
  const StormOffsets st = storm_of("a", v);
  const auto p = fit_scaler({st});
  const auto back = invert_scaler(apply_scaler(st, p), p);
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t t = 0; t < 64; ++t) EXPECT_NEAR(back.stations[k].values[t], v[k][t], 1e-12);
}

TEST(Scaler, DependsOnlyOnTrainingSplit) {
  DatasetManifest m;
  m.storms = {{"s1", StormRole::train}, {"s2", StormRole::val}, {"s3", StormRole::test}};
  m.stations = {0};
  std::vector<StormSeries> corpus;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> z;
  for (const auto& [id, scale] : std::vector<std::pair<std::string, double>>{{"s1", 1}, {"s2", 1}, {"s3", 5}}) {
    StormSeries s{id, hours(80), {}};
    StationSeries st{0, id, s.timestamps, {}, {}};
    for (int t = 0; t < 80; ++t) {
      st.observed.push_back(0.0);
      st.modeled.push_back(scale * std::sin(0.2 * t) + 0.01 * z(rng));
    }
    s.stations.push_back(st);
    corpus.push_back(s);
  }
  const PreparedData p = prepare(corpus, m);
  EXPECT_EQ(p.scaler, fit_scaler(p.train));
  std::vector<StormOffsets> leaky = p.train;
  leaky.push_back(p.test);
  EXPECT_NE(p.scaler, fit_scaler(leaky));
}

TEST(Scaler, JsonRoundTrip) {
  ScalerParams p{{-0.25, 0.1}, {0.75, 1.0 / 3.0}};
  EXPECT_EQ(scaler_from_json(nlohmann::json::parse(scaler_to_json(p).dump())), p);
}

TEST(Windows, CountPerStorm) {
  const auto r = make_windows({tagged_storm("a", 1, 10, 2)}, 4, 2);
  EXPECT_EQ(r.dataset.size(), 5u);
  EXPECT_EQ(r.dataset.inputs.size(), 5u * 4 * 2);
  EXPECT_EQ(r.dataset.targets.size(), 5u * 2 * 2);
}

TEST(Windows, ShortStormSkipped) {
  const auto r = make_windows({tagged_storm("short", 1, 5, 2), tagged_storm("ok", 2, 6, 2)}, 4, 2);
  EXPECT_EQ(r.skipped_storms, std::vector<std::string>{"short"});
  EXPECT_EQ(r.dataset.size(), 1u);
}

TEST(Windows, NeverCrossStormBoundary) {
  const auto r = make_windows({tagged_storm("a", 1, 10, 3), tagged_storm("b", 2, 10, 3)}, 4, 2);
  const auto& d = r.dataset;
  ASSERT_EQ(d.size(), 10u);
  for (std::size_t w = 0; w < d.size(); ++w) {
    const double tag = d.origins[w].storm_id == "a" ? 1 : 2;
    EXPECT_EQ(d.origins[w].start_index, w % 5);
    for (std::size_t k = 0; k < 3; ++k) {
      for (std::size_t lag = 0; lag < 4; ++lag) EXPECT_EQ(std::floor(d.input(w, lag, k) / 1e6), tag);
      for (std::size_t lag = 0; lag < 2; ++lag) EXPECT_EQ(std::floor(d.target(w, lag, k) / 1e6), tag);
    }
  }
}

TEST(Windows, TargetsAreExactSlices) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> z;
  std::vector<StormOffsets> storms;
  for (int s = 0; s < 3; ++s) {
    std::vector<std::vector<double>> v(5, std::vector<double>(40 + 7 * s));
    for (auto& row : v)
      for (double& x : row) x = z(rng);
    storms.push_back(storm_of("s" + std::to_string(s), v));
  }
  const auto d = make_windows(storms, 6, 3).dataset;
  std::uniform_int_distribution<std::size_t> pick_w(0, d.size() - 1), pick_k(0, 4), pick_lag(0, 2), pick_in(0, 5);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t w = pick_w(rng), k = pick_k(rng), lag = pick_lag(rng), lin = pick_in(rng);
    const auto& o = d.origins[w];
    const StormOffsets& src = *std::find_if(storms.begin(), storms.end(), [&](const auto& s) { return s.storm_id == o.storm_id; });
    const auto at = std::find(src.timestamps.begin(), src.timestamps.end(), o.start) - src.timestamps.begin();
    EXPECT_EQ(d.target(w, lag, k), src.stations[k].values[static_cast<std::size_t>(at) + 6 + lag]);
    EXPECT_EQ(d.input(w, lin, k), src.stations[k].values[static_cast<std::size_t>(at) + lin]);
  }
}

TEST(Windows, BatchStacksSelectedWindows) {
  const auto d = make_windows({tagged_storm("a", 1, 12, 2)}, 3, 2).dataset;
  const auto [x, y] = d.batch({4, 0});
  EXPECT_EQ(x.shape(), (Shape{2, 3, 2}));
  EXPECT_EQ(y.shape(), (Shape{2, 2, 2}));
  EXPECT_EQ(x.data()[0], d.input(4, 0, 0));
  EXPECT_EQ(y.data()[y.size() - 1], d.target(0, 1, 1));
}

TEST(Files, SeriesCsvRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "stormnet_ingest_test";
  std::filesystem::create_directories(dir / "ian");
  StationSeries s{3, "ian", hours(4), {1.25, kNaN, -0.5, 0.1}, {1.5, 2.0, kNaN, 0.3}};
  write_text_file(series_path(dir, "ian", 3), series_csv_text(s));
  const auto back = read_series_csv(series_path(dir, "ian", 3), 3, "ian");
  EXPECT_EQ(back.timestamps, s.timestamps);
  for (std::size_t t = 0; t < 4; ++t) {
    EXPECT_EQ(std::isnan(back.observed[t]), std::isnan(s.observed[t]));
    if (!std::isnan(s.observed[t])) {
      EXPECT_EQ(back.observed[t], s.observed[t]);
    }
    if (!std::isnan(s.modeled[t])) {
      EXPECT_EQ(back.modeled[t], s.modeled[t]);
    }
  }
  write_text_file((dir / "bad.csv").string(), "time,obs,mod\n");
  EXPECT_THROW(read_series_csv((dir / "bad.csv").string(), 0, "x"), ParseError);
  EXPECT_THROW(read_series_csv((dir / "absent.csv").string(), 0, "x"), IoError);
  std::filesystem::remove_all(dir);
}

TEST(Files, ManifestRoundTripAndValidation) {
  DatasetManifest m;
  m.storms = {{"a", StormRole::train}, {"b", StormRole::val}, {"c", StormRole::test}};
  m.stations = {0, 1, 2};
  m.w_in = 42;
  const auto back = manifest_from_json(manifest_to_json(m));
  EXPECT_EQ(back.storm_ids(StormRole::train), std::vector<std::string>{"a"});
  EXPECT_EQ(back.single(StormRole::test), "c");
  EXPECT_EQ(back.w_in, 42u);
  auto j = manifest_to_json(m);
  j["stations"] = {0, 2};
  EXPECT_THROW(manifest_from_json(j), ParseError);
  j = manifest_to_json(m);
  j["storms"][0]["role"] = "holdout";
  EXPECT_THROW(manifest_from_json(j), ParseError);
}

TEST(Prepare, MissingDataStationIsReported) {
  DatasetManifest m;
  m.storms = {{"s1", StormRole::train}, {"s2", StormRole::val}, {"s3", StormRole::test}};
  m.stations = {0, 1};
  std::vector<StormSeries> corpus;
  for (const std::string id : {"s1", "s2", "s3"}) {
    StormSeries s{id, hours(20), {}};
    for (int k = 0; k < 2; ++k) {
      StationSeries st{k, id, s.timestamps, {}, {}};
      for (int t = 0; t < 20; ++t) {
        st.observed.push_back(k == 1 && id == "s1" && t < 10 ? kNaN : 0.0);
        st.modeled.push_back(std::sin(t + k));
      }
      s.stations.push_back(st);
    }
    corpus.push_back(s);
  }
  try {
    prepare(corpus, m);
    FAIL() << "expected MissingData";
  } catch (const MissingData& e) {
    EXPECT_NE(std::string(e.what()).find("station 1 in s1"), std::string::npos);
    EXPECT_EQ(e.exit_code(), 3);
  }
}
