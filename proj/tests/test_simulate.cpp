#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "patrolsim/metrics.hpp"
#include "patrolsim/simulate.hpp"

using namespace patrolsim;
using fixtures::hood;
using fixtures::incident;
using fixtures::rect;

namespace {

double product_loop(std::size_t k, double p) {
  double miss = 1.0;
  for (std::size_t j = 0; j < k; ++j) miss *= 1.0 - p;
  return 1.0 - miss;
}

SimConfig config(std::uint64_t seed = 1) {
  SimConfig c;
  c.seed = seed;
  return c;
}

// Share of crimes detected (or expected) per neighborhood id.
double hood_rate(const MonthRunResult& r, const std::string& id) {
  double d = 0.0;
  std::size_t n = 0;
  for (const auto& o : r.outcomes) {
    if (o.neighborhood_id != id) continue;
    d += r.expected_value ? o.detection_prob : (o.detected ? 1.0 : 0.0);
    ++n;
  }
  return n ? d / static_cast<double>(n) : 0.0;
}

}  // namespace

TEST(AssignRace, CertainAndProportional) {
  const std::vector<Neighborhood> hoods{hood("B", rect(0, 1, 0, 1), 1.0, 0.0, 0.0), hood("H", rect(0, 1, 0, 1), 0.5, 0.5, 0.0),
                                        hood("M", rect(0, 1, 0, 1), 0.62, 0.305, 0.075)};
  const auto lookup = make_lookup(hoods);
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(assign_race(incident("x", {0.5, 0.5}, 3, "B"), lookup, rng), RaceGroup::Black);

  const int n = 10000;
  int black = 0;
  for (int i = 0; i < n; ++i) black += assign_race(incident("x", {0.5, 0.5}, 3, "H"), lookup, rng) == RaceGroup::Black;
  EXPECT_NEAR(black / static_cast<double>(n), 0.5, 0.02);

  std::array<int, 3> counts{};
  for (int i = 0; i < n; ++i) ++counts[index_of(assign_race(incident("x", {0.5, 0.5}, 3, "M"), lookup, rng))];
  const double expect[3] = {0.62, 0.305, 0.075};
  for (int g = 0; g < 3; ++g) {
    const double sd = std::sqrt(expect[g] * (1 - expect[g]) / n);
    EXPECT_NEAR(counts[g] / static_cast<double>(n), expect[g], 3 * sd);
  }
}

TEST(AssignRace, UnknownNeighborhoodIsFatal) {
  const std::vector<Neighborhood> hoods{hood("A", rect(0, 1, 0, 1), 1, 0, 0)};
  Rng rng(2);
  EXPECT_THROW(assign_race(incident("x", {0.5, 0.5}, 3, "Z"), make_lookup(hoods), rng), DataError);
  EXPECT_THROW(assign_race(incident("x", {0.5, 0.5}, 3, ""), make_lookup(hoods), rng), DataError);
}

TEST(NoisyOr, Examples) {
  EXPECT_EQ(noisy_or(0, 0.85), 0.0);
  EXPECT_DOUBLE_EQ(noisy_or(1, 0.85), 0.85);
  EXPECT_NEAR(noisy_or(2, 0.85), 0.9775, 1e-15);
}

TEST(NoisyOr, ClosedFormEqualsProductLoop) {
  for (double p : {0.1, 0.5, 0.85, 1.0}) {
    for (std::size_t k = 0; k <= 20; ++k) {
      EXPECT_NEAR(noisy_or(k, p), product_loop(k, p), 1e-12);
      EXPECT_GE(noisy_or(k, p), 0.0);
      EXPECT_LE(noisy_or(k, p), 1.0);
    }
  }
}

TEST(NoisyOr, ProbabilityFromIndex) {
  const LatLon c{39.30, -76.60};
  const std::vector<LatLon> patrols{{39.3001, -76.60}, {39.3010, -76.60}, {39.35, -76.60}};
  const auto idx = build_grid_index(patrols, 700.0, kBaltimoreBox);
  EXPECT_NEAR(noisy_or_probability(c, idx, 700.0, 0.85), 0.9775, 1e-12);
  EXPECT_NEAR(noisy_or_probability(c, idx, 100.0, 0.85), 0.85, 1e-12);
}

namespace {

struct Scene {
  std::vector<Neighborhood> hoods;
  MonthSlice slice;
};

Scene uniform_scene(std::size_t n, std::uint64_t seed) {
  Scene s;
  s.hoods = fixtures::two_cluster_city(0, 0.5, 0.1, 1).neighborhoods;
  Rng rng(seed);
  s.slice.year = 2019;
  s.slice.month = 5;
  const double mid = 0.5 * (kBaltimoreBox.lon_min + kBaltimoreBox.lon_max);
  for (std::size_t i = 0; i < n; ++i) {
    const LatLon p{uniform(rng, kBaltimoreBox.lat_min, kBaltimoreBox.lat_max),
                   uniform(rng, kBaltimoreBox.lon_min, kBaltimoreBox.lon_max)};
    s.slice.incidents.push_back(incident("u" + std::to_string(i), p, 5, p.lon < mid ? "W" : "E"));
  }
  return s;
}

}  // namespace

TEST(Evaluate, ColocatedPatrolsCertainDetection) {
  const Scene s = uniform_scene(200, 3);
  SimConfig cfg = config();
  cfg.p_officer = 1.0;
  const auto lookup = make_lookup(s.hoods);
  const auto r = evaluate_patrols(s.slice, lookup, s.slice.locations(), cfg, key_for(s.slice, SimMode::Detected, 0));
  ASSERT_EQ(r.outcomes.size(), s.slice.incidents.size());
  for (const auto& o : r.outcomes) {
    EXPECT_TRUE(o.detected);
    EXPECT_GE(o.k, 1u);
  }
}

TEST(Evaluate, DistantPatrolsDetectNothing) {
  const Scene s = uniform_scene(200, 4);
  const std::vector<LatLon> far(60, LatLon{41.88, -87.63});
  const auto r = evaluate_patrols(s.slice, make_lookup(s.hoods), far, config(), key_for(s.slice, SimMode::Detected, 0));
  for (const auto& o : r.outcomes) {
    EXPECT_FALSE(o.detected);
    EXPECT_EQ(o.detection_prob, 0.0);
  }
}

TEST(Evaluate, GroupCountsAndDetectionImpliesProbability) {
  const Scene s = uniform_scene(500, 5);
  Rng rng(6);
  std::vector<LatLon> patrols;
  for (int i = 0; i < 60; ++i) patrols.push_back(s.slice.incidents[uniform_index(rng, 500)].location);
  const auto r = evaluate_patrols(s.slice, make_lookup(s.hoods), patrols, config(), key_for(s.slice, SimMode::Detected, 0));
  std::size_t total = 0;
  for (auto c : r.group_counts) total += c;
  EXPECT_EQ(total, s.slice.incidents.size());
  for (const auto& o : r.outcomes) {
    if (o.detected) EXPECT_GT(o.detection_prob, 0.0);
  }
}

TEST(Evaluate, MonotoneInRadiusAndOfficers) {
  const Scene s = uniform_scene(400, 7);
  const auto lookup = make_lookup(s.hoods);
  Rng rng(8);
  std::vector<LatLon> pool;
  for (int i = 0; i < 120; ++i) pool.push_back(s.slice.incidents[uniform_index(rng, 400)].location);
  const RunKey key = key_for(s.slice, SimMode::Detected, 0);

  std::vector<double> prev_prob(400, 0.0);
  std::vector<bool> prev_det(400, false);
  for (double r : {100.0, 400.0, 700.0, 1000.0, 1500.0, 3000.0}) {
    SimConfig cfg = config();
    cfg.radius_ft = r;
    const auto res = evaluate_patrols(s.slice, lookup, pool, cfg, key);
    for (std::size_t i = 0; i < 400; ++i) {
      EXPECT_GE(res.outcomes[i].detection_prob, prev_prob[i]);
      if (prev_det[i]) EXPECT_TRUE(res.outcomes[i].detected);
      prev_prob[i] = res.outcomes[i].detection_prob;
      prev_det[i] = res.outcomes[i].detected;
    }
  }
  std::fill(prev_prob.begin(), prev_prob.end(), 0.0);
  for (std::size_t n : {1u, 30u, 60u, 90u, 120u}) {
    const std::vector<LatLon> subset(pool.begin(), pool.begin() + n);
    const auto res = evaluate_patrols(s.slice, lookup, subset, config(), key);
    for (std::size_t i = 0; i < 400; ++i) {
      EXPECT_GE(res.outcomes[i].detection_prob, prev_prob[i]);
      prev_prob[i] = res.outcomes[i].detection_prob;
    }
  }
}

TEST(RunDetected, DeterministicAndConcentrated) {
  // GAN history only in the west cluster; crimes in both.
  auto city = fixtures::two_cluster_city(400, 0.5, 0.08, 9);
  MonthSlice history = city.slice;
  std::erase_if(history.incidents, [](const CrimeIncident& c) { return *c.neighborhood_id != "W"; });
  TrainConfig gan;
  gan.epochs = 30;
  SimConfig cfg = config(11);
  const auto lookup = make_lookup(city.neighborhoods);
  const RunKey key = key_for(city.slice, SimMode::Detected, 0);
  auto [model, hist] = train_month_gan(history, gan, cfg, key, city.bbox);
  const auto res = evaluate_patrols(city.slice, lookup, draw_patrols(model, cfg, key), cfg, key);
  EXPECT_GT(hood_rate(res, "W"), hood_rate(res, "E"));

  const auto a = run_month_detected(city.slice, lookup, TrainConfig{.epochs = 2}, cfg, city.bbox);
  const auto b = run_month_detected(city.slice, lookup, TrainConfig{.epochs = 2}, cfg, city.bbox);
  EXPECT_EQ(outcomes_csv(a), outcomes_csv(b));
  ASSERT_EQ(a.patrols.size(), 60u);
  for (std::size_t i = 0; i < a.patrols.size(); ++i) EXPECT_EQ(a.patrols[i].lat, b.patrols[i].lat);
  EXPECT_TRUE(a.gan.has_value());
  EXPECT_EQ(summary_json(a)["incidents"], 400);
}

TEST(RunDetected, EmptySliceIsRejected) {
  MonthSlice empty;
  EXPECT_THROW(run_month_detected(empty, {}, TrainConfig{}, config(), kBaltimoreBox), DataError);
}

TEST(RunReported, FullReportingFullCoverage) {
  const Scene s = uniform_scene(100, 12);
  SimConfig cfg = config();
  cfg.mode = SimMode::Reported;
  cfg.reporting_prob = 1.0;
  cfg.p_officer = 1.0;
  cfg.n_officers = 100;
  const auto r = run_month_reported(s.slice, make_lookup(s.hoods), cfg);
  EXPECT_EQ(r.patrols.size(), 100u);
  for (const auto& o : r.outcomes) {
    EXPECT_TRUE(o.detected);
    EXPECT_TRUE(o.reported.value_or(false));
  }
}

TEST(RunReported, VanishingReportingMeansNoDetections) {
  const Scene s = uniform_scene(300, 13);
  SimConfig cfg = config();
  cfg.reporting_prob = 1e-12;
  const auto r = run_month_reported(s.slice, make_lookup(s.hoods), cfg);
  EXPECT_TRUE(r.patrols.empty());
  EXPECT_EQ(r.outcomes.size(), 300u);
  for (const auto& o : r.outcomes) EXPECT_FALSE(o.detected);
}

TEST(RunReported, FewerReportsThanOfficersUsesAll) {
  const Scene s = uniform_scene(40, 14);
  SimConfig cfg = config();
  cfg.reporting_prob = 0.5;
  const auto r = run_month_reported(s.slice, make_lookup(s.hoods), cfg);
  std::size_t reported = 0;
  for (const auto& o : r.outcomes) reported += o.reported.value_or(false);
  EXPECT_EQ(r.patrols.size(), reported);
}

TEST(RunReported, ReportIsDetectionSemantics) {
  const Scene s = uniform_scene(300, 15);
  SimConfig cfg = config();
  cfg.reported_semantics = ReportedSemantics::ReportIsDetection;
  const auto r = run_month_reported(s.slice, make_lookup(s.hoods), cfg);
  EXPECT_TRUE(r.patrols.empty());
  for (const auto& o : r.outcomes) EXPECT_EQ(o.detected, o.reported.value_or(false));
}

TEST(RunReported, UniformCityLessDisparateThanConcentratedPatrols) {
  SimConfig cfg = config(16);
  cfg.expected_value = true;
  const Scene s = uniform_scene(1000, 17);
  const auto lookup = make_lookup(s.hoods);
  const auto reported = run_month_reported(s.slice, lookup, cfg);
  const double reported_gap = std::abs(parity_gap(group_rates(reported)));

  // detected-mode patrols sitting only on west-cluster crimes
  std::vector<LatLon> west;
  for (const auto& inc : s.slice.incidents) {
    if (*inc.neighborhood_id == "W" && west.size() < 60) west.push_back(inc.location);
  }
  const auto concentrated = evaluate_patrols(s.slice, lookup, west, cfg, key_for(s.slice, SimMode::Detected, 0));
  const double detected_gap = std::abs(parity_gap(group_rates(concentrated)));
  EXPECT_LT(reported_gap, detected_gap);
}

TEST(SimConfigValidation, Bounds) {
  SimConfig c;
  EXPECT_NO_THROW(c.validate());
  c.n_officers = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SimConfig{};
  c.p_officer = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SimConfig{};
  c.radius_ft = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SimConfig{};
  c.reporting_prob = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Serialization, OutcomesCsvHeader) {
  const Scene s = uniform_scene(3, 18);
  const auto r = evaluate_patrols(s.slice, make_lookup(s.hoods), {}, config(), key_for(s.slice, SimMode::Detected, 0));
  const auto csv = outcomes_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "id,group,k,prob,detected");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}
