#include <gtest/gtest.h>

#include <unistd.h>

#include <atomic>
#include <cstdlib>
#include <fstream>

#include "patrolsim/experiment.hpp"

using namespace patrolsim;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  static std::atomic<int> counter{0};
  fs::path p = fs::temp_directory_path() /
               ("patrolsim_" + name + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) { return csv::read_file(p.string()); }

std::size_t data_rows(const std::string& text) {
  const auto n = static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
  return n == 0 ? 0 : n - 1;
}

json small_plan(const fs::path& out) {
  return {{"seed", 7},
          {"output_dir", out.string()},
          {"months", {2, 3}},
          {"train", {{"epochs", 2}, {"batch_size", 32}}},
          {"datasets", {{"Baltimore", {{"source", "synthetic"}, {"incidents_per_month", 42}, {"seed", 3}}}}},
          {"cells", json::array({{{"city", "Baltimore"}, {"year", 2019}, {"mode", "detected"}}})}};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PATROLSIM_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path write_config(const fs::path& dir, const json& j) {
  const fs::path p = dir / "plan.json";
  write_text(p, j.dump(2));
  return p;
}

}  // namespace

TEST(Plan, Defaults) {
  const auto p = parse_plan(json::object());
  EXPECT_EQ(p.months.size(), 11u);
  EXPECT_EQ(p.sim.n_officers, 60);
  EXPECT_EQ(p.sim.radius_ft, 700.0);
  EXPECT_EQ(p.train.epochs, 200);
  EXPECT_EQ(p.replicates, 1);
  EXPECT_TRUE(p.cells.empty());
}

TEST(Plan, RejectsBadValues) {
  auto bad = [](json j) { EXPECT_THROW(parse_plan(j), ConfigError) << j.dump(); };
  bad(json::array());
  bad({{"months", {1, 2}}});
  bad({{"replicates", 0}});
  bad({{"jobs", 0}});
  bad({{"seed", "abc"}});
  bad({{"sim", {{"p_officer", 1.5}}}});
  bad({{"sim", {{"reported_mode_semantics", "other"}}}});
  bad({{"train", {{"lr", 0.0}}}});
  bad({{"datasets", {{"Atlantis", {{"source", "synthetic"}}}}}});
  bad({{"datasets", {{"Baltimore", {{"source", "web"}}}}}});
  bad({{"datasets", {{"Baltimore", {{"source", "files"}, {"crimes", "a.csv"}}}}}});
  bad({{"cells", json::array({{{"city", "Chicago"}, {"year", 2019}, {"mode", "detected"}}})}});
  json j = small_plan("x");
  j["sensitivity"] = {{"parameter", "radius_ft"}, {"values", {-1}}, {"city", "Baltimore"}, {"year", 2019}, {"mode", "detected"}};
  bad(j);
  j = small_plan("x");
  j["debias"] = {{"city", "Baltimore"}, {"year", 2019}, {"replace_fraction", 1.0}};
  bad(j);
}

TEST(Plan, OverridesWin) {
  const auto p = parse_plan(small_plan("a"), "", {99, 3, std::string("b")});
  EXPECT_EQ(p.seed, 99u);
  EXPECT_EQ(p.sim.seed, 99u);
  EXPECT_EQ(p.jobs, 3);
  EXPECT_EQ(p.output_dir, "b");
}

TEST(Plan, FilePathsResolveAgainstDataDir) {
  json j = {{"data_dir", "/data"},
            {"datasets",
             {{"Baltimore",
               {{"source", "files"}, {"crimes", "c.csv"}, {"boundaries", "b.geojson"}, {"demographics", "d.csv"}}}}}};
  const auto p = parse_plan(j);
  EXPECT_EQ(p.datasets.at(City::Baltimore).crimes[0], "/data/c.csv");
  EXPECT_THROW(validate_data_paths(p), DataError);
}

TEST(Command, EmptyPlanWritesNothing) {
  const auto dir = scratch("empty");
  auto plan = parse_plan({{"output_dir", (dir / "out").string()}});
  RunLog log;
  EXPECT_EQ(run_command(plan, "all", log), 0);
  EXPECT_FALSE(fs::exists(dir / "out"));
}

TEST(Grid, OneCellTwoMonthsDeterministic) {
  const auto dir = scratch("grid");
  const auto plan = parse_plan(small_plan(dir));
  RunLog log1, log2;
  DataRepository r1(plan), r2(plan);
  const auto a = run_grid(plan, r1, log1);
  const auto b = run_grid(plan, r2, log2);
  ASSERT_TRUE(log1.failures.empty()) << log1.failures.front();
  EXPECT_EQ(a.monthly.size(), 2u);
  EXPECT_EQ(a.annual.size(), 1u);
  EXPECT_EQ(monthly_csv(a.monthly), monthly_csv(b.monthly));
  EXPECT_EQ(annual_csv(a.annual), annual_csv(b.annual));
  EXPECT_EQ(a.annual[0].months_total, 2u);
}

TEST(Grid, RowCountIsCellsTimesMonthsTimesReplicates) {
  const auto dir = scratch("count");
  json j = small_plan(dir);
  j["replicates"] = 2;
  j["cells"].push_back({{"city", "Baltimore"}, {"year", 2019}, {"mode", "reported"}});
  const auto plan = parse_plan(j);
  RunLog log;
  DataRepository repo(plan);
  const auto g = run_grid(plan, repo, log);
  EXPECT_EQ(g.monthly.size(), 2u * 2u * 2u);
  EXPECT_EQ(g.annual.size(), 2u * 2u);
}

TEST(Grid, JobCountDoesNotChangeResults) {
  const auto dir = scratch("jobs");
  json j = small_plan(dir);
  j["cells"].push_back({{"city", "Baltimore"}, {"year", 2019}, {"mode", "reported"}});
  auto p1 = parse_plan(j);
  auto p2 = parse_plan(j, "", {std::nullopt, 2, std::nullopt});
  RunLog l1, l2;
  DataRepository r1(p1), r2(p2);
  EXPECT_EQ(monthly_csv(run_grid(p1, r1, l1).monthly), monthly_csv(run_grid(p2, r2, l2).monthly));
}

TEST(Grid, OnlyReproducesOneRow) {
  const auto dir = scratch("only");
  const auto plan = parse_plan(small_plan(dir));
  RunLog l1, l2;
  DataRepository r1(plan), r2(plan);
  const auto all = run_grid(plan, r1, l1);
  const auto one = run_grid(plan, r2, l2, std::string("Baltimore/2019/3/detected/r0"));
  ASSERT_EQ(one.monthly.size(), 1u);
  EXPECT_EQ(monthly_csv_row(one.monthly[0]), monthly_csv_row(all.monthly[1]));
}

TEST(Grid, MissingMonthWarns) {
  const auto dir = scratch("missing");
  json j = small_plan(dir);
  j["datasets"]["Baltimore"]["incidents_per_month"] = 1;
  j["datasets"]["Baltimore"]["invalid_share"] = 0.999;
  const auto plan = parse_plan(j);
  RunLog log;
  DataRepository repo(plan);
  const auto g = run_grid(plan, repo, log);
  EXPECT_LT(g.monthly.size(), 2u);
  EXPECT_FALSE(log.warnings.empty());
}

namespace {

std::vector<SensitivityRow> sweep(const char* param, std::vector<double> values, const char* mode,
                                  bool expected_value = false) {
  const auto dir = scratch("sens");
  json j = small_plan(dir);
  j["sim"] = {{"expected_value", expected_value}};
  j["sensitivity"] = {{"parameter", param}, {"values", values}, {"city", "Baltimore"}, {"year", 2019}, {"mode", mode}};
  const auto plan = parse_plan(j);
  RunLog log;
  DataRepository repo(plan);
  auto rows = run_sensitivity(plan, plan.sensitivity[0], repo, log);
  EXPECT_TRUE(log.failures.empty());
  return rows;
}

}  // namespace

TEST(Sensitivity, RadiusAndOfficersAreMonotone) {
  const auto r = sweep("radius_ft", {400, 700, 1000, 1500}, "detected");
  ASSERT_EQ(r.size(), 4u);
  for (std::size_t i = 1; i < r.size(); ++i) EXPECT_GE(r[i].detections, r[i - 1].detections);
  const auto o = sweep("n_officers", {30, 60, 90, 120}, "detected");
  for (std::size_t i = 1; i < o.size(); ++i) EXPECT_GE(o[i].detections, o[i - 1].detections);
  EXPECT_EQ(r[0].crimes, o[0].crimes);
}

TEST(Sensitivity, ReportingProbabilityRaisesReports) {
  const auto r = sweep("reporting_prob", {0.2, 0.521, 0.9}, "reported", true);
  for (std::size_t i = 1; i < r.size(); ++i) EXPECT_GT(r[i].reported, r[i - 1].reported);
  EXPECT_NEAR(r[1].reported, 0.521 * static_cast<double>(r[1].crimes), 1e-9);
  const std::string line = sensitivity_csv_row(r[0]);
  EXPECT_EQ(line.substr(0, 19), "reporting_prob,0.2,");
}

TEST(Debias, SaturatedDetectionCountsEveryCrime) {
  const auto dir = scratch("debias");
  json j = small_plan(dir);
  j["sim"] = {{"p_officer", 1.0}, {"radius_ft", 50000.0}};
  j["debias"] = {{"city", "Baltimore"}, {"year", 2019}, {"replace_fraction", 0.3}, {"max_training_points", 200}};
  const auto plan = parse_plan(j);
  RunLog log;
  DataRepository repo(plan);
  const auto rows = run_debias_experiment(plan, repo, log);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].condition, "biased");
  EXPECT_EQ(rows[1].condition, "debiased");
  const auto data = repo.get(City::Baltimore, 2019);
  for (const auto& r : rows) {
    EXPECT_EQ(r.training_points, 200u);
    std::size_t total = 0;
    double detected = 0;
    for (std::size_t g = 0; g < kGroupCount; ++g) {
      total += r.rates.total[g];
      detected += r.rates.detected[g];
    }
    EXPECT_EQ(total, data->incidents.size());
    EXPECT_EQ(detected, static_cast<double>(total));
    EXPECT_EQ(r.dir.value, 1.0);
    EXPECT_EQ(r.gini, 0.0);
  }
  const auto text = debias_csv(rows);
  EXPECT_EQ(data_rows(text), 2u);
}

TEST(Debias, ZeroFractionKeepsTrainingSet) {
  const auto dir = scratch("debias0");
  json j = small_plan(dir);
  j["debias"] = {{"city", "Baltimore"}, {"year", 2019}, {"replace_fraction", 0.0}, {"max_training_points", 150}};
  const auto plan = parse_plan(j);
  DataRepository repo(plan);
  const auto data = repo.get(City::Baltimore, 2019);
  const RunKey key{City::Baltimore, 2019, 0, SimMode::Detected, 0};
  const auto in = debias_inputs(*data, plan.sim, key, 150);
  const auto again = debias_inputs(*data, plan.sim, key, 150);
  ASSERT_EQ(in.labeled.size(), 150u);
  for (std::size_t i = 0; i < in.labeled.size(); ++i) {
    EXPECT_EQ(in.labeled[i].location, again.labeled[i].location);
    EXPECT_EQ(in.labeled[i].group, again.labeled[i].group);
  }
  const auto rows = run_debias(*data, in, plan.train, plan.sim, 0.0, key);
  EXPECT_EQ(rows[0].training_points, rows[1].training_points);
}

TEST(Plots, ChartsAndScatter) {
  const auto dir = scratch("plots");
  const std::string monthly = std::string(kMonthlyHeader) +
                              "Baltimore,2019,2,detected,0.1,0.05,0.02,2,finite,0.05,0.3,0.015,0\n"
                              "Baltimore,2019,3,detected,0.1,0,0.02,,infinite,0.1,0.5,0.05,0\n"
                              "Chicago,2019,2,reported,0.04,0.08,0.02,0.5,finite,-0.04,0.2,-0.008,0\n";
  std::vector<NeighborhoodObservation> obs(5);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    obs[i].neighborhood_id = "N" + std::to_string(i);
    obs[i].crimes = 10;
    obs[i].detection_rate = 0.1 * static_cast<double>(i);
    obs[i].pct_black = 0.2 * static_cast<double>(i);
    obs[i].pct_white = 1.0 - obs[i].pct_black;
  }
  RunLog log;
  const auto files = emit_plots(monthly, neighborhoods_csv(obs), dir, std::nullopt, log);
  ASSERT_EQ(files.size(), 4u);
  for (const auto& f : files) {
    const auto svg = slurp(f);
    EXPECT_NE(svg.find("<svg"), std::string::npos);
    EXPECT_EQ(svg.substr(svg.size() - 7), "</svg>\n");
  }
  EXPECT_NE(slurp(dir / "dir.svg").find("infinite"), std::string::npos);
  EXPECT_NE(slurp(dir / "dir.svg").find("Chicago 2019 reported"), std::string::npos);
  const auto scatter = slurp(dir / "scatter.svg");
  std::size_t circles = 0;
  for (auto pos = scatter.find("<circle"); pos != std::string::npos; pos = scatter.find("<circle", pos + 1)) ++circles;
  EXPECT_EQ(circles, 10u);

  RunLog empty_log;
  const auto none = emit_plots(kMonthlyHeader, std::nullopt, dir / "none", std::nullopt, empty_log);
  EXPECT_TRUE(none.empty());
  EXPECT_FALSE(empty_log.warnings.empty());
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("cli");
  write_text(dir / "broken.json", "{ not json");
  EXPECT_EQ(run_cli("grid -c " + (dir / "broken.json").string()), 1);
  EXPECT_EQ(run_cli("grid -c " + (dir / "nope.json").string()), 1);
  EXPECT_EQ(run_cli("frobnicate"), 1);
  const json missing = {{"output_dir", (dir / "out").string()},
                        {"datasets",
                         {{"Baltimore",
                           {{"source", "files"},
                            {"crimes", (dir / "absent.csv").string()},
                            {"boundaries", (dir / "absent.geojson").string()},
                            {"demographics", (dir / "absent_d.csv").string()}}}}}};
  EXPECT_EQ(run_cli("grid -c " + write_config(dir, missing).string()), 2);
  EXPECT_EQ(run_cli("--version"), 0);
}

TEST(Cli, GridWritesOutputsAndManifest) {
  const auto dir = scratch("cli_grid");
  const auto cfg = write_config(dir, small_plan(dir / "ignored"));
  ASSERT_EQ(run_cli("grid -q -c " + cfg.string() + " -o " + (dir / "out").string()), 0);
  EXPECT_EQ(data_rows(slurp(dir / "out" / "monthly.csv")), 2u);
  EXPECT_EQ(data_rows(slurp(dir / "out" / "annual.csv")), 1u);
  const auto manifest = json::parse(slurp(dir / "out" / "manifest.json"));
  EXPECT_EQ(manifest["seed"], 7);
  EXPECT_EQ(manifest["runs"].size(), 2u);
  EXPECT_FALSE(fs::exists(dir / "ignored"));
}

TEST(Ingest, SyntheticExportRoundTripsThroughFileLoader) {
  const auto dir = scratch("ingest");
  const auto synthetic_plan = parse_plan(small_plan(dir / "a"));
  RunLog log;
  ASSERT_EQ(run_command(synthetic_plan, "ingest", log), 0);
  const fs::path raw = dir / "a" / "ingest" / "Baltimore_2019_raw";
  ASSERT_TRUE(fs::exists(raw / "crimes.csv"));

  json files = small_plan(dir / "b");
  files["datasets"]["Baltimore"] = {{"source", "files"},
                                    {"crimes", (raw / "crimes.csv").string()},
                                    {"column_mapping", "patrolsim"},
                                    {"boundaries", (raw / "boundaries.geojson").string()},
                                    {"demographics", (raw / "demographics.csv").string()}};
  RunLog log2;
  ASSERT_EQ(run_command(parse_plan(files), "ingest", log2), 0);
  EXPECT_EQ(slurp(dir / "a" / "ingest" / "incidents_Baltimore_2019.csv"),
            slurp(dir / "b" / "ingest" / "incidents_Baltimore_2019.csv"));
  const auto report = json::parse(slurp(dir / "b" / "ingest" / "ingest_report.json"));
  EXPECT_EQ(report["Baltimore/2019"]["neighborhoods"], 16);
}
