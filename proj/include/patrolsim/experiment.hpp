#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "patrolsim/csv.hpp"
#include "patrolsim/error.hpp"
#include "patrolsim/gan.hpp"
#include "patrolsim/ingest.hpp"
#include "patrolsim/metrics.hpp"
#include "patrolsim/plots.hpp"
#include "patrolsim/simulate.hpp"
#include "patrolsim/stats.hpp"
#include "patrolsim/synthetic.hpp"

#ifndef PATROLSIM_VERSION
#define PATROLSIM_VERSION "dev"
#endif

namespace patrolsim {

namespace fs = std::filesystem;

// --- plan ---------------------------------------------------------------------

struct CellSpec {
  City city = City::Baltimore;
  int year = 0;
  SimMode mode = SimMode::Detected;

  std::string label() const {
    return std::string(to_string(city)) + "/" + std::to_string(year) + "/" + std::string(to_string(mode));
  }
};

struct DatasetSpec {
  enum class Source { Files, Synthetic };
  Source source = Source::Synthetic;
  std::vector<std::string> crimes;  // resolved paths
  std::string column_mapping = "patrolsim";
  std::string boundaries;
  std::string id_property = "id";
  std::string name_property = "name";
  std::string demographics;
  std::optional<BoundingBox> bbox;
  SyntheticCityConfig synthetic;  // city and year are filled per request
};

enum class SensitivityParameter { RadiusFt, Officers, ReportingProb };

inline std::string_view to_string(SensitivityParameter p) {
  switch (p) {
    case SensitivityParameter::RadiusFt:
      return "radius_ft";
    case SensitivityParameter::Officers:
      return "n_officers";
    case SensitivityParameter::ReportingProb:
      return "reporting_prob";
  }
  return "?";
}

struct SensitivityPlan {
  SensitivityParameter parameter = SensitivityParameter::RadiusFt;
  std::vector<double> values;
  CellSpec base;
};

struct DebiasPlan {
  City city = City::Baltimore;
  int year = 0;
  double replace_fraction = 0.30;
  /// Upper bound on GAN training points (uniform subsample); 0 = no bound.
  std::size_t max_training_points = 0;
};

struct ExperimentPlan {
  std::uint64_t seed = 20240601;
  std::string output_dir = "out";
  int jobs = 1;
  int replicates = 1;
  std::vector<int> months{2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
  SimConfig sim;
  TrainConfig train;
  std::map<std::string, ColumnMapping> presets = default_column_presets();
  std::map<City, DatasetSpec> datasets;
  std::vector<CellSpec> cells;
  std::vector<SensitivityPlan> sensitivity;
  std::optional<DebiasPlan> debias;
  bool standardize_covariates = false;
  std::optional<double> dir_y_max;
  std::string data_dir;
  std::uint64_t config_checksum = 0;
};

/// Command-line values that take precedence over the config file.
struct PlanOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<std::string> output_dir;
};

namespace detail {

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  try {
    return j[key].get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

inline City city_of(const nlohmann::json& j, const char* key = "city") {
  const auto name = get_or<std::string>(j, key, "");
  auto c = parse_city(name);
  if (!c) throw ConfigError("unknown city '" + name + "'");
  return *c;
}

inline SimMode mode_of(const nlohmann::json& j) {
  const auto name = get_or<std::string>(j, "mode", "detected");
  auto m = parse_mode(name);
  if (!m) throw ConfigError("unknown mode '" + name + "'");
  return *m;
}

inline CellSpec cell_of(const nlohmann::json& j) {
  CellSpec c{city_of(j), get_or<int>(j, "year", 0), mode_of(j)};
  if (c.year <= 0) throw ConfigError("cell needs a positive year");
  return c;
}

inline std::optional<BoundingBox> bbox_of(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) return std::nullopt;
  const auto v = get_or<std::vector<double>>(j, key, {});
  if (v.size() != 4) throw ConfigError(std::string(key) + " must be [lat_min, lat_max, lon_min, lon_max]");
  BoundingBox b{v[0], v[1], v[2], v[3]};
  if (!b.valid()) throw ConfigError(std::string(key) + " is empty");
  return b;
}

inline std::string resolve(const std::string& path, const std::string& base) {
  if (path.empty() || fs::path(path).is_absolute() || base.empty()) return path;
  return (fs::path(base) / path).string();
}

}  // namespace detail

/// Builds a plan from the JSON config. Relative data paths resolve against
/// `data_dir` (config key), then $PATROLSIM_DATA_DIR, then `config_dir`.
inline ExperimentPlan parse_plan(const nlohmann::json& j, const std::string& config_dir = "",
                                 const PlanOverrides& ov = {}) {
  using detail::get_or;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentPlan p;
  p.config_checksum = fnv1a64(j.dump());
  p.seed = get_or<std::uint64_t>(j, "seed", p.seed);
  p.output_dir = get_or<std::string>(j, "output_dir", p.output_dir);
  p.jobs = get_or<int>(j, "jobs", p.jobs);
  p.replicates = get_or<int>(j, "replicates", p.replicates);
  p.months = get_or<std::vector<int>>(j, "months", p.months);
  if (p.replicates < 1) throw ConfigError("replicates must be >= 1");
  for (int m : p.months) {
    if (m < 2 || m > 12) throw ConfigError("months must lie in 2..12");
  }
  std::sort(p.months.begin(), p.months.end());
  p.months.erase(std::unique(p.months.begin(), p.months.end()), p.months.end());

  const char* env_dir = std::getenv("PATROLSIM_DATA_DIR");
  p.data_dir = get_or<std::string>(j, "data_dir", env_dir ? std::string(env_dir) : config_dir);
  if (!p.data_dir.empty() && fs::path(p.data_dir).is_relative() && !config_dir.empty() && j.contains("data_dir")) {
    p.data_dir = (fs::path(config_dir) / p.data_dir).string();
  }

  if (j.contains("sim")) {
    const auto& s = j["sim"];
    p.sim.n_officers = get_or<int>(s, "n_officers", p.sim.n_officers);
    p.sim.radius_ft = get_or<double>(s, "radius_ft", p.sim.radius_ft);
    p.sim.p_officer = get_or<double>(s, "p_officer", p.sim.p_officer);
    p.sim.reporting_prob = get_or<double>(s, "reporting_prob", p.sim.reporting_prob);
    p.sim.expected_value = get_or<bool>(s, "expected_value", p.sim.expected_value);
    const auto sem = get_or<std::string>(s, "reported_mode_semantics", "patrol_from_reports");
    if (sem == "patrol_from_reports") {
      p.sim.reported_semantics = ReportedSemantics::PatrolFromReports;
    } else if (sem == "report_is_detection") {
      p.sim.reported_semantics = ReportedSemantics::ReportIsDetection;
    } else {
      throw ConfigError("unknown reported_mode_semantics '" + sem + "'");
    }
  }
  p.sim.validate();

  if (j.contains("train")) {
    const auto& t = j["train"];
    p.train.epochs = get_or<int>(t, "epochs", p.train.epochs);
    p.train.batch_size = get_or<int>(t, "batch_size", p.train.batch_size);
    p.train.lr = get_or<double>(t, "lr", p.train.lr);
    p.train.beta1 = get_or<double>(t, "beta1", p.train.beta1);
    p.train.beta2 = get_or<double>(t, "beta2", p.train.beta2);
    p.train.latent_dim = get_or<int>(t, "latent_dim", p.train.latent_dim);
  }
  if (p.train.epochs < 0 || p.train.batch_size < 1 || !(p.train.lr > 0.0) || p.train.latent_dim < 1) {
    throw ConfigError("train: epochs >= 0, batch_size >= 1, lr > 0 and latent_dim >= 1 required");
  }

  if (j.contains("column_mappings")) {
    for (const auto& [name, m] : j["column_mappings"].items()) {
      p.presets[name] = {detail::city_of(m), get_or<std::string>(m, "id", "id"), get_or<std::string>(m, "lat", "lat"),
                         get_or<std::string>(m, "lon", "lon"), get_or<std::string>(m, "date", "date"),
                         get_or<std::string>(m, "type", "type")};
    }
  }

  if (j.contains("datasets")) {
    for (const auto& [name, d] : j["datasets"].items()) {
      auto city = parse_city(name);
      if (!city) throw ConfigError("dataset key '" + name + "' is not a city");
      DatasetSpec ds;
      const auto source = get_or<std::string>(d, "source", "files");
      if (source == "synthetic") {
        ds.source = DatasetSpec::Source::Synthetic;
        auto& sc = ds.synthetic;
        sc.bbox = detail::bbox_of(d, "bbox").value_or(*city == City::Baltimore ? kBaltimoreBox : kChicagoSyntheticBox);
        sc.incidents_per_month = get_or<int>(d, "incidents_per_month", sc.incidents_per_month);
        sc.black_crime_share = get_or<double>(d, "black_crime_share", sc.black_crime_share);
        sc.hotspots_per_half = get_or<int>(d, "hotspots_per_half", sc.hotspots_per_half);
        sc.hotspot_sigma_deg = get_or<double>(d, "hotspot_sigma_deg", sc.hotspot_sigma_deg);
        sc.invalid_share = get_or<double>(d, "invalid_share", sc.invalid_share);
        sc.seed = get_or<std::uint64_t>(d, "seed", sc.seed);
        const auto grid = get_or<std::vector<int>>(d, "grid", {sc.grid_rows, sc.grid_cols});
        if (grid.size() != 2 || grid[0] < 1 || grid[1] < 2) throw ConfigError("synthetic grid must be [rows>=1, cols>=2]");
        sc.grid_rows = grid[0];
        sc.grid_cols = grid[1];
        if (sc.incidents_per_month < 1) throw ConfigError("incidents_per_month must be >= 1");
        ds.bbox = sc.bbox;
      } else if (source == "files") {
        ds.source = DatasetSpec::Source::Files;
        if (d.contains("crimes") && d["crimes"].is_string()) {
          ds.crimes = {d["crimes"].get<std::string>()};
        } else {
          ds.crimes = get_or<std::vector<std::string>>(d, "crimes", {});
        }
        if (ds.crimes.empty()) throw ConfigError("dataset '" + name + "' lists no crime files");
        for (auto& c : ds.crimes) c = detail::resolve(c, p.data_dir);
        ds.column_mapping = get_or<std::string>(d, "column_mapping", *city == City::Baltimore ? "baltimore-part1"
                                                                                             : "chicago-portal");
        if (!p.presets.count(ds.column_mapping)) {
          throw ConfigError("unknown column mapping preset '" + ds.column_mapping + "'");
        }
        ds.boundaries = detail::resolve(get_or<std::string>(d, "boundaries", ""), p.data_dir);
        ds.demographics = detail::resolve(get_or<std::string>(d, "demographics", ""), p.data_dir);
        if (ds.boundaries.empty() || ds.demographics.empty()) {
          throw ConfigError("dataset '" + name + "' needs boundaries and demographics");
        }
        ds.id_property = get_or<std::string>(d, "boundary_id_property", ds.id_property);
        ds.name_property = get_or<std::string>(d, "boundary_name_property", ds.name_property);
        ds.bbox = detail::bbox_of(d, "bbox");
        if (!ds.bbox && *city == City::Baltimore) ds.bbox = kBaltimoreBox;
      } else {
        throw ConfigError("dataset '" + name + "': source must be 'files' or 'synthetic'");
      }
      p.datasets[*city] = std::move(ds);
    }
  }

  auto require_dataset = [&](City c) {
    if (!p.datasets.count(c)) throw ConfigError("no dataset configured for " + std::string(to_string(c)));
  };
  if (j.contains("cells")) {
    for (const auto& c : j["cells"]) {
      p.cells.push_back(detail::cell_of(c));
      require_dataset(p.cells.back().city);
    }
  }
  if (j.contains("sensitivity")) {
    auto items = j["sensitivity"].is_array() ? j["sensitivity"] : nlohmann::json::array({j["sensitivity"]});
    for (const auto& s : items) {
      SensitivityPlan sp;
      const auto param = get_or<std::string>(s, "parameter", "");
      if (param == "radius_ft") {
        sp.parameter = SensitivityParameter::RadiusFt;
      } else if (param == "n_officers") {
        sp.parameter = SensitivityParameter::Officers;
      } else if (param == "reporting_prob") {
        sp.parameter = SensitivityParameter::ReportingProb;
      } else {
        throw ConfigError("sensitivity parameter must be radius_ft, n_officers or reporting_prob");
      }
      sp.values = get_or<std::vector<double>>(s, "values", {});
      if (sp.values.empty()) throw ConfigError("sensitivity sweep has no values");
      for (double v : sp.values) {
        const bool ok = sp.parameter == SensitivityParameter::RadiusFt   ? v > 0.0 && v <= 50000.0
                        : sp.parameter == SensitivityParameter::Officers ? v >= 1.0 && v <= 100000.0 && v == std::floor(v)
                                                                         : v > 0.0 && v <= 1.0;
        if (!ok) throw ConfigError("sensitivity value " + csv::num(v) + " out of bounds for " + param);
      }
      sp.base = detail::cell_of(s);
      require_dataset(sp.base.city);
      p.sensitivity.push_back(std::move(sp));
    }
  }
  if (j.contains("debias") && !j["debias"].is_null()) {
    const auto& d = j["debias"];
    DebiasPlan dp;
    dp.city = detail::city_of(d);
    dp.year = get_or<int>(d, "year", 0);
    dp.replace_fraction = get_or<double>(d, "replace_fraction", dp.replace_fraction);
    dp.max_training_points = get_or<std::size_t>(d, "max_training_points", 0);
    if (!(dp.replace_fraction >= 0.0 && dp.replace_fraction < 1.0)) throw ConfigError("replace_fraction must be in [0, 1)");
    require_dataset(dp.city);
    p.debias = dp;
  }
  if (j.contains("stats")) p.standardize_covariates = get_or<bool>(j["stats"], "standardize", false);
  if (j.contains("plots") && j["plots"].contains("dir_y_max")) p.dir_y_max = j["plots"]["dir_y_max"].get<double>();

  if (ov.seed) p.seed = *ov.seed;
  if (ov.jobs) p.jobs = *ov.jobs;
  if (ov.output_dir) p.output_dir = *ov.output_dir;
  if (p.jobs < 1) throw ConfigError("jobs must be >= 1");
  p.sim.seed = p.seed;
  return p;
}

inline ExperimentPlan load_plan(const std::string& path, const PlanOverrides& ov = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return parse_plan(j, fs::path(path).parent_path().string(), ov);
}

/// Every referenced data file must exist.
inline void validate_data_paths(const ExperimentPlan& p) {
  for (const auto& [city, ds] : p.datasets) {
    if (ds.source != DatasetSpec::Source::Files) continue;
    std::vector<std::string> paths = ds.crimes;
    paths.push_back(ds.boundaries);
    paths.push_back(ds.demographics);
    for (const auto& path : paths) {
      if (!fs::exists(path)) throw DataError("data file not found: " + path);
    }
  }
}

// --- data ---------------------------------------------------------------------

struct IngestCounts {
  std::size_t rows_read = 0;
  std::size_t parse_dropped = 0;
  std::size_t filter_dropped = 0;
  std::size_t unassigned = 0;
  std::size_t kept = 0;
};

/// Filtered, neighborhood-tagged incidents of one city-year.
struct CityYearData {
  City city = City::Baltimore;
  int year = 0;
  BoundingBox bbox;
  std::vector<Neighborhood> neighborhoods;
  std::vector<CrimeIncident> incidents;
  std::vector<MonthSlice> slices;
  IngestCounts counts;
  std::string checksum;
  std::vector<std::string> warnings;

  const MonthSlice* slice(int month) const {
    for (const auto& s : slices) {
      if (s.month == month) return &s;
    }
    return nullptr;
  }
};

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Loads and caches city-year data. Not thread-safe; load everything a run
/// needs before fanning out.
class DataRepository {
 public:
  explicit DataRepository(const ExperimentPlan& plan) : plan_(plan) {}

  std::shared_ptr<const CityYearData> get(City city, int year) {
    const auto key = std::make_pair(city, year);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    auto it = plan_.datasets.find(city);
    if (it == plan_.datasets.end()) throw ConfigError("no dataset for " + std::string(to_string(city)));
    auto data = it->second.source == DatasetSpec::Source::Synthetic ? load_synthetic(it->second, city, year)
                                                                    : load_files(it->second, city, year);
    auto ptr = std::make_shared<const CityYearData>(std::move(data));
    cache_[key] = ptr;
    return ptr;
  }

 private:
  static CityYearData finish(City city, int year, BoundingBox bbox, std::vector<Neighborhood> hoods,
                             const std::vector<CrimeIncident>& parsed, IngestCounts counts) {
    CityYearData d;
    d.city = city;
    d.year = year;
    d.bbox = bbox;
    d.neighborhoods = std::move(hoods);
    const auto of_year = select_year(parsed, year);
    const auto valid = filter_valid(of_year, bbox);
    counts.filter_dropped = of_year.size() - valid.size();
    auto assigned = assign_neighborhoods(valid, d.neighborhoods);
    counts.unassigned = assigned.dropped;
    counts.kept = assigned.incidents.size();
    d.incidents = std::move(assigned.incidents);
    d.slices = partition_by_month(d.incidents);
    d.counts = counts;
    return d;
  }

  CityYearData load_synthetic(const DatasetSpec& ds, City city, int year) const {
    SyntheticCityConfig cfg = ds.synthetic;
    cfg.city = city;
    cfg.year = year;
    const SyntheticCity sc = make_synthetic_city(cfg);
    IngestCounts counts;
    counts.rows_read = sc.incidents.size();
    CityYearData d = finish(city, year, sc.bbox, sc.neighborhoods, sc.incidents, counts);
    d.checksum = "synthetic:" + hex64(fnv1a64(synthetic_crimes_csv(sc)));
    return d;
  }

  CityYearData load_files(const DatasetSpec& ds, City city, int year) {
    auto& raw = raw_[city];
    if (!raw.loaded) {
      const ColumnMapping mapping = plan_.presets.at(ds.column_mapping);
      std::uint64_t h = 0xcbf29ce484222325ULL;
      for (const auto& path : ds.crimes) {
        const std::string text = csv::read_file(path);
        h = fnv1a64(text, h);
        auto parsed = parse_crime_table(csv::parse(text), ColumnMapping{city, mapping.id, mapping.lat, mapping.lon,
                                                                        mapping.date, mapping.type},
                                        path);
        raw.counts.rows_read += parsed.rows_read;
        raw.counts.parse_dropped += parsed.dropped;
        raw.incidents.insert(raw.incidents.end(), std::make_move_iterator(parsed.incidents.begin()),
                             std::make_move_iterator(parsed.incidents.end()));
      }
      const std::string boundary_text = csv::read_file(ds.boundaries);
      const std::string demo_text = csv::read_file(ds.demographics);
      h = fnv1a64(boundary_text, h);
      h = fnv1a64(demo_text, h);
      auto joined = join_neighborhoods(parse_boundaries(boundary_text, ds.id_property, ds.name_property, ds.boundaries),
                                       parse_demographics(csv::parse(demo_text), ds.demographics));
      if (joined.neighborhoods.empty()) throw DataError("no neighborhoods survive the boundary/demographics join");
      raw.neighborhoods = std::move(joined.neighborhoods);
      raw.warnings = std::move(joined.warnings);
      raw.checksum = "fnv1a64:" + hex64(h);
      raw.loaded = true;
    }
    const BoundingBox bbox = ds.bbox.value_or(hull_box(raw.neighborhoods, 0.01));
    CityYearData d = finish(city, year, bbox, raw.neighborhoods, raw.incidents, raw.counts);
    d.checksum = raw.checksum;
    d.warnings = raw.warnings;
    return d;
  }

  struct RawCity {
    bool loaded = false;
    std::vector<CrimeIncident> incidents;
    std::vector<Neighborhood> neighborhoods;
    IngestCounts counts;
    std::string checksum;
    std::vector<std::string> warnings;
  };

  const ExperimentPlan& plan_;
  std::map<std::pair<City, int>, std::shared_ptr<const CityYearData>> cache_;
  std::map<City, RawCity> raw_;
};

// --- execution helpers --------------------------------------------------------

/// Runs fn(0..n-1) on up to `jobs` threads. fn must not throw.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, jobs)), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

/// Messages and failures collected while running; printed by the CLI.
struct RunLog {
  std::vector<std::string> info;
  std::vector<std::string> warnings;
  std::vector<std::string> failures;
  std::vector<std::string> outputs;
  nlohmann::json runs = nlohmann::json::array();
  nlohmann::json data = nlohmann::json::object();
};

inline void record_data(RunLog& log, const CityYearData& d) {
  const std::string key = std::string(to_string(d.city)) + "/" + std::to_string(d.year);
  log.data[key] = {{"checksum", d.checksum},
                   {"rows_read", d.counts.rows_read},
                   {"parse_dropped", d.counts.parse_dropped},
                   {"filter_dropped", d.counts.filter_dropped},
                   {"unassigned", d.counts.unassigned},
                   {"kept", d.counts.kept},
                   {"neighborhoods", d.neighborhoods.size()}};
  for (const auto& w : d.warnings) log.warnings.push_back(key + ": " + w);
}

// --- grid ---------------------------------------------------------------------

struct GridResult {
  std::vector<MonthlyBiasRecord> monthly;
  std::vector<AnnualSummary> annual;
  std::vector<MonthRunResult> runs;
};

inline nlohmann::json run_entry(const MonthRunResult& r, std::uint64_t master) {
  nlohmann::json e = {{"key", r.key.label()},
                      {"master_seed", master},
                      {"race_seed", r.key.stream(master, "race")},
                      {"detect_seed", r.key.stream(master, "detect")},
                      {"patrol_seed", r.key.stream(master, "patrol")}};
  if (r.key.mode == SimMode::Detected) {
    e["gan_seed"] = r.key.stream(master, "gan");
  } else {
    e["report_seed"] = r.key.stream(master, "report");
  }
  if (r.gan) {
    e["gan_spread_ratio"] = r.gan->spread_ratio;
    e["gan_final_g_loss"] = r.gan->g_loss.empty() ? 0.0 : r.gan->g_loss.back();
    e["gan_final_d_loss"] = r.gan->d_loss.empty() ? 0.0 : r.gan->d_loss.back();
  }
  return e;
}

/// One month-run per (cell, month present in data, replicate). Results come
/// back in (cell, month, replicate) order regardless of `jobs`. With `only`,
/// just the month-run whose RunKey label matches is executed.
inline GridResult run_grid(const ExperimentPlan& plan, DataRepository& repo, RunLog& log,
                           const std::optional<std::string>& only = std::nullopt) {
  struct Job {
    std::size_t cell;
    const MonthSlice* slice;
    int replicate;
    std::shared_ptr<const CityYearData> data;
  };
  std::vector<Job> jobs;
  std::vector<bool> cell_failed(plan.cells.size(), false);
  for (std::size_t c = 0; c < plan.cells.size(); ++c) {
    const auto& cell = plan.cells[c];
    std::shared_ptr<const CityYearData> data;
    try {
      data = repo.get(cell.city, cell.year);
      record_data(log, *data);
    } catch (const std::exception& e) {
      log.failures.push_back("cell " + cell.label() + ": " + e.what());
      cell_failed[c] = true;
      continue;
    }
    for (int month : plan.months) {
      const MonthSlice* slice = data->slice(month);
      if (slice == nullptr) {
        log.warnings.push_back("cell " + cell.label() + ": month " + std::to_string(month) + " has no incidents; skipped");
        continue;
      }
      for (int r = 0; r < plan.replicates; ++r) {
        if (only && key_for(*slice, cell.mode, r).label() != *only) continue;
        jobs.push_back({c, slice, r, data});
      }
    }
  }

  std::vector<std::optional<MonthRunResult>> results(jobs.size());
  std::vector<std::string> errors(jobs.size());
  parallel_for(jobs.size(), plan.jobs, [&](std::size_t i) {
    const Job& job = jobs[i];
    const auto lookup = make_lookup(job.data->neighborhoods);
    SimConfig sim = plan.sim;
    sim.mode = plan.cells[job.cell].mode;
    try {
      results[i] = run_month(*job.slice, lookup, plan.train, sim, job.data->bbox, job.replicate);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  GridResult out;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (!results[i]) {
      const RunKey key = key_for(*jobs[i].slice, plan.cells[jobs[i].cell].mode, jobs[i].replicate);
      log.failures.push_back("run " + key.label() + ": " + errors[i]);
      cell_failed[jobs[i].cell] = true;
      continue;
    }
    log.runs.push_back(run_entry(*results[i], plan.seed));
    out.monthly.push_back(bias_record(*results[i]));
    out.runs.push_back(std::move(*results[i]));
  }

  // annual rows per (cell, replicate)
  for (std::size_t c = 0; c < plan.cells.size(); ++c) {
    for (int r = 0; r < plan.replicates; ++r) {
      std::vector<MonthlyBiasRecord> recs;
      for (const auto& m : out.monthly) {
        const auto& cell = plan.cells[c];
        if (m.key.city == cell.city && m.key.year == cell.year && m.key.mode == cell.mode && m.key.replicate == r) {
          recs.push_back(m);
        }
      }
      if (!recs.empty()) out.annual.push_back(annual_summary(recs));
    }
  }
  return out;
}

inline std::string monthly_csv(const std::vector<MonthlyBiasRecord>& recs) {
  std::string out = kMonthlyHeader;
  for (const auto& r : recs) out += monthly_csv_row(r);
  return out;
}

inline std::string annual_csv(const std::vector<AnnualSummary>& rows) {
  std::string out = kAnnualHeader;
  for (const auto& r : rows) out += annual_csv_row(r);
  return out;
}

// --- sensitivity --------------------------------------------------------------

struct SensitivityRow {
  SensitivityParameter parameter = SensitivityParameter::RadiusFt;
  double value = 0.0;
  CellSpec base;
  AnnualSummary summary;
  double detections = 0.0;  // detected count, or expected count in expected-value mode
  double reported = kUndefined;
  std::size_t crimes = 0;
};

inline SimConfig with_parameter(SimConfig cfg, SensitivityParameter p, double v) {
  switch (p) {
    case SensitivityParameter::RadiusFt:
      cfg.radius_ft = v;
      break;
    case SensitivityParameter::Officers:
      cfg.n_officers = static_cast<int>(v);
      break;
    case SensitivityParameter::ReportingProb:
      cfg.reporting_prob = v;
      break;
  }
  return cfg;
}

/// Sweeps one parameter over the base cell's months (replicate 0), all other
/// parameters at plan defaults. Each month's GAN is trained once and shared
/// by every value, and every value reuses the same RNG streams, so the only
/// difference between rows is the swept parameter.
inline std::vector<SensitivityRow> run_sensitivity(const ExperimentPlan& plan, const SensitivityPlan& sp,
                                                   DataRepository& repo, RunLog& log) {
  auto data = repo.get(sp.base.city, sp.base.year);
  record_data(log, *data);
  const auto lookup = make_lookup(data->neighborhoods);
  std::vector<std::vector<MonthlyBiasRecord>> records(sp.values.size());
  std::vector<SensitivityRow> rows(sp.values.size());
  for (std::size_t v = 0; v < sp.values.size(); ++v) {
    rows[v].parameter = sp.parameter;
    rows[v].value = sp.values[v];
    rows[v].base = sp.base;
    if (sp.base.mode == SimMode::Reported) rows[v].reported = 0.0;
  }

  std::vector<const MonthSlice*> slices;
  for (int month : plan.months) {
    if (const MonthSlice* s = data->slice(month)) slices.push_back(s);
  }
  std::vector<std::vector<std::optional<MonthRunResult>>> results(slices.size());
  std::vector<std::string> errors(slices.size());
  parallel_for(slices.size(), plan.jobs, [&](std::size_t i) {
    const MonthSlice& slice = *slices[i];
    const RunKey key = key_for(slice, sp.base.mode, 0);
    results[i].resize(sp.values.size());
    try {
      SimConfig base = plan.sim;
      base.mode = sp.base.mode;
      std::optional<GanModel> model;
      if (sp.base.mode == SimMode::Detected) model = train_month_gan(slice, plan.train, base, key, data->bbox).first;
      for (std::size_t v = 0; v < sp.values.size(); ++v) {
        const SimConfig cfg = with_parameter(base, sp.parameter, sp.values[v]);
        cfg.validate();
        results[i][v] = model ? evaluate_patrols(slice, lookup, draw_patrols(*model, cfg, key), cfg, key)
                              : run_month_reported(slice, lookup, cfg, 0);
      }
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  for (std::size_t i = 0; i < slices.size(); ++i) {
    if (!errors[i].empty()) {
      log.failures.push_back("sensitivity " + std::string(to_string(sp.parameter)) + " month " +
                             std::to_string(slices[i]->month) + ": " + errors[i]);
      continue;
    }
    for (std::size_t v = 0; v < sp.values.size(); ++v) {
      const MonthRunResult& run = *results[i][v];
      records[v].push_back(bias_record(run));
      const GroupRates rates = group_rates(run);
      for (double d : rates.detected) rows[v].detections += d;
      rows[v].crimes += run.outcomes.size();
      if (sp.base.mode == SimMode::Reported) {
        if (plan.sim.expected_value) {
          rows[v].reported += with_parameter(plan.sim, sp.parameter, sp.values[v]).reporting_prob *
                              static_cast<double>(run.outcomes.size());
        } else {
          for (const auto& o : run.outcomes) rows[v].reported += o.reported.value_or(false) ? 1.0 : 0.0;
        }
      }
    }
  }
  for (std::size_t v = 0; v < sp.values.size(); ++v) rows[v].summary = annual_summary(records[v]);
  return rows;
}

inline constexpr const char* kSensitivityHeader =
    "parameter,value,dir,months_dir_finite,avg_parity_gap,avg_gini,detections,reported,crimes,city,year,mode\n";

inline std::string sensitivity_csv_row(const SensitivityRow& r) {
  return csv::row({std::string(to_string(r.parameter)), csv::num(r.value), csv::num(r.summary.avg_dir),
                   std::to_string(r.summary.months_counted), csv::num(r.summary.avg_parity_gap),
                   csv::num(r.summary.avg_gini), csv::num(r.detections), csv::num(r.reported),
                   std::to_string(r.crimes), std::string(to_string(r.base.city)), std::to_string(r.base.year),
                   std::string(to_string(r.base.mode))});
}

// --- debiasing ----------------------------------------------------------------

struct DebiasRow {
  std::string condition;
  GroupRates rates;
  DirValue dir;
  double parity_gap = kUndefined;
  double gini = kUndefined;
  std::size_t training_points = 0;
  LossHistory history;
};

struct DebiasInputs {
  MonthSlice year_slice;              // every valid incident of the city-year
  std::vector<LabeledPoint> labeled;  // GAN training set with sampled groups
};

/// Pools Feb..Dec into one slice and labels each incident with the same race
/// draw evaluate_patrols will make for it, optionally subsampling the
/// training set.
inline DebiasInputs debias_inputs(const CityYearData& data, const SimConfig& sim, const RunKey& key,
                                  std::size_t max_training_points) {
  DebiasInputs in;
  in.year_slice = {data.city, data.year, 0, data.incidents};
  const auto lookup = make_lookup(data.neighborhoods);
  Rng race_rng(key.stream(sim.seed, "race"));
  std::vector<LabeledPoint> all;
  all.reserve(data.incidents.size());
  for (const auto& inc : data.incidents) all.push_back({inc.location, assign_race(inc, lookup, race_rng)});
  if (max_training_points == 0 || all.size() <= max_training_points) {
    in.labeled = std::move(all);
    return in;
  }
  Rng sub(key.stream(sim.seed, "debias/subsample"));
  auto idx = sample_without_replacement(all.size(), max_training_points, sub);
  std::sort(idx.begin(), idx.end());
  for (std::size_t i : idx) in.labeled.push_back(all[i]);
  return in;
}

/// Biased condition trains the patrol GAN on the raw labeled history; the
/// debiased one first swaps `replace_fraction` of it for group-balanced
/// conditional-GAN samples. Both are scored on the full year with paired
/// race and detection draws.
inline std::vector<DebiasRow> run_debias(const CityYearData& data, const DebiasInputs& in, const TrainConfig& train,
                                         SimConfig sim, double replace_fraction, const RunKey& key) {
  sim.mode = SimMode::Detected;
  sim.validate();
  const auto lookup = make_lookup(data.neighborhoods);

  auto score = [&](const std::string& name, const std::vector<LabeledPoint>& training, std::string_view stream) {
    std::vector<LatLon> points;
    points.reserve(training.size());
    for (const auto& p : training) points.push_back(p.location);
    TrainConfig cfg = train;
    cfg.seed = key.stream(sim.seed, stream);
    auto [model, hist] = train_gan(points, cfg, data.bbox);
    const auto run = evaluate_patrols(in.year_slice, lookup, draw_patrols(model, sim, key), sim, key);
    DebiasRow row;
    row.condition = name;
    row.rates = group_rates(run);
    row.dir = disparate_impact_ratio(row.rates);
    row.parity_gap = parity_gap(row.rates);
    row.gini = gini(row.rates);
    row.training_points = training.size();
    row.history = std::move(hist);
    return row;
  };

  std::vector<DebiasRow> rows;
  rows.push_back(score("biased", in.labeled, "debias/biased/gan"));

  TrainConfig cgan_cfg = train;
  cgan_cfg.seed = key.stream(sim.seed, "debias/cgan");
  auto [cgan, cgan_hist] = train_conditional_gan(in.labeled, cgan_cfg, data.bbox);
  Rng rebalance_rng(key.stream(sim.seed, "debias/rebalance"));
  const auto rebalanced = rebalance_training_set(in.labeled, cgan, replace_fraction, rebalance_rng);
  rows.push_back(score("debiased", rebalanced, "debias/debiased/gan"));
  return rows;
}

inline std::vector<DebiasRow> run_debias_experiment(const ExperimentPlan& plan, DataRepository& repo, RunLog& log) {
  if (!plan.debias) return {};
  const auto& dp = *plan.debias;
  auto data = repo.get(dp.city, dp.year);
  record_data(log, *data);
  const RunKey key{dp.city, dp.year, 0, SimMode::Detected, 0};
  const auto in = debias_inputs(*data, plan.sim, key, dp.max_training_points);
  auto rows = run_debias(*data, in, plan.train, plan.sim, dp.replace_fraction, key);
  for (const auto& r : rows) {
    log.runs.push_back({{"key", key.label() + "/debias/" + r.condition},
                        {"master_seed", plan.seed},
                        {"gan_spread_ratio", r.history.spread_ratio},
                        {"training_points", r.training_points}});
  }
  return rows;
}

inline std::string debias_csv(const std::vector<DebiasRow>& rows) {
  std::string out = "condition,dir,dir_flag,rate_black,rate_white,parity_gap,rate_neither,gini,training_points\n";
  for (const auto& r : rows) {
    out += csv::row({r.condition, csv::num(r.dir.value), std::string(to_string(r.dir.flag)),
                     csv::num(r.rates.rate_or_nan(RaceGroup::Black)), csv::num(r.rates.rate_or_nan(RaceGroup::White)),
                     csv::num(r.parity_gap), csv::num(r.rates.rate_or_nan(RaceGroup::Neither)), csv::num(r.gini),
                     std::to_string(r.training_points)});
  }
  return out;
}

// --- stats --------------------------------------------------------------------

inline std::vector<NeighborhoodObservation> read_neighborhoods_csv(const std::string& text) {
  const auto table = csv::parse(text);
  std::vector<NeighborhoodObservation> out;
  auto col = [&](const char* n) {
    auto c = table.column(n);
    if (!c) throw DataError(std::string("neighborhoods.csv: missing column ") + n);
    return *c;
  };
  const auto c_id = col("neighborhood_id"), c_city = col("city"), c_year = col("year"), c_mode = col("mode"),
             c_crimes = col("crimes"), c_rate = col("detection_rate"), c_black = col("pct_black"),
             c_white = col("pct_white"), c_income = col("median_income"), c_poverty = col("poverty_rate");
  for (const auto& row : table.rows) {
    NeighborhoodObservation o;
    o.neighborhood_id = row.at(c_id);
    o.city = parse_city(row.at(c_city)).value_or(City::Baltimore);
    o.year = std::stoi(row.at(c_year));
    o.mode = parse_mode(row.at(c_mode)).value_or(SimMode::Detected);
    o.crimes = static_cast<std::size_t>(std::stoull(row.at(c_crimes)));
    o.detection_rate = csv::to_double(row.at(c_rate)).value_or(kUndefined);
    o.pct_black = csv::to_double(row.at(c_black)).value_or(kUndefined);
    o.pct_white = csv::to_double(row.at(c_white)).value_or(kUndefined);
    o.median_income = csv::to_double(row.at(c_income)).value_or(kUndefined);
    o.poverty_rate = csv::to_double(row.at(c_poverty)).value_or(kUndefined);
    out.push_back(o);
  }
  return out;
}

inline NeighborhoodDataset neighborhood_dataset(const ExperimentPlan& plan, DataRepository& repo,
                                                const std::vector<MonthRunResult>& runs) {
  std::map<City, const std::vector<Neighborhood>*> hoods;
  std::vector<std::shared_ptr<const CityYearData>> keep;
  for (const auto& cell : plan.cells) {
    if (hoods.count(cell.city)) continue;
    auto d = repo.get(cell.city, cell.year);
    keep.push_back(d);
    hoods[cell.city] = &d->neighborhoods;
  }
  return build_neighborhood_dataset(runs, hoods);
}

struct StatsResult {
  std::optional<OlsFit> fit;
  std::vector<PredictorCorrelation> correlations;
  std::size_t n = 0;
};

inline StatsResult run_stats(const std::vector<NeighborhoodObservation>& obs, bool standardize, RunLog& log) {
  StatsResult s;
  s.n = obs.size();
  s.correlations = predictor_correlations(obs);
  try {
    s.fit = fit_detection_model(obs, standardize);
  } catch (const DataError& e) {
    log.failures.push_back(std::string("regression: ") + e.what());
  }
  return s;
}

// --- plots --------------------------------------------------------------------

/// Line charts of monthly DIR, parity gap and Gini (one series per cell and
/// replicate), plus detection-rate scatters when neighborhood data is given.
/// Returns written file paths; nothing is written for an empty monthly table.
inline std::vector<std::string> emit_plots(const std::string& monthly_text,
                                           const std::optional<std::string>& neighborhoods_text,
                                           const fs::path& out_dir, std::optional<double> dir_y_max, RunLog& log) {
  std::vector<std::string> written;
  const auto table = csv::parse(monthly_text);
  if (table.rows.empty()) {
    log.warnings.push_back("plots: monthly table is empty; no plots written");
    return written;
  }
  auto col = [&](const char* n) {
    auto c = table.column(n);
    if (!c) throw DataError(std::string("monthly.csv: missing column ") + n);
    return *c;
  };
  const auto c_city = col("city"), c_year = col("year"), c_month = col("month"), c_mode = col("mode"),
             c_dir = col("dir"), c_flag = col("dir_flag"), c_gap = col("parity_gap"), c_gini = col("gini");
  const auto c_rep = table.column("replicate");

  std::vector<std::string> order;
  std::map<std::string, std::array<plots::Series, 3>> by_cell;
  for (const auto& row : table.rows) {
    std::string label = row.at(c_city) + " " + row.at(c_year) + " " + row.at(c_mode);
    if (c_rep && row.at(*c_rep) != "0") label += " r" + row.at(*c_rep);
    if (!by_cell.count(label)) order.push_back(label);
    auto& s = by_cell[label];
    const double month = csv::to_double(row.at(c_month)).value_or(kUndefined);
    const bool inf = row.at(c_flag) == "infinite";
    const double vals[3] = {csv::to_double(row.at(c_dir)).value_or(kUndefined),
                            csv::to_double(row.at(c_gap)).value_or(kUndefined),
                            csv::to_double(row.at(c_gini)).value_or(kUndefined)};
    for (int k = 0; k < 3; ++k) {
      s[k].label = label;
      s[k].x.push_back(month);
      s[k].y.push_back(vals[k]);
      s[k].infinite.push_back(k == 0 && inf);
    }
  }
  const plots::ChartSpec specs[3] = {
      {"Monthly disparate impact ratio", "month", "DIR (Black rate / White rate)", dir_y_max, 1.0},
      {"Monthly demographic parity gap", "month", "Black rate - White rate", std::nullopt, 0.0},
      {"Monthly Gini coefficient of group detection rates", "month", "Gini", std::nullopt, std::nullopt}};
  const char* names[3] = {"dir.svg", "parity_gap.svg", "gini.svg"};
  for (int k = 0; k < 3; ++k) {
    std::vector<plots::Series> series;
    for (const auto& label : order) series.push_back(by_cell[label][k]);
    const fs::path path = out_dir / names[k];
    write_text(path, plots::line_chart_svg(specs[k], series));
    written.push_back(path.string());
  }

  if (neighborhoods_text) {
    const auto obs = read_neighborhoods_csv(*neighborhoods_text);
    if (!obs.empty()) {
      plots::ScatterPanel black{"%Black (share of residents, 0-1)", "detection rate (detected / crimes)", {}, {}};
      plots::ScatterPanel white{"%White (share of residents, 0-1)", "detection rate (detected / crimes)", {}, {}};
      for (const auto& o : obs) {
        black.x.push_back(o.pct_black);
        black.y.push_back(o.detection_rate);
        white.x.push_back(o.pct_white);
        white.y.push_back(o.detection_rate);
      }
      const fs::path path = out_dir / "scatter.svg";
      write_text(path, plots::scatter_svg("Neighborhood detection rate (n = " + std::to_string(obs.size()) + ")",
                                          {black, white}));
      written.push_back(path.string());
    }
  }
  return written;
}

// --- manifest -----------------------------------------------------------------

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline nlohmann::json manifest_json(const ExperimentPlan& plan, const std::string& command, const RunLog& log) {
  return {{"tool", "patrolsim"},
          {"version", PATROLSIM_VERSION},
          {"command", command},
          {"created_utc", utc_timestamp()},
          {"seed", plan.seed},
          {"seed_derivation", "splitmix64(master ^ splitmix64(fnv1a64(\"<City>/<year>/<month>/<mode>/r<rep>/<stream>\")))"},
          {"config_checksum", hex64(plan.config_checksum)},
          {"replicates", plan.replicates},
          {"months", plan.months},
          {"sim",
           {{"n_officers", plan.sim.n_officers},
            {"radius_ft", plan.sim.radius_ft},
            {"p_officer", plan.sim.p_officer},
            {"reporting_prob", plan.sim.reporting_prob},
            {"expected_value", plan.sim.expected_value}}},
          {"train",
           {{"epochs", plan.train.epochs},
            {"batch_size", plan.train.batch_size},
            {"lr", plan.train.lr},
            {"beta1", plan.train.beta1},
            {"beta2", plan.train.beta2},
            {"latent_dim", plan.train.latent_dim}}},
          {"data", log.data},
          {"runs", log.runs},
          {"warnings", log.warnings},
          {"failures", log.failures},
          {"outputs", log.outputs}};
}

// --- subcommands --------------------------------------------------------------

/// Which stages a subcommand runs.
struct Stages {
  bool ingest = false;
  bool grid = false;
  bool sensitivity = false;
  bool debias = false;
  bool stats = false;
  bool plots = false;
};

inline Stages stages_for(std::string_view command) {
  Stages s;
  if (command == "ingest") s.ingest = true;
  if (command == "grid") s.grid = true;
  if (command == "sensitivity") s.sensitivity = true;
  if (command == "debias") s.debias = true;
  if (command == "stats") s.stats = true;
  if (command == "plots") s.plots = true;
  if (command == "all") s = {true, true, true, true, true, true};
  return s;
}

/// Years each configured city is used for, in first-use order.
inline std::vector<std::pair<City, int>> referenced_city_years(const ExperimentPlan& plan) {
  std::vector<std::pair<City, int>> out;
  auto add = [&](City c, int y) {
    if (std::find(out.begin(), out.end(), std::make_pair(c, y)) == out.end()) out.emplace_back(c, y);
  };
  for (const auto& c : plan.cells) add(c.city, c.year);
  for (const auto& s : plan.sensitivity) add(s.base.city, s.base.year);
  if (plan.debias) add(plan.debias->city, plan.debias->year);
  return out;
}

inline void run_ingest(const ExperimentPlan& plan, DataRepository& repo, RunLog& log) {
  const fs::path out = fs::path(plan.output_dir) / "ingest";
  for (const auto& [city, year] : referenced_city_years(plan)) {
    auto data = repo.get(city, year);
    record_data(log, *data);
    const std::string stem = std::string(to_string(city)) + "_" + std::to_string(year);
    std::string text = "id,city,year,month,lat,lon,type,neighborhood_id\n";
    for (const auto& inc : data->incidents) {
      text += csv::row({inc.id, std::string(to_string(inc.city)), std::to_string(inc.timestamp.year),
                        std::to_string(inc.timestamp.month), csv::num(inc.location.lat), csv::num(inc.location.lon),
                        inc.crime_type, inc.neighborhood_id.value_or("")});
    }
    write_text(out / ("incidents_" + stem + ".csv"), text);
    log.outputs.push_back((out / ("incidents_" + stem + ".csv")).string());
    const auto& ds = plan.datasets.at(city);
    if (ds.source == DatasetSpec::Source::Synthetic) {
      SyntheticCityConfig cfg = ds.synthetic;
      cfg.city = city;
      cfg.year = year;
      const auto sc = make_synthetic_city(cfg);
      const fs::path raw = out / (stem + "_raw");
      write_text(raw / "crimes.csv", synthetic_crimes_csv(sc));
      write_text(raw / "boundaries.geojson", neighborhoods_geojson(sc.neighborhoods));
      write_text(raw / "demographics.csv", demographics_csv(sc.neighborhoods));
      log.outputs.push_back(raw.string());
    }
  }
  write_text(out / "ingest_report.json", log.data.dump(2) + "\n");
  log.outputs.push_back((out / "ingest_report.json").string());
}

/// Runs the stages of `command` and writes their outputs under
/// plan.output_dir. Returns the CLI exit code (0 or 3); config and data
/// errors propagate as exceptions.
inline int run_command(const ExperimentPlan& plan, std::string_view command, RunLog& log,
                       const std::optional<std::string>& only = std::nullopt) {
  const Stages st = stages_for(command);
  const fs::path out(plan.output_dir);
  validate_data_paths(plan);
  DataRepository repo(plan);
  bool wrote_anything = false;
  auto emit = [&](const std::string& name, const std::string& text) {
    write_text(out / name, text);
    log.outputs.push_back((out / name).string());
    wrote_anything = true;
  };

  if (st.ingest && !referenced_city_years(plan).empty()) {
    run_ingest(plan, repo, log);
    wrote_anything = true;
  }

  std::optional<GridResult> grid;
  const bool need_grid = st.grid || (st.stats && (command == "all" || !fs::exists(out / "neighborhoods.csv")));
  if (need_grid && !plan.cells.empty()) {
    grid = run_grid(plan, repo, log, only);
    const auto dataset = neighborhood_dataset(plan, repo, grid->runs);
    if (st.grid) {
      emit("monthly.csv", monthly_csv(grid->monthly));
      emit("annual.csv", annual_csv(grid->annual));
    }
    emit("neighborhoods.csv", neighborhoods_csv(dataset.observations));
    if (dataset.zero_crime_dropped > 0) {
      log.info.push_back(std::to_string(dataset.zero_crime_dropped) + " zero-crime neighborhood units excluded");
    }
  }

  if (st.sensitivity && !plan.sensitivity.empty()) {
    std::string text = kSensitivityHeader;
    for (const auto& sp : plan.sensitivity) {
      for (const auto& row : run_sensitivity(plan, sp, repo, log)) text += sensitivity_csv_row(row);
    }
    emit("sensitivity.csv", text);
  }

  if (st.debias && plan.debias) {
    try {
      emit("debias.csv", debias_csv(run_debias_experiment(plan, repo, log)));
    } catch (const RunError& e) {
      log.failures.push_back(std::string("debias: ") + e.what());
    } catch (const DataError& e) {
      log.failures.push_back(std::string("debias: ") + e.what());
    }
  }

  if (st.stats && (grid || fs::exists(out / "neighborhoods.csv"))) {
    const auto obs = read_neighborhoods_csv(csv::read_file((out / "neighborhoods.csv").string()));
    const auto s = run_stats(obs, plan.standardize_covariates, log);
    if (s.fit) emit("regression.csv", regression_csv(*s.fit));
    emit("correlations.csv", correlations_csv(s.correlations));
    if (s.fit) {
      log.info.push_back("regression: n = " + std::to_string(s.fit->n) + ", R^2 = " + csv::num(s.fit->r_squared));
    }
  }

  if (st.plots && fs::exists(out / "monthly.csv")) {
    std::optional<std::string> hoods;
    if (fs::exists(out / "neighborhoods.csv")) hoods = csv::read_file((out / "neighborhoods.csv").string());
    for (const auto& p : emit_plots(csv::read_file((out / "monthly.csv").string()), hoods, out / "plots",
                                    plan.dir_y_max, log)) {
      log.outputs.push_back(p);
      wrote_anything = true;
    }
  } else if (st.plots && command == "plots") {
    log.warnings.push_back("plots: " + (out / "monthly.csv").string() + " not found; run grid first");
  }

  if (wrote_anything) write_text(out / "manifest.json", manifest_json(plan, std::string(command), log).dump(2) + "\n");
  return log.failures.empty() ? 0 : 3;
}

}  // namespace patrolsim
