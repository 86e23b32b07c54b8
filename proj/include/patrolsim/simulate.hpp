#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "patrolsim/csv.hpp"
#include "patrolsim/error.hpp"
#include "patrolsim/gan.hpp"
#include "patrolsim/geodata.hpp"
#include "patrolsim/groups.hpp"
#include "patrolsim/ingest.hpp"
#include "patrolsim/rng.hpp"

namespace patrolsim {

enum class SimMode { Detected, Reported };

inline std::string_view to_string(SimMode m) { return m == SimMode::Detected ? "detected" : "reported"; }

inline std::optional<SimMode> parse_mode(std::string_view s) {
  if (s == "detected" || s == "det") return SimMode::Detected;
  if (s == "reported" || s == "rep") return SimMode::Reported;
  return std::nullopt;
}

/// How reported mode turns citizen reports into detections.
enum class ReportedSemantics {
  PatrolFromReports,   // patrols sit at reported-crime locations, Noisy-OR as usual
  ReportIsDetection,   // a report is itself the detection
};

struct SimConfig {
  int n_officers = 60;
  double radius_ft = 700.0;
  double p_officer = 0.85;
  double reporting_prob = 0.521;
  SimMode mode = SimMode::Detected;
  std::uint64_t seed = 0;
  ReportedSemantics reported_semantics = ReportedSemantics::PatrolFromReports;
  /// Rates use detection probabilities instead of Bernoulli draws.
  bool expected_value = false;

  void validate() const {
    if (n_officers < 1) throw ConfigError("n_officers must be >= 1");
    if (!(radius_ft > 0.0)) throw ConfigError("radius_ft must be positive");
    if (!(p_officer > 0.0 && p_officer <= 1.0)) throw ConfigError("p_officer must be in (0, 1]");
    if (!(reporting_prob > 0.0 && reporting_prob <= 1.0)) throw ConfigError("reporting_prob must be in (0, 1]");
  }
};

/// Identifies one month-run; also the label every RNG stream is derived from.
struct RunKey {
  City city = City::Baltimore;
  int year = 0;
  int month = 0;
  SimMode mode = SimMode::Detected;
  int replicate = 0;

  std::string label() const {
    return std::string(to_string(city)) + "/" + std::to_string(year) + "/" + std::to_string(month) + "/" +
           std::string(to_string(mode)) + "/r" + std::to_string(replicate);
  }
  std::uint64_t stream(std::uint64_t master, std::string_view purpose) const {
    return derive_seed(master, label() + "/" + std::string(purpose));
  }
};

struct DetectionOutcome {
  std::string incident_id;
  std::string neighborhood_id;
  RaceGroup group = RaceGroup::Black;
  std::size_t k = 0;  // officers within radius
  double detection_prob = 0.0;
  bool detected = false;
  std::optional<bool> reported;
};

struct MonthRunResult {
  RunKey key;
  std::uint64_t seed = 0;
  std::vector<DetectionOutcome> outcomes;
  std::vector<LatLon> patrols;
  std::array<std::size_t, kGroupCount> group_counts{};
  bool expected_value = false;
  std::optional<LossHistory> gan;
};

using NeighborhoodLookup = std::unordered_map<std::string, const Neighborhood*>;

inline NeighborhoodLookup make_lookup(const std::vector<Neighborhood>& hoods) {
  NeighborhoodLookup out;
  for (const auto& h : hoods) out.emplace(h.id, &h);
  return out;
}

/// Categorical draw from the incident's neighborhood shares.
inline RaceGroup assign_race(const CrimeIncident& incident, const NeighborhoodLookup& hoods, Rng& rng) {
  if (!incident.neighborhood_id) throw DataError("assign_race: incident '" + incident.id + "' has no neighborhood");
  auto it = hoods.find(*incident.neighborhood_id);
  if (it == hoods.end()) throw DataError("assign_race: unknown neighborhood '" + *incident.neighborhood_id + "'");
  const Neighborhood& h = *it->second;
  const double u = uniform01(rng);
  if (u < h.pct_black) return RaceGroup::Black;
  if (u < h.pct_black + h.pct_white) return RaceGroup::White;
  if (h.pct_neither > 0.0) return RaceGroup::Neither;
  return h.pct_white > 0.0 ? RaceGroup::White : RaceGroup::Black;
}

/// 1 - (1 - p)^k.
inline double noisy_or(std::size_t k, double p_officer) {
  return 1.0 - std::pow(1.0 - p_officer, static_cast<double>(k));
}

inline double noisy_or_probability(const LatLon& crime, const GridIndex& patrols, double radius_ft,
                                   double p_officer) {
  return noisy_or(patrols.count_within(crime, radius_ft), p_officer);
}

/// Race assignment plus Noisy-OR detection for every crime of the slice
/// against a fixed patrol set. One race draw and one detection draw per crime,
/// in incident order, so outcomes are monotone in the patrol set.
inline MonthRunResult evaluate_patrols(const MonthSlice& slice, const NeighborhoodLookup& hoods,
                                       std::vector<LatLon> patrols, const SimConfig& cfg, const RunKey& key,
                                       std::span<const std::optional<bool>> reported = {}) {
  MonthRunResult res;
  res.key = key;
  res.seed = cfg.seed;
  res.expected_value = cfg.expected_value;
  Rng race_rng(key.stream(cfg.seed, "race"));
  Rng detect_rng(key.stream(cfg.seed, "detect"));
  const GridIndex index(patrols, cfg.radius_ft, points_box(patrols));

  const bool report_is_detection = cfg.mode == SimMode::Reported &&
                                   cfg.reported_semantics == ReportedSemantics::ReportIsDetection;
  res.outcomes.reserve(slice.incidents.size());
  for (std::size_t i = 0; i < slice.incidents.size(); ++i) {
    const auto& inc = slice.incidents[i];
    DetectionOutcome o;
    o.incident_id = inc.id;
    o.neighborhood_id = inc.neighborhood_id.value_or("");
    o.group = assign_race(inc, hoods, race_rng);
    const double u = uniform01(detect_rng);
    if (i < reported.size()) o.reported = reported[i];
    if (report_is_detection) {
      o.detection_prob = cfg.reporting_prob;
      o.detected = o.reported.value_or(false);
    } else {
      o.k = index.count_within(inc.location, cfg.radius_ft);
      o.detection_prob = noisy_or(o.k, cfg.p_officer);
      o.detected = u < o.detection_prob;
    }
    ++res.group_counts[index_of(o.group)];
    res.outcomes.push_back(std::move(o));
  }
  res.patrols = std::move(patrols);
  return res;
}

/// Trains the month's GAN on the slice's crime locations.
inline std::pair<GanModel, LossHistory> train_month_gan(const MonthSlice& slice, TrainConfig gan_cfg,
                                                        const SimConfig& sim_cfg, const RunKey& key,
                                                        const BoundingBox& bbox) {
  gan_cfg.seed = key.stream(sim_cfg.seed, "gan");
  const auto locations = slice.locations();
  return train_gan(locations, gan_cfg, bbox);
}

inline std::vector<LatLon> draw_patrols(GanModel& model, const SimConfig& cfg, const RunKey& key) {
  Rng rng(key.stream(cfg.seed, "patrol"));
  return sample_patrol(model, static_cast<std::size_t>(cfg.n_officers), rng);
}

inline RunKey key_for(const MonthSlice& slice, SimMode mode, int replicate) {
  return {slice.city, slice.year, slice.month, mode, replicate};
}

/// Detected mode: patrols come entirely from the GAN trained on this month.
inline MonthRunResult run_month_detected(const MonthSlice& slice, const NeighborhoodLookup& hoods,
                                         const TrainConfig& gan_cfg, SimConfig sim_cfg, const BoundingBox& bbox,
                                         int replicate = 0) {
  sim_cfg.validate();
  sim_cfg.mode = SimMode::Detected;
  if (slice.incidents.empty()) throw DataError("run_month_detected: empty slice");
  const RunKey key = key_for(slice, SimMode::Detected, replicate);
  auto [model, hist] = train_month_gan(slice, gan_cfg, sim_cfg, key, bbox);
  auto res = evaluate_patrols(slice, hoods, draw_patrols(model, sim_cfg, key), sim_cfg, key);
  res.gan = std::move(hist);
  return res;
}

/// Each crime is reported with `reporting_prob` (one draw per crime, in order).
inline std::vector<std::optional<bool>> draw_reports(std::size_t n, const SimConfig& cfg, const RunKey& key) {
  Rng rng(key.stream(cfg.seed, "report"));
  std::vector<std::optional<bool>> out(n);
  for (auto& r : out) r = bernoulli(rng, cfg.reporting_prob);
  return out;
}

/// Patrols at up to n_officers reported-crime locations, drawn without replacement.
inline std::vector<LatLon> patrols_from_reports(const MonthSlice& slice, std::span<const std::optional<bool>> reported,
                                                const SimConfig& cfg, const RunKey& key) {
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < reported.size(); ++i) {
    if (reported[i].value_or(false)) candidates.push_back(i);
  }
  Rng rng(key.stream(cfg.seed, "patrol"));
  std::vector<LatLon> out;
  for (std::size_t j : sample_without_replacement(candidates.size(), static_cast<std::size_t>(cfg.n_officers), rng)) {
    out.push_back(slice.incidents[candidates[j]].location);
  }
  return out;
}

/// Reported mode: citizen reports seed the patrol placement.
inline MonthRunResult run_month_reported(const MonthSlice& slice, const NeighborhoodLookup& hoods, SimConfig sim_cfg,
                                         int replicate = 0) {
  sim_cfg.validate();
  sim_cfg.mode = SimMode::Reported;
  if (slice.incidents.empty()) throw DataError("run_month_reported: empty slice");
  const RunKey key = key_for(slice, SimMode::Reported, replicate);
  const auto reported = draw_reports(slice.incidents.size(), sim_cfg, key);
  std::vector<LatLon> patrols;
  if (sim_cfg.reported_semantics == ReportedSemantics::PatrolFromReports) {
    patrols = patrols_from_reports(slice, reported, sim_cfg, key);
  }
  return evaluate_patrols(slice, hoods, std::move(patrols), sim_cfg, key, reported);
}

inline MonthRunResult run_month(const MonthSlice& slice, const NeighborhoodLookup& hoods, const TrainConfig& gan_cfg,
                                const SimConfig& sim_cfg, const BoundingBox& bbox, int replicate = 0) {
  return sim_cfg.mode == SimMode::Detected ? run_month_detected(slice, hoods, gan_cfg, sim_cfg, bbox, replicate)
                                           : run_month_reported(slice, hoods, sim_cfg, replicate);
}

// --- serialization ------------------------------------------------------------

inline std::string outcomes_csv(const MonthRunResult& r) {
  std::string out = "id,group,k,prob,detected\n";
  for (const auto& o : r.outcomes) {
    out += csv::row({o.incident_id, std::string(to_string(o.group)), std::to_string(o.k), csv::num(o.detection_prob),
                     o.detected ? "1" : "0"});
  }
  return out;
}

inline nlohmann::json summary_json(const MonthRunResult& r) {
  std::array<std::size_t, kGroupCount> detected{};
  std::size_t reported = 0;
  for (const auto& o : r.outcomes) {
    if (o.detected) ++detected[index_of(o.group)];
    if (o.reported.value_or(false)) ++reported;
  }
  nlohmann::json groups = nlohmann::json::object();
  for (RaceGroup g : kAllGroups) {
    groups[std::string(to_string(g))] = {{"total", r.group_counts[index_of(g)]},
                                         {"detected", detected[index_of(g)]}};
  }
  nlohmann::json j = {{"city", to_string(r.key.city)},
                      {"year", r.key.year},
                      {"month", r.key.month},
                      {"mode", to_string(r.key.mode)},
                      {"replicate", r.key.replicate},
                      {"seed", r.seed},
                      {"incidents", r.outcomes.size()},
                      {"patrols", r.patrols.size()},
                      {"reported", reported},
                      {"groups", groups}};
  if (r.gan) {
    j["gan"] = {{"final_g_loss", r.gan->g_loss.empty() ? 0.0 : r.gan->g_loss.back()},
                {"final_d_loss", r.gan->d_loss.empty() ? 0.0 : r.gan->d_loss.back()},
                {"spread_ratio", r.gan->spread_ratio}};
  }
  return j;
}

}  // namespace patrolsim
