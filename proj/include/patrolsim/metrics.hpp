#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "patrolsim/csv.hpp"
#include "patrolsim/groups.hpp"
#include "patrolsim/simulate.hpp"

namespace patrolsim {

inline constexpr double kUndefined = std::numeric_limits<double>::quiet_NaN();

/// Detected weight and crime count per group. The weight is a count of
/// Bernoulli detections, or a sum of probabilities in expected-value mode.
struct GroupRates {
  std::array<double, kGroupCount> detected{};
  std::array<std::size_t, kGroupCount> total{};

  bool defined(RaceGroup g) const { return total[index_of(g)] > 0; }

  /// detected / total, or nullopt when the group is absent.
  std::optional<double> rate(RaceGroup g) const {
    if (!defined(g)) return std::nullopt;
    return detected[index_of(g)] / static_cast<double>(total[index_of(g)]);
  }

  double rate_or_nan(RaceGroup g) const { return rate(g).value_or(kUndefined); }
};

inline GroupRates group_rates(std::span<const DetectionOutcome> outcomes, bool expected_value = false) {
  GroupRates r;
  for (const auto& o : outcomes) {
    const auto g = index_of(o.group);
    ++r.total[g];
    r.detected[g] += expected_value ? o.detection_prob : (o.detected ? 1.0 : 0.0);
  }
  return r;
}

inline GroupRates group_rates(const MonthRunResult& run) { return group_rates(run.outcomes, run.expected_value); }

enum class DirFlag { Finite, Infinite, Undefined };

inline std::string_view to_string(DirFlag f) {
  switch (f) {
    case DirFlag::Finite:
      return "finite";
    case DirFlag::Infinite:
      return "infinite";
    case DirFlag::Undefined:
      return "undefined";
  }
  return "?";
}

struct DirValue {
  DirFlag flag = DirFlag::Undefined;
  double value = kUndefined;  // set only when finite

  bool finite() const { return flag == DirFlag::Finite; }
};

/// P(detected | Black) / P(detected | White). A zero White rate is flagged
/// infinite (Black > 0) or undefined (Black = 0); a missing group is undefined.
inline DirValue disparate_impact_ratio(std::optional<double> black, std::optional<double> white) {
  if (!black || !white) return {};
  if (*white > 0.0) return {DirFlag::Finite, *black / *white};
  if (*black > 0.0) return {DirFlag::Infinite, kUndefined};
  return {};
}

inline DirValue disparate_impact_ratio(const GroupRates& r) {
  return disparate_impact_ratio(r.rate(RaceGroup::Black), r.rate(RaceGroup::White));
}

/// Black rate minus White rate; NaN when either is absent.
inline double parity_gap(std::optional<double> black, std::optional<double> white) {
  if (!black || !white) return kUndefined;
  return *black - *white;
}

inline double parity_gap(const GroupRates& r) {
  return parity_gap(r.rate(RaceGroup::Black), r.rate(RaceGroup::White));
}

/// sum_i sum_j |r_i - r_j| / (2 n sum_i r_i), computed on sorted rates in
/// O(n log n). All-zero input gives 0; empty input gives NaN.
inline double gini(std::span<const double> rates) {
  const std::size_t n = rates.size();
  if (n == 0) return kUndefined;
  std::vector<double> s(rates.begin(), rates.end());
  std::sort(s.begin(), s.end());
  const double total = std::accumulate(s.begin(), s.end(), 0.0);
  if (total == 0.0) return 0.0;
  // sum_{i<j} (s_j - s_i) = sum_j s_j (2j - n + 1) over sorted s
  double pair_sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    pair_sum += s[j] * (2.0 * static_cast<double>(j) - static_cast<double>(n) + 1.0);
  }
  return (2.0 * pair_sum) / (2.0 * static_cast<double>(n) * total);
}

/// Gini over the groups whose rates are defined.
inline double gini(const GroupRates& r) {
  std::vector<double> rates;
  for (RaceGroup g : kAllGroups) {
    if (auto v = r.rate(g)) rates.push_back(*v);
  }
  return gini(rates);
}

inline double bias_amplification_score(double gap, double gini_value) { return gap * gini_value; }

struct MonthlyBiasRecord {
  RunKey key;
  GroupRates rates;
  DirValue dir;
  double parity_gap = kUndefined;
  double gini = kUndefined;
  double bas = kUndefined;
};

inline MonthlyBiasRecord bias_record(const RunKey& key, const GroupRates& rates) {
  MonthlyBiasRecord rec;
  rec.key = key;
  rec.rates = rates;
  rec.dir = disparate_impact_ratio(rates);
  rec.parity_gap = parity_gap(rates);
  rec.gini = gini(rates);
  rec.bas = bias_amplification_score(rec.parity_gap, rec.gini);
  return rec;
}

inline MonthlyBiasRecord bias_record(const MonthRunResult& run) { return bias_record(run.key, group_rates(run)); }

/// Annual aggregates: unweighted means over months.
struct AnnualSummary {
  City city = City::Baltimore;
  int year = 0;
  SimMode mode = SimMode::Detected;
  int replicate = 0;
  double avg_dir = kUndefined;  // over finite-DIR months
  double max_dir = kUndefined;
  double avg_parity_gap = kUndefined;
  double avg_gini = kUndefined;
  double avg_bas = kUndefined;
  std::size_t months_dir_above_1 = 0;  // finite DIR > 1, plus infinite-flag months
  std::size_t months_counted = 0;      // months with finite DIR
  std::size_t months_total = 0;        // all records
};

namespace detail {

inline double mean_defined(std::span<const double> xs) {
  double sum = 0.0;
  std::size_t n = 0;
  for (double x : xs) {
    if (std::isnan(x)) continue;
    sum += x;
    ++n;
  }
  return n == 0 ? kUndefined : sum / static_cast<double>(n);
}

}  // namespace detail

inline AnnualSummary annual_summary(std::span<const MonthlyBiasRecord> records) {
  AnnualSummary s;
  if (records.empty()) return s;
  s.city = records.front().key.city;
  s.year = records.front().key.year;
  s.mode = records.front().key.mode;
  s.replicate = records.front().key.replicate;
  s.months_total = records.size();

  std::vector<double> dirs, gaps, ginis, bases;
  for (const auto& r : records) {
    if (r.dir.finite()) {
      dirs.push_back(r.dir.value);
      if (r.dir.value > 1.0) ++s.months_dir_above_1;
    } else if (r.dir.flag == DirFlag::Infinite) {
      ++s.months_dir_above_1;
    }
    gaps.push_back(r.parity_gap);
    ginis.push_back(r.gini);
    bases.push_back(r.bas);
  }
  s.months_counted = dirs.size();
  if (!dirs.empty()) {
    s.avg_dir = std::accumulate(dirs.begin(), dirs.end(), 0.0) / static_cast<double>(dirs.size());
    s.max_dir = *std::max_element(dirs.begin(), dirs.end());
  }
  s.avg_parity_gap = detail::mean_defined(gaps);
  s.avg_gini = detail::mean_defined(ginis);
  s.avg_bas = detail::mean_defined(bases);
  return s;
}

// --- CSV ----------------------------------------------------------------------

inline constexpr const char* kMonthlyHeader =
    "city,year,month,mode,rate_black,rate_white,rate_neither,dir,dir_flag,parity_gap,gini,bas,replicate\n";

inline std::string monthly_csv_row(const MonthlyBiasRecord& r) {
  return csv::row({std::string(to_string(r.key.city)), std::to_string(r.key.year), std::to_string(r.key.month),
                   std::string(to_string(r.key.mode)), csv::num(r.rates.rate_or_nan(RaceGroup::Black)),
                   csv::num(r.rates.rate_or_nan(RaceGroup::White)), csv::num(r.rates.rate_or_nan(RaceGroup::Neither)),
                   csv::num(r.dir.value), std::string(to_string(r.dir.flag)), csv::num(r.parity_gap),
                   csv::num(r.gini), csv::num(r.bas), std::to_string(r.key.replicate)});
}

inline constexpr const char* kAnnualHeader =
    "city,year,mode,avg_dir,max_dir,avg_parity_gap,avg_gini,months_dir_above_1,months_total,avg_bas,"
    "months_dir_finite,replicate\n";

inline std::string annual_csv_row(const AnnualSummary& s) {
  return csv::row({std::string(to_string(s.city)), std::to_string(s.year), std::string(to_string(s.mode)),
                   csv::num(s.avg_dir), csv::num(s.max_dir), csv::num(s.avg_parity_gap), csv::num(s.avg_gini),
                   std::to_string(s.months_dir_above_1), std::to_string(s.months_total), csv::num(s.avg_bas),
                   std::to_string(s.months_counted), std::to_string(s.replicate)});
}

}  // namespace patrolsim
