#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "patrolsim/csv.hpp"
#include "patrolsim/error.hpp"
#include "patrolsim/ingest.hpp"
#include "patrolsim/metrics.hpp"
#include "patrolsim/simulate.hpp"

namespace patrolsim {

// --- distributions ------------------------------------------------------------

namespace detail {

// Continued fraction for the incomplete beta function (modified Lentz).
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

/// P(|T| >= |t|) for Student-t with `dof` degrees of freedom.
inline double student_t_two_sided_p(double t, double dof) {
  if (!(dof >= 1.0)) throw std::invalid_argument("student_t: dof must be >= 1");
  if (std::isinf(t)) return 0.0;
  return incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t));
}

inline double student_t_cdf(double t, double dof) {
  const double tail = 0.5 * student_t_two_sided_p(t, dof);
  return t >= 0.0 ? 1.0 - tail : tail;
}

// --- correlation --------------------------------------------------------------

struct Correlation {
  double r = kUndefined;
  double p = kUndefined;
  bool defined = false;
};

namespace detail {

inline Correlation correlation_with_p(double r, std::size_t n) {
  Correlation c;
  c.r = std::clamp(r, -1.0, 1.0);
  c.defined = true;
  const double dof = static_cast<double>(n) - 2.0;
  if (std::abs(c.r) >= 1.0) {
    c.p = 0.0;
  } else {
    c.p = student_t_two_sided_p(c.r * std::sqrt(dof / (1.0 - c.r * c.r)), dof);
  }
  return c;
}

}  // namespace detail

/// Product-moment correlation with a t-based two-sided p-value. Undefined for
/// n < 3 or a constant input.
inline Correlation pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
  const std::size_t n = x.size();
  if (n < 3) return {};
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return {};
  return detail::correlation_with_p(sxy / std::sqrt(sxx * syy), n);
}

/// 1-based ranks; ties get the mean of the ranks they span.
inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double mean_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
    i = j + 1;
  }
  return ranks;
}

inline Correlation spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

// --- OLS ----------------------------------------------------------------------

struct OlsFit {
  std::vector<double> coefficients;
  std::vector<double> std_errors;
  std::vector<double> t_stats;
  std::vector<double> p_values;
  double r_squared = kUndefined;
  std::size_t dof = 0;
  std::size_t n = 0;
  std::vector<double> residuals;
};

/// Least squares through a Householder QR of the column-normalized design.
/// Throws DataError naming the first column whose normalized pivot falls
/// below `rank_tol`.
inline OlsFit ols_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double rank_tol = 1e-10) {
  const Eigen::Index n = X.rows(), p = X.cols();
  if (y.size() != n) throw std::invalid_argument("ols_fit: X and y row counts differ");
  if (n <= p) throw DataError("ols_fit: need more observations than columns");

  Eigen::VectorXd scale(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    scale(j) = X.col(j).norm();
    if (scale(j) == 0.0) throw DataError("ols_fit: rank deficient at column " + std::to_string(j));
  }
  Eigen::MatrixXd A = X * scale.cwiseInverse().asDiagonal();
  Eigen::VectorXd b = y;

  for (Eigen::Index k = 0; k < p; ++k) {
    auto col = A.col(k).tail(n - k);
    const double norm = col.norm();
    if (norm < rank_tol) throw DataError("ols_fit: rank deficient at column " + std::to_string(k));
    const double alpha = col(0) > 0.0 ? -norm : norm;
    Eigen::VectorXd v = col;
    v(0) -= alpha;
    const double vnorm2 = v.squaredNorm();
    if (vnorm2 > 0.0) {
      for (Eigen::Index j = k; j < p; ++j) {
        auto cj = A.col(j).tail(n - k);
        cj -= (2.0 * v.dot(cj) / vnorm2) * v;
      }
      auto bt = b.tail(n - k);
      bt -= (2.0 * v.dot(bt) / vnorm2) * v;
    }
    if (std::abs(A(k, k)) < rank_tol) throw DataError("ols_fit: rank deficient at column " + std::to_string(k));
  }
  const Eigen::MatrixXd R = A.topRows(p).triangularView<Eigen::Upper>();
  const Eigen::VectorXd beta_n = R.triangularView<Eigen::Upper>().solve(b.head(p));
  const Eigen::VectorXd beta = beta_n.cwiseQuotient(scale);

  OlsFit fit;
  fit.n = static_cast<std::size_t>(n);
  fit.dof = static_cast<std::size_t>(n - p);
  const Eigen::VectorXd resid = y - X * beta;
  const double rss = resid.squaredNorm();
  const double sigma2 = rss / static_cast<double>(fit.dof);
  const double tss = (y.array() - y.mean()).square().sum();
  fit.r_squared = tss > 0.0 ? 1.0 - rss / tss : kUndefined;

  const Eigen::MatrixXd Rinv = R.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(p, p));
  const Eigen::MatrixXd cov_n = Rinv * Rinv.transpose();
  for (Eigen::Index j = 0; j < p; ++j) {
    const double se = std::sqrt(sigma2 * cov_n(j, j)) / scale(j);
    const double t = se > 0.0 ? beta(j) / se : (beta(j) == 0.0 ? 0.0 : INFINITY);
    fit.coefficients.push_back(beta(j));
    fit.std_errors.push_back(se);
    fit.t_stats.push_back(t);
    fit.p_values.push_back(student_t_two_sided_p(t, static_cast<double>(fit.dof)));
  }
  fit.residuals.assign(resid.data(), resid.data() + resid.size());
  return fit;
}

inline std::string significance_stars(double p) {
  if (p < 0.001) return "***";
  if (p < 0.01) return "**";
  if (p < 0.05) return "*";
  return "";
}

// --- neighborhood dataset -----------------------------------------------------

struct NeighborhoodObservation {
  std::string neighborhood_id;
  City city = City::Baltimore;
  int year = 0;
  SimMode mode = SimMode::Detected;
  std::size_t crimes = 0;
  double detection_rate = 0.0;
  double pct_black = 0.0;
  double pct_white = 0.0;
  double median_income = 0.0;
  double poverty_rate = 0.0;
};

struct NeighborhoodDataset {
  std::vector<NeighborhoodObservation> observations;
  std::size_t zero_crime_dropped = 0;
};

/// One observation per (neighborhood, city, year, mode), pooling months and
/// replicates. `hoods` lists every candidate unit per city; units without
/// crimes are counted in `zero_crime_dropped`.
inline NeighborhoodDataset build_neighborhood_dataset(
    std::span<const MonthRunResult> runs, const std::map<City, const std::vector<Neighborhood>*>& hoods) {
  using Key = std::tuple<City, int, SimMode, std::string>;
  std::map<Key, std::pair<double, std::size_t>> pooled;
  std::map<std::tuple<City, int, SimMode>, bool> cells;
  for (const auto& run : runs) {
    cells[{run.key.city, run.key.year, run.key.mode}] = true;
    for (const auto& o : run.outcomes) {
      auto& acc = pooled[{run.key.city, run.key.year, run.key.mode, o.neighborhood_id}];
      acc.first += run.expected_value ? o.detection_prob : (o.detected ? 1.0 : 0.0);
      ++acc.second;
    }
  }
  NeighborhoodDataset out;
  for (const auto& [cell, _] : cells) {
    const auto& [city, year, mode] = cell;
    auto it = hoods.find(city);
    if (it == hoods.end()) continue;
    for (const auto& h : *it->second) {
      auto p = pooled.find({city, year, mode, h.id});
      if (p == pooled.end() || p->second.second == 0) {
        ++out.zero_crime_dropped;
        continue;
      }
      out.observations.push_back({h.id, city, year, mode, p->second.second,
                                  p->second.first / static_cast<double>(p->second.second), h.pct_black, h.pct_white,
                                  h.median_income, h.poverty_rate});
    }
  }
  return out;
}

inline constexpr std::array<const char*, 4> kRegressionTerms{"Intercept", "%Black", "MedianIncome", "PovertyRate"};

/// detection_rate ~ 1 + pct_black + median_income + poverty_rate. With
/// `standardize`, the three covariates are z-scored first.
inline OlsFit fit_detection_model(std::span<const NeighborhoodObservation> obs, bool standardize = false) {
  const auto n = static_cast<Eigen::Index>(obs.size());
  Eigen::MatrixXd X(n, 4);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& o = obs[static_cast<std::size_t>(i)];
    X(i, 0) = 1.0;
    X(i, 1) = o.pct_black;
    X(i, 2) = o.median_income;
    X(i, 3) = o.poverty_rate;
    y(i) = o.detection_rate;
  }
  if (standardize && n > 1) {
    for (Eigen::Index j = 1; j < 4; ++j) {
      const double mean = X.col(j).mean();
      const double sd = std::sqrt((X.col(j).array() - mean).square().sum() / static_cast<double>(n - 1));
      if (sd > 0.0) X.col(j) = (X.col(j).array() - mean) / sd;
    }
  }
  return ols_fit(X, y);
}

inline std::string regression_csv(const OlsFit& fit) {
  std::string out = "variable,coefficient,se,t,p,stars\n";
  for (std::size_t j = 0; j < fit.coefficients.size() && j < kRegressionTerms.size(); ++j) {
    out += csv::row({kRegressionTerms[j], csv::num(fit.coefficients[j]), csv::num(fit.std_errors[j]),
                     csv::num(fit.t_stats[j]), csv::num(fit.p_values[j]), significance_stars(fit.p_values[j])});
  }
  return out;
}

struct PredictorCorrelation {
  std::string predictor;
  Correlation pearson;
  Correlation spearman;
  std::size_t n = 0;
};

inline std::vector<PredictorCorrelation> predictor_correlations(std::span<const NeighborhoodObservation> obs) {
  std::vector<double> rate, black, white, income, poverty;
  for (const auto& o : obs) {
    rate.push_back(o.detection_rate);
    black.push_back(o.pct_black);
    white.push_back(o.pct_white);
    income.push_back(o.median_income);
    poverty.push_back(o.poverty_rate);
  }
  std::vector<PredictorCorrelation> out;
  auto add = [&](const char* name, const std::vector<double>& x) {
    out.push_back({name, pearson(x, rate), spearman(x, rate), obs.size()});
  };
  add("%Black", black);
  add("%White", white);
  add("MedianIncome", income);
  add("PovertyRate", poverty);
  return out;
}

inline std::string correlations_csv(std::span<const PredictorCorrelation> rows) {
  std::string out = "predictor,pearson_r,pearson_p,spearman_rho,spearman_p,n\n";
  for (const auto& r : rows) {
    out += csv::row({r.predictor, csv::num(r.pearson.r), csv::num(r.pearson.p), csv::num(r.spearman.r),
                     csv::num(r.spearman.p), std::to_string(r.n)});
  }
  return out;
}

inline std::string neighborhoods_csv(std::span<const NeighborhoodObservation> obs) {
  std::string out = "neighborhood_id,city,year,mode,crimes,detection_rate,pct_black,pct_white,median_income,poverty_rate\n";
  for (const auto& o : obs) {
    out += csv::row({o.neighborhood_id, std::string(to_string(o.city)), std::to_string(o.year),
                     std::string(to_string(o.mode)), std::to_string(o.crimes), csv::num(o.detection_rate),
                     csv::num(o.pct_black), csv::num(o.pct_white), csv::num(o.median_income),
                     csv::num(o.poverty_rate)});
  }
  return out;
}

}  // namespace patrolsim
