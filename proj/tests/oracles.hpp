#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

// Literal, unoptimized reference evaluations used to check the library.
namespace oracles {

inline double gini_double_loop(const std::vector<double>& r) {
  const std::size_t n = r.size();
  double num = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sum += r[i];
    for (std::size_t j = 0; j < n; ++j) num += std::abs(r[i] - r[j]);
  }
  if (sum == 0.0) return 0.0;
  return num / (2.0 * static_cast<double>(n) * sum);
}

/// Solves (X^T X) b = X^T y by Gaussian elimination with partial pivoting.
inline Eigen::VectorXd normal_equations(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  const Eigen::Index p = X.cols();
  Eigen::MatrixXd a(p, p + 1);
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < X.rows(); ++k) s += X(k, i) * X(k, j);
      a(i, j) = s;
    }
    double s = 0.0;
    for (Eigen::Index k = 0; k < X.rows(); ++k) s += X(k, i) * y(k);
    a(i, p) = s;
  }
  for (Eigen::Index c = 0; c < p; ++c) {
    Eigen::Index piv = c;
    for (Eigen::Index r = c + 1; r < p; ++r) {
      if (std::abs(a(r, c)) > std::abs(a(piv, c))) piv = r;
    }
    a.row(c).swap(a.row(piv));
    for (Eigen::Index r = c + 1; r < p; ++r) {
      const double f = a(r, c) / a(c, c);
      a.row(r) -= f * a.row(c);
    }
  }
  Eigen::VectorXd b(p);
  for (Eigen::Index r = p - 1; r >= 0; --r) {
    double s = a(r, p);
    for (Eigen::Index c = r + 1; c < p; ++c) s -= a(r, c) * b(c);
    b(r) = s / a(r, r);
  }
  return b;
}

inline double pearson_direct(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / n, my = sy / n;
  double cxy = 0, cxx = 0, cyy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    cxy += (x[i] - mx) * (y[i] - my);
    cxx += (x[i] - mx) * (x[i] - mx);
    cyy += (y[i] - my) * (y[i] - my);
  }
  return cxy / std::sqrt(cxx * cyy);
}

}  // namespace oracles
