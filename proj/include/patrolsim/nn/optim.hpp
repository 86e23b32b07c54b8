#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "patrolsim/nn/layers.hpp"

namespace patrolsim::nn {

inline constexpr double kProbClamp = 1e-7;

struct LossGrad {
  double loss = 0.0;
  Matrix grad;  // d loss / d predictions
};

/// Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7].
inline LossGrad bce_loss(const Matrix& predictions, const Matrix& targets) {
  require_shape(predictions.rows() == targets.rows() && predictions.cols() == targets.cols(), "bce targets");
  const double n = static_cast<double>(predictions.size());
  LossGrad out;
  out.grad.resize(predictions.rows(), predictions.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < predictions.size(); ++i) {
    const double p = std::clamp(predictions.data()[i], kProbClamp, 1.0 - kProbClamp);
    const double t = targets.data()[i];
    total += t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    out.grad.data()[i] = (-(t / p) + (1.0 - t) / (1.0 - p)) / n;
  }
  out.loss = -total / n;
  return out;
}

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias-corrected moments. Moment buffers are bound to the order
/// of the parameter list on first use.
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void step(std::span<const ParamRef> params) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
        v_.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
      }
    }
    if (m_.size() != params.size()) throw std::invalid_argument("adam: parameter list changed");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Matrix& w = *params[i].value;
      const Matrix& g = *params[i].grad;
      require_shape(g.rows() == w.rows() && g.cols() == w.cols() && m_[i].rows() == w.rows() &&
                        m_[i].cols() == w.cols(),
                    "adam parameter");
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      w.array() -= cfg_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.epsilon);
    }
  }

  const AdamConfig& config() const { return cfg_; }
  long long steps() const { return t_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }

  void restore(long long t, std::vector<Matrix> m, std::vector<Matrix> v) {
    if (m.size() != v.size()) throw std::invalid_argument("adam: moment count mismatch");
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  AdamConfig cfg_;
  long long t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

}  // namespace patrolsim::nn
