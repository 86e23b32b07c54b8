#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "patrolsim/rng.hpp"

namespace patrolsim::nn {

/// Row-major float-64 matrix; rows are batch items.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A parameter tensor and the gradient accumulated for it.
struct ParamRef {
  Matrix* value;
  Matrix* grad;
};

/// Per-call forward settings. `rng` is only touched by dropout in training.
struct Pass {
  bool training = false;
  Rng* rng = nullptr;
};

inline void require_shape(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("shape mismatch: ") + what);
}

class Dense {
 public:
  Dense() = default;

  /// Glorot-uniform weights, zero bias.
  Dense(Eigen::Index in, Eigen::Index out, Rng& rng) : weight_(in, out), bias_(Matrix::Zero(1, out)) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    for (Eigen::Index i = 0; i < weight_.size(); ++i) weight_.data()[i] = uniform(rng, -bound, bound);
    zero_grad();
  }

  Dense(Matrix weight, Matrix bias) : weight_(std::move(weight)), bias_(std::move(bias)) {
    require_shape(bias_.rows() == 1 && bias_.cols() == weight_.cols(), "dense bias");
    zero_grad();
  }

  Matrix forward(const Matrix& x, const Pass&) {
    require_shape(x.cols() == weight_.rows(), "dense input width");
    input_ = x;
    Matrix y(x.rows(), weight_.cols());
    y.noalias() = x * weight_;
    y.rowwise() += bias_.row(0);
    return y;
  }

  Matrix backward(const Matrix& g) {
    require_shape(g.rows() == input_.rows() && g.cols() == weight_.cols(), "dense grad_out");
    grad_weight_.noalias() += input_.transpose() * g;
    grad_bias_ += g.colwise().sum();
    Matrix gx(g.rows(), weight_.rows());
    gx.noalias() = g * weight_.transpose();
    return gx;
  }

  void zero_grad() {
    grad_weight_ = Matrix::Zero(weight_.rows(), weight_.cols());
    grad_bias_ = Matrix::Zero(1, bias_.cols());
  }

  void collect(std::vector<ParamRef>& out) {
    out.push_back({&weight_, &grad_weight_});
    out.push_back({&bias_, &grad_bias_});
  }

  Eigen::Index in_features() const { return weight_.rows(); }
  Eigen::Index out_features() const { return weight_.cols(); }
  const Matrix& weight() const { return weight_; }
  const Matrix& bias() const { return bias_; }
  const Matrix& grad_weight() const { return grad_weight_; }
  const Matrix& grad_bias() const { return grad_bias_; }

 private:
  Matrix weight_;
  Matrix bias_;
  Matrix grad_weight_;
  Matrix grad_bias_;
  Matrix input_;
};

/// Batch normalization over the batch dimension. Training normalizes with the
/// biased batch variance and folds the unbiased one into the running stats.
/// A constant feature normalizes to 0 through epsilon.
class BatchNorm {
 public:
  BatchNorm() = default;

  explicit BatchNorm(Eigen::Index width, double momentum = 0.1, double epsilon = 1e-5)
      : gamma_(Matrix::Ones(1, width)),
        beta_(Matrix::Zero(1, width)),
        running_mean_(Matrix::Zero(1, width)),
        running_var_(Matrix::Ones(1, width)),
        momentum_(momentum),
        epsilon_(epsilon) {
    zero_grad();
  }

  Matrix forward(const Matrix& x, const Pass& pass) {
    require_shape(x.cols() == gamma_.cols(), "batchnorm input width");
    const Eigen::Index n = x.rows();
    Matrix mean, var;
    if (pass.training) {
      if (n < 2) throw std::invalid_argument("batchnorm: training needs a batch of at least 2");
      mean = x.colwise().mean();
      Matrix centered = x.rowwise() - mean.row(0);
      var = centered.array().square().colwise().sum().matrix() / static_cast<double>(n);
      running_mean_ = (1.0 - momentum_) * running_mean_ + momentum_ * mean;
      running_var_ = (1.0 - momentum_) * running_var_ +
                     momentum_ * var * (static_cast<double>(n) / static_cast<double>(n - 1));
    } else {
      mean = running_mean_;
      var = running_var_;
    }
    inv_std_ = (var.array() + epsilon_).rsqrt().matrix();
    xhat_ = ((x.rowwise() - mean.row(0)).array().rowwise() * inv_std_.row(0).array()).matrix();
    Matrix y = (xhat_.array().rowwise() * gamma_.row(0).array()).matrix();
    y.rowwise() += beta_.row(0);
    return y;
  }

  // Training-mode gradient; batch statistics are differentiated through.
  Matrix backward(const Matrix& g) {
    require_shape(g.rows() == xhat_.rows() && g.cols() == xhat_.cols(), "batchnorm grad_out");
    const double n = static_cast<double>(g.rows());
    grad_gamma_ += (g.array() * xhat_.array()).colwise().sum().matrix();
    grad_beta_ += g.colwise().sum();
    const Eigen::ArrayXXd dxhat = (g.array().rowwise() * gamma_.row(0).array());
    const Eigen::ArrayXXd sum_d = dxhat.colwise().sum();
    const Eigen::ArrayXXd sum_dx = (dxhat * xhat_.array()).colwise().sum();
    Eigen::ArrayXXd gx = (n * dxhat).rowwise() - sum_d.row(0);
    gx -= xhat_.array().rowwise() * sum_dx.row(0);
    gx.rowwise() *= (inv_std_.row(0).array() / n);
    return gx.matrix();
  }

  void zero_grad() {
    grad_gamma_ = Matrix::Zero(1, gamma_.cols());
    grad_beta_ = Matrix::Zero(1, beta_.cols());
  }

  void collect(std::vector<ParamRef>& out) {
    out.push_back({&gamma_, &grad_gamma_});
    out.push_back({&beta_, &grad_beta_});
  }

  Eigen::Index width() const { return gamma_.cols(); }
  double momentum() const { return momentum_; }
  double epsilon() const { return epsilon_; }
  Matrix& gamma() { return gamma_; }
  Matrix& beta() { return beta_; }
  Matrix& running_mean() { return running_mean_; }
  Matrix& running_var() { return running_var_; }
  const Matrix& gamma() const { return gamma_; }
  const Matrix& beta() const { return beta_; }
  const Matrix& running_mean() const { return running_mean_; }
  const Matrix& running_var() const { return running_var_; }
  const Matrix& grad_gamma() const { return grad_gamma_; }
  const Matrix& grad_beta() const { return grad_beta_; }

 private:
  Matrix gamma_, beta_;
  Matrix grad_gamma_, grad_beta_;
  Matrix running_mean_, running_var_;
  double momentum_ = 0.1;
  double epsilon_ = 1e-5;
  Matrix xhat_, inv_std_;
};

class LeakyRelu {
 public:
  explicit LeakyRelu(double slope = 0.2) : slope_(slope) {}

  Matrix forward(const Matrix& x, const Pass&) {
    input_ = x;
    return x.unaryExpr([s = slope_](double v) { return v >= 0.0 ? v : s * v; });
  }

  Matrix backward(const Matrix& g) const {
    return g.binaryExpr(input_, [s = slope_](double gv, double xv) { return xv >= 0.0 ? gv : s * gv; });
  }

  double slope() const { return slope_; }

 private:
  double slope_;
  Matrix input_;
};

/// Inverted dropout: survivors are scaled by 1/(1-rate) in training, and
/// inference is the identity.
class Dropout {
 public:
  explicit Dropout(double rate = 0.3) : rate_(rate) {
    if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must be in [0, 1)");
  }

  Matrix forward(const Matrix& x, const Pass& pass) {
    if (!pass.training || rate_ == 0.0) {
      mask_.resize(0, 0);
      return x;
    }
    if (pass.rng == nullptr) throw std::invalid_argument("dropout: training pass needs an rng");
    const double keep = 1.0 / (1.0 - rate_);
    mask_.resize(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < mask_.size(); ++i) {
      mask_.data()[i] = uniform01(*pass.rng) < rate_ ? 0.0 : keep;
    }
    return x.cwiseProduct(mask_);
  }

  Matrix backward(const Matrix& g) const {
    if (mask_.size() == 0) return g;
    return g.cwiseProduct(mask_);
  }

  double rate() const { return rate_; }

 private:
  double rate_;
  Matrix mask_;
};

class Tanh {
 public:
  Matrix forward(const Matrix& x, const Pass&) {
    output_ = x.array().tanh().matrix();
    return output_;
  }
  Matrix backward(const Matrix& g) const {
    return (g.array() * (1.0 - output_.array().square())).matrix();
  }

 private:
  Matrix output_;
};

inline double sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

class Sigmoid {
 public:
  Matrix forward(const Matrix& x, const Pass&) {
    output_ = x.unaryExpr([](double v) { return sigmoid(v); });
    return output_;
  }
  Matrix backward(const Matrix& g) const {
    return (g.array() * output_.array() * (1.0 - output_.array())).matrix();
  }

 private:
  Matrix output_;
};

}  // namespace patrolsim::nn
