#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "patrolsim/nn/network.hpp"

using namespace patrolsim;
using namespace patrolsim::nn;
using gradcheck::random_matrix;

namespace {
const Pass kInfer{false, nullptr};
const Pass kTrainNoRng{true, nullptr};
}  // namespace

TEST(Dense, IdentityAndScalarExamples) {
  Dense id(Matrix::Identity(2, 2), Matrix::Zero(1, 2));
  Matrix x(1, 2);
  x << 3, 4;
  EXPECT_EQ(id.forward(x, kInfer), x);
  Dense scalar(Matrix::Constant(1, 1, 2.0), Matrix::Constant(1, 1, 1.0));
  EXPECT_EQ(scalar.forward(Matrix::Constant(1, 1, 5.0), kInfer)(0, 0), 11.0);
}

TEST(Dense, ShapeMismatchThrows) {
  Rng rng(1);
  Dense d(3, 2, rng);
  EXPECT_THROW(d.forward(Matrix::Zero(4, 2), kInfer), std::invalid_argument);
  EXPECT_THROW(Dense(Matrix::Zero(3, 2), Matrix::Zero(1, 3)), std::invalid_argument);
}

TEST(Dense, GlorotBoundsAndZeroBias) {
  Rng rng(2);
  Dense d(100, 256, rng);
  const double bound = std::sqrt(6.0 / 356.0);
  EXPECT_LE(d.weight().cwiseAbs().maxCoeff(), bound);
  EXPECT_EQ(d.bias().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Dense, FourByThreeGradientCheck) {
  Rng rng(3);
  Dense d(random_matrix(4, 3, rng), random_matrix(1, 3, rng));
  EXPECT_LT(gradcheck::check_layer(d, random_matrix(5, 4, rng), [] { return kInfer; }, rng), 1e-5);
}

TEST(Activations, ScalarExamples) {
  LeakyRelu lr(0.2);
  EXPECT_DOUBLE_EQ(lr.forward(Matrix::Constant(1, 1, -1.0), kInfer)(0, 0), -0.2);
  EXPECT_DOUBLE_EQ(lr.forward(Matrix::Constant(1, 1, 3.0), kInfer)(0, 0), 3.0);
  Sigmoid s;
  EXPECT_DOUBLE_EQ(s.forward(Matrix::Zero(1, 1), kInfer)(0, 0), 0.5);
  Tanh t;
  EXPECT_DOUBLE_EQ(t.forward(Matrix::Zero(1, 1), kInfer)(0, 0), 0.0);
  EXPECT_TRUE(std::isfinite(sigmoid(-1000.0)));
  EXPECT_GT(sigmoid(-700.0), 0.0);
}

TEST(Dropout, InferenceIsIdentityAndRngFree) {
  Dropout d(0.3);
  Rng rng(4);
  const Matrix x = random_matrix(3, 5, rng);
  EXPECT_EQ(d.forward(x, kInfer), x);
  EXPECT_THROW(Dropout(1.0), std::invalid_argument);
  EXPECT_THROW(d.forward(x, kTrainNoRng), std::invalid_argument);
}

TEST(Dropout, InvertedExpectation) {
  Dropout d(0.3);
  Rng rng(5);
  const int n = 10000;
  Matrix sum = Matrix::Zero(1, 4);
  Matrix sq = Matrix::Zero(1, 4);
  for (int i = 0; i < n; ++i) {
    const Matrix y = d.forward(Matrix::Ones(1, 4), Pass{true, &rng});
    sum += y;
    sq += y.cwiseProduct(y);
  }
  for (int c = 0; c < 4; ++c) {
    const double mean = sum(0, c) / n;
    const double var = sq(0, c) / n - mean * mean;
    EXPECT_NEAR(mean, 1.0, 3.0 * std::sqrt(var / n));
  }
}

TEST(BatchNorm, StandardizedInputPassesThrough) {
  Matrix x(4, 2);
  x << -1, 1, 1, -1, -1, -1, 1, 1;  // mean 0, biased var 1
  BatchNorm bn(2);
  const Matrix y = bn.forward(x, kTrainNoRng);
  EXPECT_LT((y - x).cwiseAbs().maxCoeff(), 1e-5);
  EXPECT_LT((y - x).cwiseAbs().maxCoeff() / 1.0, 1e-5);
}

TEST(BatchNorm, NormalizedBatchMoments) {
  Rng rng(6);
  BatchNorm bn(5);
  const Matrix y = bn.forward(random_matrix(32, 5, rng, 3.0).array() + 7.0, kTrainNoRng);
  for (int c = 0; c < 5; ++c) {
    const double mean = y.col(c).mean();
    const double var = (y.col(c).array() - mean).square().mean();
    EXPECT_NEAR(mean, 0.0, 1e-8);
    EXPECT_NEAR(var, 1.0, 1e-5 * 1.0 + 1e-6);
  }
}

TEST(BatchNorm, ConstantColumnGivesZero) {
  BatchNorm bn(1);
  const Matrix y = bn.forward(Matrix::Constant(6, 1, 4.2), kTrainNoRng);
  EXPECT_EQ(y.cwiseAbs().maxCoeff(), 0.0);
}

TEST(BatchNorm, SingleRowTrainingThrows) {
  BatchNorm bn(3);
  EXPECT_THROW(bn.forward(Matrix::Ones(1, 3), kTrainNoRng), std::invalid_argument);
  EXPECT_NO_THROW(bn.forward(Matrix::Ones(1, 3), kInfer));
}

TEST(BatchNorm, RunningStatisticsAndInference) {
  BatchNorm bn(1, 0.1, 1e-5);
  Matrix x(4, 1);
  x << 1, 2, 3, 4;
  bn.forward(x, kTrainNoRng);
  EXPECT_NEAR(bn.running_mean()(0, 0), 0.25, 1e-12);
  EXPECT_NEAR(bn.running_var()(0, 0), 0.9 + 0.1 * (5.0 / 3.0), 1e-12);
  const Matrix y = bn.forward(Matrix::Constant(1, 1, 0.25), kInfer);
  EXPECT_NEAR(y(0, 0), 0.0, 1e-12);
  for (int i = 0; i < 50; ++i) bn.forward(x * (i + 1), kTrainNoRng);
  EXPECT_GE(bn.running_var().minCoeff(), 0.0);
}

TEST(BatchNorm, EightByFourGradientCheck) {
  Rng rng(7);
  BatchNorm bn(4);
  bn.gamma() = random_matrix(1, 4, rng);
  bn.beta() = random_matrix(1, 4, rng);
  EXPECT_LT(gradcheck::check_layer(bn, random_matrix(8, 4, rng), [] { return kTrainNoRng; }, rng), 1e-4);
}

TEST(GradientCheck, EveryLayerTypeFiftyTrials) {
  const auto r = gradcheck::run_all(50, 99);
  EXPECT_LT(r.dense, 1e-4);
  EXPECT_LT(r.batchnorm, 1e-4);
  EXPECT_LT(r.leaky_relu, 1e-4);
  EXPECT_LT(r.dropout_inference, 1e-4);
  EXPECT_LT(r.dropout_training, 1e-4);
  EXPECT_LT(r.tanh, 1e-4);
  EXPECT_LT(r.sigmoid, 1e-4);
  EXPECT_LT(r.bce, 1e-6);
}

TEST(GradientCheck, WholeNetworkInputGradient) {
  Rng rng(8);
  Sequential net({Dense(3, 6, rng), BatchNorm(6), LeakyRelu(0.2), Dense(6, 2, rng), Tanh{}, Dense(2, 1, rng), Sigmoid{}});
  Matrix x = gradcheck::away_from_zero(random_matrix(5, 3, rng));
  const Matrix t = Matrix::Ones(5, 1);
  auto loss = [&](const Matrix& in) { return bce_loss(net.forward(in, kTrainNoRng), t).loss; };
  net.zero_grad();
  const auto lg = bce_loss(net.forward(x, kTrainNoRng), t);
  const Matrix gx = net.backward(lg.grad);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + 1e-5;
    const double up = loss(x);
    x.data()[i] = keep - 1e-5;
    const double down = loss(x);
    x.data()[i] = keep;
    EXPECT_LT(gradcheck::rel_error(gx.data()[i], (up - down) / 2e-5), 1e-4);
  }
}

TEST(Bce, HalfProbabilityIsLn2) {
  Matrix p = Matrix::Constant(4, 1, 0.5), t(4, 1);
  t << 1, 0, 1, 0;
  EXPECT_NEAR(bce_loss(p, t).loss, std::log(2.0), 1e-12);
}

TEST(Bce, PerfectPredictionsHitClampFloor) {
  Matrix t(4, 1);
  t << 1, 0, 1, 0;
  const double loss = bce_loss(t, t).loss;
  EXPECT_LE(loss, 1.7e-6);
  EXPECT_GT(loss, 0.0);
}

TEST(Adam, FirstStepMatchesHandEvaluation) {
  Matrix w = Matrix::Ones(1, 1), g = Matrix::Ones(1, 1);
  Adam adam(AdamConfig{});
  const std::vector<ParamRef> params{{&w, &g}};
  adam.step(params);
  EXPECT_NEAR(w(0, 0), 1.0 - 2e-4 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(adam.steps(), 1);
  const double after_one = w(0, 0);
  adam.step(params);
  EXPECT_LT(w(0, 0), after_one);
  EXPECT_NEAR(after_one - w(0, 0), 2e-4, 1e-9);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Rng rng(9);
  Matrix w = random_matrix(3, 3, rng), g = Matrix::Zero(3, 3);
  const Matrix before = w;
  Adam adam(AdamConfig{});
  const std::vector<ParamRef> params{{&w, &g}};
  for (int i = 0; i < 10; ++i) adam.step(params);
  EXPECT_EQ(w, before);
}

TEST(Checkpoint, NetworkRoundTripIsExact) {
  Rng rng(10);
  Sequential net({Dense(4, 8, rng), BatchNorm(8), LeakyRelu(0.2), Dropout(0.3), Dense(8, 2, rng), Tanh{}});
  net.forward(random_matrix(6, 4, rng), Pass{true, &rng});  // move running stats
  Sequential copy = network_from_json(nlohmann::json::parse(network_to_json(net).dump()));
  const Matrix x = random_matrix(5, 4, rng);
  EXPECT_EQ(net.forward(x, kInfer), copy.forward(x, kInfer));
}

TEST(Checkpoint, InferenceIsPure) {
  Rng rng(11);
  Sequential net({Dense(2, 4, rng), BatchNorm(4), LeakyRelu(0.2), Dropout(0.3), Dense(4, 1, rng), Sigmoid{}});
  const Matrix x = random_matrix(3, 2, rng);
  EXPECT_EQ(net.forward(x, kInfer), net.forward(x, kInfer));
}
