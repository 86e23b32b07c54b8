#pragma once

#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include <json.hpp>

#include "patrolsim/error.hpp"
#include "patrolsim/nn/layers.hpp"
#include "patrolsim/nn/optim.hpp"

namespace patrolsim::nn {

using Layer = std::variant<Dense, BatchNorm, LeakyRelu, Dropout, Tanh, Sigmoid>;

/// Ordered stack of layers with explicit forward and backward passes.
class Sequential {
 public:
  Sequential() = default;
  explicit Sequential(std::vector<Layer> layers) : layers_(std::move(layers)) {}

  void add(Layer layer) { layers_.push_back(std::move(layer)); }

  Matrix forward(Matrix x, const Pass& pass) {
    for (auto& layer : layers_) {
      x = std::visit([&](auto& l) { return l.forward(x, pass); }, layer);
    }
    return x;
  }

  /// Accumulates parameter gradients and returns d loss / d input.
  Matrix backward(Matrix g) {
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
      g = std::visit([&](auto& l) { return l.backward(g); }, *it);
    }
    return g;
  }

  void zero_grad() {
    for (auto& layer : layers_) {
      std::visit(
          [](auto& l) {
            if constexpr (requires { l.zero_grad(); }) l.zero_grad();
          },
          layer);
    }
  }

  std::vector<ParamRef> params() {
    std::vector<ParamRef> out;
    for (auto& layer : layers_) {
      std::visit(
          [&](auto& l) {
            if constexpr (requires { l.collect(out); }) l.collect(out);
          },
          layer);
    }
    return out;
  }

  Eigen::Index input_width() const {
    for (const auto& layer : layers_) {
      if (const auto* d = std::get_if<Dense>(&layer)) return d->in_features();
    }
    return 0;
  }

  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

 private:
  std::vector<Layer> layers_;
};

// ---------------------------------------------------------------------------
// Checkpoint JSON. Every document carries {"magic": "patrolsim-nn", "version": 1}.

inline constexpr const char* kCheckpointMagic = "patrolsim-nn";
inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json matrix_to_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()},
          {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw DataError("checkpoint: matrix size mismatch");
  Matrix m(rows, cols);
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

inline nlohmann::json layer_to_json(const Layer& layer) {
  return std::visit(
      [](const auto& l) -> nlohmann::json {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, Dense>) {
          return {{"type", "dense"}, {"weight", matrix_to_json(l.weight())}, {"bias", matrix_to_json(l.bias())}};
        } else if constexpr (std::is_same_v<T, BatchNorm>) {
          return {{"type", "batchnorm"},
                  {"momentum", l.momentum()},
                  {"epsilon", l.epsilon()},
                  {"gamma", matrix_to_json(l.gamma())},
                  {"beta", matrix_to_json(l.beta())},
                  {"running_mean", matrix_to_json(l.running_mean())},
                  {"running_var", matrix_to_json(l.running_var())}};
        } else if constexpr (std::is_same_v<T, LeakyRelu>) {
          return {{"type", "leaky_relu"}, {"slope", l.slope()}};
        } else if constexpr (std::is_same_v<T, Dropout>) {
          return {{"type", "dropout"}, {"rate", l.rate()}};
        } else if constexpr (std::is_same_v<T, Tanh>) {
          return {{"type", "tanh"}};
        } else {
          return {{"type", "sigmoid"}};
        }
      },
      layer);
}

inline Layer layer_from_json(const nlohmann::json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "dense") return Dense(matrix_from_json(j.at("weight")), matrix_from_json(j.at("bias")));
  if (type == "batchnorm") {
    const Matrix gamma = matrix_from_json(j.at("gamma"));
    BatchNorm bn(gamma.cols(), j.at("momentum").get<double>(), j.at("epsilon").get<double>());
    bn.gamma() = gamma;
    bn.beta() = matrix_from_json(j.at("beta"));
    bn.running_mean() = matrix_from_json(j.at("running_mean"));
    bn.running_var() = matrix_from_json(j.at("running_var"));
    return bn;
  }
  if (type == "leaky_relu") return LeakyRelu(j.at("slope").get<double>());
  if (type == "dropout") return Dropout(j.at("rate").get<double>());
  if (type == "tanh") return Tanh{};
  if (type == "sigmoid") return Sigmoid{};
  throw DataError("checkpoint: unknown layer type '" + type + "'");
}

inline nlohmann::json network_to_json(const Sequential& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.layers()) layers.push_back(layer_to_json(l));
  return {{"layers", layers}};
}

inline Sequential network_from_json(const nlohmann::json& j) {
  Sequential net;
  for (const auto& l : j.at("layers")) net.add(layer_from_json(l));
  return net;
}

inline nlohmann::json adam_to_json(const Adam& adam) {
  nlohmann::json m = nlohmann::json::array(), v = nlohmann::json::array();
  for (const auto& x : adam.first_moments()) m.push_back(matrix_to_json(x));
  for (const auto& x : adam.second_moments()) v.push_back(matrix_to_json(x));
  const auto& c = adam.config();
  return {{"lr", c.lr}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"epsilon", c.epsilon},
          {"t", adam.steps()}, {"m", m}, {"v", v}};
}

inline Adam adam_from_json(const nlohmann::json& j) {
  Adam adam(AdamConfig{j.at("lr").get<double>(), j.at("beta1").get<double>(), j.at("beta2").get<double>(),
                       j.at("epsilon").get<double>()});
  std::vector<Matrix> m, v;
  for (const auto& x : j.at("m")) m.push_back(matrix_from_json(x));
  for (const auto& x : j.at("v")) v.push_back(matrix_from_json(x));
  adam.restore(j.at("t").get<long long>(), std::move(m), std::move(v));
  return adam;
}

}  // namespace patrolsim::nn
