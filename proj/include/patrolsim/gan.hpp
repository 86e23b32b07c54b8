#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "patrolsim/csv.hpp"
#include "patrolsim/error.hpp"
#include "patrolsim/geodata.hpp"
#include "patrolsim/groups.hpp"
#include "patrolsim/nn/network.hpp"
#include "patrolsim/rng.hpp"

namespace patrolsim {

using nn::Matrix;

// --- coordinate normalization ----------------------------------------------

/// Affine map of the box onto [-1, 1]^2: u follows latitude, v longitude.
inline std::array<double, 2> normalize_coords(const LatLon& p, const BoundingBox& box) {
  return {2.0 * (p.lat - box.lat_min) / (box.lat_max - box.lat_min) - 1.0,
          2.0 * (p.lon - box.lon_min) / (box.lon_max - box.lon_min) - 1.0};
}

inline LatLon denormalize_coords(double u, double v, const BoundingBox& box) {
  return {box.lat_min + (u + 1.0) / 2.0 * (box.lat_max - box.lat_min),
          box.lon_min + (v + 1.0) / 2.0 * (box.lon_max - box.lon_min)};
}

// --- model --------------------------------------------------------------------

struct TrainConfig {
  int epochs = 200;
  int batch_size = 64;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  std::uint64_t seed = 0;
  int latent_dim = 100;
  /// Normalized centers used for the nearest-mode concentration check.
  std::vector<std::array<double, 2>> validation_modes;
};

struct GanModel {
  nn::Sequential generator;
  nn::Sequential discriminator;
  nn::Adam generator_opt;
  nn::Adam discriminator_opt;
  int latent_dim = 100;
  bool conditional = false;
  int label_count = 0;
  BoundingBox bbox;
  std::uint64_t seed = 0;

  int generator_input_width() const { return latent_dim + (conditional ? label_count : 0); }
};

/// latent -> 256 -> 512 -> 256 -> 2 (BN + LeakyReLU between, tanh out) and
/// 2 -> 512 -> 256 -> 128 -> 1 (LeakyReLU, dropout 0.3, sigmoid out).
/// Conditional models append a one-hot label to both inputs.
inline GanModel make_gan(const BoundingBox& bbox, const TrainConfig& cfg, int label_count = 0) {
  if (!bbox.valid()) throw ConfigError("GAN bounding box is empty");
  GanModel m;
  m.latent_dim = cfg.latent_dim;
  m.conditional = label_count > 0;
  m.label_count = label_count;
  m.bbox = bbox;
  m.seed = cfg.seed;
  Rng rng(derive_seed(cfg.seed, "gan/init"));
  using namespace nn;
  const Eigen::Index g_in = m.generator_input_width();
  m.generator = Sequential({Dense(g_in, 256, rng), BatchNorm(256), LeakyRelu(0.2), Dense(256, 512, rng),
                            BatchNorm(512), LeakyRelu(0.2), Dense(512, 256, rng), BatchNorm(256), LeakyRelu(0.2),
                            Dense(256, 2, rng), Tanh{}});
  const Eigen::Index d_in = 2 + label_count;
  m.discriminator = Sequential({Dense(d_in, 512, rng), LeakyRelu(0.2), Dropout(0.3), Dense(512, 256, rng),
                                LeakyRelu(0.2), Dropout(0.3), Dense(256, 128, rng), LeakyRelu(0.2),
                                Dense(128, 1, rng), Sigmoid{}});
  const AdamConfig adam{cfg.lr, cfg.beta1, cfg.beta2, 1e-8};
  m.generator_opt = Adam(adam);
  m.discriminator_opt = Adam(adam);
  return m;
}

// --- diagnostics --------------------------------------------------------------

struct ModeReport {
  std::vector<double> fractions;  // share of samples nearest each mode
  bool collapsed = false;         // some mode holds < 0.7 / modes of the mass
};

struct LossHistory {
  std::vector<double> g_loss;
  std::vector<double> d_loss;
  /// min over axes of generated std / training std (1 = matched spread).
  double spread_ratio = 1.0;
  std::optional<ModeReport> modes;

  bool mode_collapsed() const { return modes && modes->collapsed; }
};

inline std::string loss_history_csv(const LossHistory& h) {
  std::string out = "epoch,g_loss,d_loss\n";
  for (std::size_t e = 0; e < h.g_loss.size(); ++e) {
    out += csv::row({std::to_string(e + 1), csv::num(h.g_loss[e]), csv::num(h.d_loss[e])});
  }
  return out;
}

// --- sampling -----------------------------------------------------------------

namespace detail {

inline Matrix latent_batch(const GanModel& m, std::size_t n, std::span<const int> labels, Rng& rng) {
  Matrix z = Matrix::Zero(static_cast<Eigen::Index>(n), m.generator_input_width());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    for (int c = 0; c < m.latent_dim; ++c) z(r, c) = standard_normal(rng);
    if (m.conditional) z(r, m.latent_dim + labels[static_cast<std::size_t>(r)]) = 1.0;
  }
  return z;
}

inline Matrix with_labels(const Matrix& coords, std::span<const int> labels, int label_count) {
  if (label_count == 0) return coords;
  Matrix out = Matrix::Zero(coords.rows(), 2 + label_count);
  out.leftCols(2) = coords;
  for (Eigen::Index r = 0; r < coords.rows(); ++r) out(r, 2 + labels[static_cast<std::size_t>(r)]) = 1.0;
  return out;
}

// Inference-mode generator output in normalized coordinates.
inline Matrix generate_normalized(GanModel& m, std::size_t n, std::span<const int> labels, Rng& rng) {
  if (n == 0) return Matrix(0, 2);
  const Matrix z = latent_batch(m, n, labels, rng);
  return m.generator.forward(z, nn::Pass{false, nullptr});
}

inline std::vector<LatLon> to_latlon(const Matrix& uv, const BoundingBox& box) {
  std::vector<LatLon> out;
  out.reserve(static_cast<std::size_t>(uv.rows()));
  for (Eigen::Index r = 0; r < uv.rows(); ++r) out.push_back(denormalize_coords(uv(r, 0), uv(r, 1), box));
  return out;
}

}  // namespace detail

/// n patrol points from z ~ N(0, I); inference mode, so draws are row-wise
/// independent and the first k points do not depend on n.
inline std::vector<LatLon> sample_patrol(GanModel& model, std::size_t n_officers, Rng& rng) {
  if (model.conditional) throw ConfigError("sample_patrol: model is conditional; use sample_conditional");
  return detail::to_latlon(detail::generate_normalized(model, n_officers, {}, rng), model.bbox);
}

inline std::vector<LatLon> sample_conditional(GanModel& model, RaceGroup label, std::size_t n, Rng& rng) {
  if (!model.conditional) throw ConfigError("sample_conditional: model is unconditional");
  const std::vector<int> labels(n, static_cast<int>(index_of(label)));
  return detail::to_latlon(detail::generate_normalized(model, n, labels, rng), model.bbox);
}

/// Nearest-mode histogram of n unconditional samples.
inline ModeReport mode_report(GanModel& model, std::span<const std::array<double, 2>> modes, std::size_t n,
                              Rng& rng) {
  ModeReport rep;
  rep.fractions.assign(modes.size(), 0.0);
  if (modes.empty() || n == 0) return rep;
  std::vector<int> labels(n, 0);
  if (model.conditional) {
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % static_cast<std::size_t>(model.label_count));
  }
  const Matrix uv = detail::generate_normalized(model, n, labels, rng);
  for (Eigen::Index r = 0; r < uv.rows(); ++r) {
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t k = 0; k < modes.size(); ++k) {
      const double du = uv(r, 0) - modes[k][0], dv = uv(r, 1) - modes[k][1];
      const double d = du * du + dv * dv;
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    rep.fractions[best] += 1.0;
  }
  const double floor = 0.7 / static_cast<double>(modes.size());
  for (double& f : rep.fractions) {
    f /= static_cast<double>(n);
    if (f < floor) rep.collapsed = true;
  }
  return rep;
}

// --- training -----------------------------------------------------------------

namespace detail {

inline double column_std(const Matrix& x, Eigen::Index c) {
  if (x.rows() < 2) return 0.0;
  const double mean = x.col(c).mean();
  return std::sqrt((x.col(c).array() - mean).square().sum() / static_cast<double>(x.rows()));
}

// One discriminator step then one generator step per batch; the generator
// uses the non-saturating loss -log D(G(z)). The last partial batch is dropped.
inline LossHistory train_loop(GanModel& m, const Matrix& data, std::span<const int> labels, const TrainConfig& cfg) {
  const std::size_t n = static_cast<std::size_t>(data.rows());
  if (n == 0) throw DataError("train_gan: no training points");
  if (n < 2) throw DataError("train_gan: need at least 2 training points");
  if (cfg.epochs < 0 || cfg.batch_size < 1) throw ConfigError("train_gan: epochs and batch size must be positive");

  std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  if (n < 2 * batch) batch = std::max<std::size_t>(2, n / 2);
  const std::size_t batches = n / batch;

  Rng rng(derive_seed(cfg.seed, "gan/train"));
  const nn::Pass train{true, &rng};
  const Matrix ones = Matrix::Ones(static_cast<Eigen::Index>(batch), 1);
  const Matrix zeros = Matrix::Zero(static_cast<Eigen::Index>(batch), 1);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::vector<int> batch_labels(batch, 0);
  Matrix real(static_cast<Eigen::Index>(batch), 2);

  LossHistory hist;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, rng);
    double g_sum = 0.0, d_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      for (std::size_t i = 0; i < batch; ++i) {
        const std::size_t src = order[b * batch + i];
        real.row(static_cast<Eigen::Index>(i)) = data.row(static_cast<Eigen::Index>(src));
        if (m.conditional) batch_labels[i] = labels[src];
      }

      // discriminator: real -> 1, generated -> 0
      Matrix fake = m.generator.forward(latent_batch(m, batch, batch_labels, rng), train);
      m.discriminator.zero_grad();
      const auto real_loss =
          nn::bce_loss(m.discriminator.forward(with_labels(real, batch_labels, m.label_count), train), ones);
      m.discriminator.backward(real_loss.grad);
      const auto fake_loss =
          nn::bce_loss(m.discriminator.forward(with_labels(fake, batch_labels, m.label_count), train), zeros);
      m.discriminator.backward(fake_loss.grad);
      m.discriminator_opt.step(m.discriminator.params());

      // generator: push D(G(z)) -> 1
      m.generator.zero_grad();
      fake = m.generator.forward(latent_batch(m, batch, batch_labels, rng), train);
      const auto gen_loss =
          nn::bce_loss(m.discriminator.forward(with_labels(fake, batch_labels, m.label_count), train), ones);
      const Matrix d_input_grad = m.discriminator.backward(gen_loss.grad);
      m.generator.backward(d_input_grad.leftCols(2));
      m.generator_opt.step(m.generator.params());

      d_sum += real_loss.loss + fake_loss.loss;
      g_sum += gen_loss.loss;
    }
    const double g_mean = g_sum / static_cast<double>(batches);
    const double d_mean = d_sum / static_cast<double>(batches);
    if (!std::isfinite(g_mean) || !std::isfinite(d_mean)) {
      throw RunError("train_gan: non-finite loss at epoch " + std::to_string(epoch + 1));
    }
    hist.g_loss.push_back(g_mean);
    hist.d_loss.push_back(d_mean);
  }

  // spread diagnostic on inference-mode samples
  Rng diag(derive_seed(cfg.seed, "gan/diagnostics"));
  std::vector<int> diag_labels(1000, 0);
  if (m.conditional) {
    for (std::size_t i = 0; i < diag_labels.size(); ++i) diag_labels[i] = labels[i % n];
  }
  const Matrix gen = generate_normalized(m, diag_labels.size(), diag_labels, diag);
  double ratio = INFINITY;
  for (Eigen::Index c = 0; c < 2; ++c) {
    const double s = column_std(data, c);
    if (s > 0.0) ratio = std::min(ratio, column_std(gen, c) / s);
  }
  hist.spread_ratio = std::isfinite(ratio) ? ratio : 1.0;
  if (!cfg.validation_modes.empty()) hist.modes = mode_report(m, cfg.validation_modes, 1000, diag);
  return hist;
}

inline Matrix normalized_matrix(std::span<const LatLon> points, const BoundingBox& box) {
  Matrix x(static_cast<Eigen::Index>(points.size()), 2);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto uv = normalize_coords(points[i], box);
    x(static_cast<Eigen::Index>(i), 0) = uv[0];
    x(static_cast<Eigen::Index>(i), 1) = uv[1];
  }
  return x;
}

}  // namespace detail

/// Trains the unconditional patrol GAN on crime locations. Deterministic in
/// (data order, cfg.seed).
inline std::pair<GanModel, LossHistory> train_gan(std::span<const LatLon> data, const TrainConfig& cfg,
                                                  const BoundingBox& bbox) {
  if (data.empty()) throw DataError("train_gan: no training points");
  GanModel model = make_gan(bbox, cfg);
  LossHistory hist = detail::train_loop(model, detail::normalized_matrix(data, bbox), {}, cfg);
  return {std::move(model), std::move(hist)};
}

struct LabeledPoint {
  LatLon location;
  RaceGroup group = RaceGroup::Black;
};

/// Label-conditioned variant: generator input is noise plus a one-hot group,
/// discriminator input is coordinates plus the same one-hot group.
inline std::pair<GanModel, LossHistory> train_conditional_gan(std::span<const LabeledPoint> data,
                                                              const TrainConfig& cfg, const BoundingBox& bbox) {
  std::array<std::size_t, kGroupCount> counts{};
  for (const auto& p : data) {
    const auto g = index_of(p.group);
    if (g >= kGroupCount) throw DataError("train_conditional_gan: unknown group label");
    ++counts[g];
  }
  for (RaceGroup g : kAllGroups) {
    if (counts[index_of(g)] < 2) {
      throw DataError("train_conditional_gan: group " + std::string(to_string(g)) + " has fewer than 2 examples");
    }
  }
  std::vector<LatLon> points;
  std::vector<int> labels;
  points.reserve(data.size());
  labels.reserve(data.size());
  for (const auto& p : data) {
    points.push_back(p.location);
    labels.push_back(static_cast<int>(index_of(p.group)));
  }
  GanModel model = make_gan(bbox, cfg, static_cast<int>(kGroupCount));
  LossHistory hist = detail::train_loop(model, detail::normalized_matrix(points, bbox), labels, cfg);
  return {std::move(model), std::move(hist)};
}

/// Removes floor(fraction * n) uniformly chosen records and appends as many
/// synthetic ones, labels assigned round-robin Black, White, Neither.
inline std::vector<LabeledPoint> rebalance_training_set(std::span<const LabeledPoint> real, GanModel& model,
                                                        double replace_fraction, Rng& rng) {
  if (!model.conditional) throw ConfigError("rebalance_training_set: model must be conditional");
  if (!(replace_fraction >= 0.0 && replace_fraction < 1.0)) {
    throw ConfigError("rebalance_training_set: replace fraction must be in [0, 1)");
  }
  const std::size_t n = real.size();
  const auto replaced = static_cast<std::size_t>(std::floor(replace_fraction * static_cast<double>(n)));
  std::vector<bool> removed(n, false);
  for (std::size_t idx : sample_without_replacement(n, replaced, rng)) removed[idx] = true;

  std::vector<LabeledPoint> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!removed[i]) out.push_back(real[i]);
  }
  std::array<std::size_t, kGroupCount> per_group{};
  for (std::size_t i = 0; i < replaced; ++i) ++per_group[i % kGroupCount];
  for (RaceGroup g : kAllGroups) {
    for (const LatLon& p : sample_conditional(model, g, per_group[index_of(g)], rng)) out.push_back({p, g});
  }
  return out;
}

// --- checkpoint ---------------------------------------------------------------

inline nlohmann::json gan_to_json(const GanModel& m) {
  return {{"magic", nn::kCheckpointMagic},
          {"version", nn::kCheckpointVersion},
          {"kind", m.conditional ? "conditional-gan" : "gan"},
          {"latent_dim", m.latent_dim},
          {"conditional", m.conditional},
          {"label_count", m.label_count},
          {"bbox", {m.bbox.lat_min, m.bbox.lat_max, m.bbox.lon_min, m.bbox.lon_max}},
          {"seed", m.seed},
          {"generator", nn::network_to_json(m.generator)},
          {"discriminator", nn::network_to_json(m.discriminator)},
          {"generator_adam", nn::adam_to_json(m.generator_opt)},
          {"discriminator_adam", nn::adam_to_json(m.discriminator_opt)}};
}

inline GanModel gan_from_json(const nlohmann::json& j) {
  if (j.value("magic", "") != nn::kCheckpointMagic) throw DataError("checkpoint: bad magic string");
  if (j.value("version", 0) != nn::kCheckpointVersion) throw DataError("checkpoint: unsupported version");
  GanModel m;
  m.latent_dim = j.at("latent_dim").get<int>();
  m.conditional = j.at("conditional").get<bool>();
  m.label_count = j.at("label_count").get<int>();
  const auto box = j.at("bbox").get<std::array<double, 4>>();
  m.bbox = {box[0], box[1], box[2], box[3]};
  m.seed = j.at("seed").get<std::uint64_t>();
  m.generator = nn::network_from_json(j.at("generator"));
  m.discriminator = nn::network_from_json(j.at("discriminator"));
  m.generator_opt = nn::adam_from_json(j.at("generator_adam"));
  m.discriminator_opt = nn::adam_from_json(j.at("discriminator_adam"));
  return m;
}

inline void save_checkpoint(const GanModel& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out << gan_to_json(m).dump() << '\n';
}

inline GanModel load_checkpoint(const std::string& path) {
  try {
    return gan_from_json(nlohmann::json::parse(csv::read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint " + path + ": " + e.what());
  }
}

}  // namespace patrolsim
