#pragma once

#include "poserac/autodiff.hpp"
#include "poserac/data_model.hpp"
#include "poserac/model.hpp"
#include "poserac/model_graph.hpp"
#include "poserac/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace poserac::train {

struct TrainConfig {
  int epochs = 15;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double alpha = 0.01;  // triplet weight
  double margin = 0.3;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    auto require = [](bool ok, const std::string& what) {
      if (!ok) throw ConfigError("invalid train config: " + what);
    };
    require(epochs >= 0, "epochs must be >= 0");
    require(batch_size >= 1, "batch_size must be >= 1");
    require(alpha >= 0.0, "alpha must be >= 0");
    require(margin > 0.0 && margin < 2.0, "margin must lie in (0, 2)");
    require(alpha == 0.0 || batch_size >= 3, "batch_size must be >= 3 when the triplet loss is enabled");
    require(learning_rate > 0.0, "learning_rate must be > 0");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "moment decay rates must lie in [0, 1)");
    require(epsilon > 0.0, "epsilon must be > 0");
  }
};

// ---------------------------------------------------------------------------
// Targets and losses on plain values
// ---------------------------------------------------------------------------

inline constexpr double kNeutralTarget = 0.5;

// Own class: 1 for salient pose I, 0 for salient pose II. Every other class
// is trained toward the neutral score 0.5.
inline RowVector make_targets(int action_class, int salient_index, int num_classes) {
  if (action_class < 0 || action_class >= num_classes) {
    throw ValidationError("make_targets: class " + std::to_string(action_class) + " out of range [0, " +
                          std::to_string(num_classes) + ")");
  }
  if (salient_index != 1 && salient_index != 2) {
    throw ValidationError("make_targets: salient_index must be 1 or 2, got " + std::to_string(salient_index));
  }
  RowVector t = RowVector::Constant(num_classes, kNeutralTarget);
  t(action_class) = salient_index == 1 ? 1.0 : 0.0;
  return t;
}

inline RowVector make_targets(const data::LabeledPoseSample& s, int num_classes) {
  return make_targets(s.action_class, s.salient_index, num_classes);
}

inline double bce_loss(const Matrix& predictions, const Matrix& targets) {
  if (predictions.rows() != targets.rows() || predictions.cols() != targets.cols()) {
    throw ShapeError("bce_loss: predictions " + shape_string(predictions) + " vs targets " + shape_string(targets));
  }
  if (predictions.size() == 0) throw ShapeError("bce_loss: empty batch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < predictions.size(); ++i) {
    const double p = std::clamp(predictions.data()[i], ad::kBceClamp, 1.0 - ad::kBceClamp);
    const double y = targets.data()[i];
    total -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return total / static_cast<double>(predictions.size());
}

inline double cosine_distance(const RowVector& u, const RowVector& v) {
  const double nu = u.norm();
  const double nv = v.norm();
  if (!(nu > 0.0) || !(nv > 0.0)) throw NumericError("cosine_distance: zero-norm feature vector");
  return 1.0 - u.dot(v) / (nu * nv);
}

// max(d(a,p) - d(a,n) + margin, 0) with cosine distance d.
inline double triplet_loss(const RowVector& anchor, const RowVector& positive, const RowVector& negative,
                           double margin) {
  return std::max(cosine_distance(anchor, positive) - cosine_distance(anchor, negative) + margin, 0.0);
}

// Positives and negatives are defined by (action class, salient pose index).
struct MetricIdentity {
  int action_class = 0;
  int salient_index = 1;
  friend bool operator==(const MetricIdentity&, const MetricIdentity&) = default;
};

struct Triplet {
  int anchor = 0;
  int positive = 0;
  int negative = 0;
  friend bool operator==(const Triplet&, const Triplet&) = default;
};

using TripletBatch = std::vector<Triplet>;

// Batch-hard mining: for every anchor, the farthest same-identity sample and
// the nearest other-identity sample. Anchors lacking either are skipped; ties
// go to the lowest batch index.
inline TripletBatch mine_triplets(std::span<const RowVector> features, std::span<const MetricIdentity> ids) {
  if (features.size() != ids.size()) throw ShapeError("mine_triplets: feature and identity counts differ");
  const auto n = static_cast<int>(features.size());
  Matrix dist(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      const double d = i == j ? 0.0 : cosine_distance(features[static_cast<std::size_t>(i)],
                                                      features[static_cast<std::size_t>(j)]);
      dist(i, j) = d;
      dist(j, i) = d;
    }
  }
  TripletBatch out;
  for (int a = 0; a < n; ++a) {
    int pos = -1;
    int neg = -1;
    for (int j = 0; j < n; ++j) {
      if (j == a) continue;
      if (ids[static_cast<std::size_t>(j)] == ids[static_cast<std::size_t>(a)]) {
        if (pos < 0 || dist(a, j) > dist(a, pos)) pos = j;
      } else {
        if (neg < 0 || dist(a, j) < dist(a, neg)) neg = j;
      }
    }
    if (pos >= 0 && neg >= 0) out.push_back({a, pos, neg});
  }
  return out;
}

// Mean triplet loss over the batch; 0 for an empty batch.
inline double triplet_loss(std::span<const RowVector> features, const TripletBatch& triplets, double margin) {
  if (triplets.empty()) return 0.0;
  double total = 0.0;
  for (const auto& t : triplets) {
    total += triplet_loss(features[static_cast<std::size_t>(t.anchor)], features[static_cast<std::size_t>(t.positive)],
                          features[static_cast<std::size_t>(t.negative)], margin);
  }
  return total / static_cast<double>(triplets.size());
}

inline std::vector<MetricIdentity> identities_of(std::span<const data::LabeledPoseSample> batch) {
  std::vector<MetricIdentity> ids;
  ids.reserve(batch.size());
  for (const auto& s : batch) ids.push_back({s.action_class, s.salient_index});
  return ids;
}

inline Matrix targets_of(std::span<const data::LabeledPoseSample> batch, int num_classes) {
  Matrix t(static_cast<Eigen::Index>(batch.size()), num_classes);
  for (std::size_t i = 0; i < batch.size(); ++i) t.row(static_cast<Eigen::Index>(i)) = make_targets(batch[i], num_classes);
  return t;
}

struct LossBreakdown {
  double bce = 0.0;
  double triplet = 0.0;
  double total = 0.0;
  TripletBatch triplets;
};

// L = L_bce + alpha * L_tri on the plain forward path. Mines triplets unless
// `fixed_triplets` is given.
inline LossBreakdown total_loss(std::span<const data::LabeledPoseSample> batch, const model::ModelParams& params,
                                const TrainConfig& config, const TripletBatch* fixed_triplets = nullptr) {
  if (batch.empty()) throw ValidationError("total_loss: empty batch");
  const int C = params.config.num_classes;
  Matrix scores(static_cast<Eigen::Index>(batch.size()), C);
  std::vector<RowVector> features;
  features.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& s = batch[i];
    auto enc = model::encode(model::embed_keypoints(model::pose_matrix(s.pose), params), params);
    scores.row(static_cast<Eigen::Index>(i)) = model::pose_mapping(enc, params);
    features.push_back(std::move(enc.pooled));
  }
  LossBreakdown out;
  out.bce = bce_loss(scores, targets_of(batch, C));
  const auto ids = identities_of(batch);
  out.triplets = fixed_triplets ? *fixed_triplets : mine_triplets(features, ids);
  out.triplet = triplet_loss(features, out.triplets, config.margin);
  out.total = (config.alpha == 0.0 || out.triplets.empty()) ? out.bce : out.bce + config.alpha * out.triplet;
  return out;
}

// ---------------------------------------------------------------------------
// Losses on the tape
// ---------------------------------------------------------------------------

struct BatchGraph {
  ad::Var bce;
  ad::Var triplet;  // invalid when no triplets were mined
  ad::Var total;
  TripletBatch triplets;
};

inline BatchGraph build_batch_loss(ad::Tape& tape, const model::ParamVars& vars, const model::ModelConfig& mc,
                                   std::span<const data::LabeledPoseSample> batch, const TrainConfig& config,
                                   const TripletBatch* fixed_triplets = nullptr) {
  if (batch.empty()) throw ValidationError("build_batch_loss: empty batch");
  std::vector<ad::Var> scores;
  std::vector<ad::Var> pooled;
  std::vector<RowVector> features;
  scores.reserve(batch.size());
  pooled.reserve(batch.size());
  features.reserve(batch.size());
  for (const auto& s : batch) {
    const auto g = model::forward_on_tape(tape, vars, mc, model::pose_matrix(s.pose));
    scores.push_back(g.scores);
    pooled.push_back(g.pooled);
    features.emplace_back(g.pooled.value());
  }

  BatchGraph out;
  out.bce = ad::binary_cross_entropy(ad::concat_rows(scores), targets_of(batch, mc.num_classes));
  out.triplets = fixed_triplets ? *fixed_triplets : mine_triplets(features, identities_of(batch));
  if (!out.triplets.empty()) {
    std::vector<ad::Var> unit(batch.size());
    auto unit_of = [&](int i) {
      auto& u = unit[static_cast<std::size_t>(i)];
      if (!u.valid()) u = ad::l2_normalize(pooled[static_cast<std::size_t>(i)]);
      return u;
    };
    std::vector<ad::Var> terms;
    terms.reserve(out.triplets.size());
    for (const auto& t : out.triplets) {
      const ad::Var a = unit_of(t.anchor);
      // d(a,p) - d(a,n) = cos(a,n) - cos(a,p)
      const ad::Var diff = ad::sub(ad::dot(a, unit_of(t.negative)), ad::dot(a, unit_of(t.positive)));
      terms.push_back(ad::hinge(ad::add_scalar(diff, config.margin)));
    }
    out.triplet = ad::mean(ad::concat_rows(terms));
  }
  out.total = (config.alpha == 0.0 || !out.triplet.valid()) ? out.bce
                                                             : ad::add(out.bce, ad::scale(out.triplet, config.alpha));
  return out;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct OptimizerState {
  model::Weights<Matrix> m;
  model::Weights<Matrix> v;
  std::int64_t step = 0;
};

inline OptimizerState init_optimizer(const model::ModelParams& params) {
  auto zeros = [](const std::string&, const Matrix& t) { return Matrix::Zero(t.rows(), t.cols()).eval(); };
  const bool eh = params.config.embedding_hidden;
  return {model::map_weights<Matrix>(params.weights, eh, zeros), model::map_weights<Matrix>(params.weights, eh, zeros),
          0};
}

// One bias-corrected Adam update. Throws NumericError naming the first
// parameter with a non-finite gradient; params are left untouched then.
inline void optimizer_step(model::ModelParams& params, model::Weights<Matrix>& grads, OptimizerState& state,
                           const TrainConfig& config) {
  const bool eh = params.config.embedding_hidden;
  model::for_each_tensor(grads, eh, [](const std::string& name, const Matrix& g) {
    if (!all_finite(g)) throw NumericError("non-finite gradient in parameter '" + name + "'");
  });

  std::vector<Matrix*> p = params.tensors();
  std::vector<Matrix*> g, m, v;
  model::for_each_tensor(grads, eh, [&](const std::string&, Matrix& t) { g.push_back(&t); });
  model::for_each_tensor(state.m, eh, [&](const std::string&, Matrix& t) { m.push_back(&t); });
  model::for_each_tensor(state.v, eh, [&](const std::string&, Matrix& t) { v.push_back(&t); });
  if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size()) {
    throw ShapeError("optimizer_step: parameter/gradient/state layouts differ");
  }

  ++state.step;
  const double b1 = config.beta1;
  const double b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (g[k]->rows() != p[k]->rows() || g[k]->cols() != p[k]->cols()) {
      throw ShapeError("optimizer_step: gradient shape mismatch at tensor " + std::to_string(k));
    }
    m[k]->array() = b1 * m[k]->array() + (1.0 - b1) * g[k]->array();
    v[k]->array() = b2 * v[k]->array() + (1.0 - b2) * g[k]->array().square();
    p[k]->array() -= config.learning_rate * (m[k]->array() / c1) / ((v[k]->array() / c2).sqrt() + config.epsilon);
  }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochStats {
  int epoch = 0;
  double bce = 0.0;
  double triplet = 0.0;
  double total = 0.0;
};

struct TrainResult {
  model::ModelParams params;
  std::vector<EpochStats> history;
};

using EpochCallback = std::function<void(const EpochStats&, const model::ModelParams&)>;

// One optimizer step on `batch`; returns the loss terms before the update.
inline LossBreakdown train_step(model::ModelParams& params, OptimizerState& state,
                                std::span<const data::LabeledPoseSample> batch, const TrainConfig& config) {
  ad::Tape tape;
  const auto vars = model::register_params(tape, params);
  const auto graph = build_batch_loss(tape, vars, params.config, batch, config);
  tape.backward(graph.total);
  auto grads = model::collect_gradients(vars, params.config);
  LossBreakdown out;
  out.bce = graph.bce.scalar();
  out.triplet = graph.triplet.valid() ? graph.triplet.scalar() : 0.0;
  out.total = graph.total.scalar();
  out.triplets = graph.triplets;
  if (!std::isfinite(out.total)) throw NumericError("non-finite loss at optimizer step " + std::to_string(state.step + 1));
  optimizer_step(params, grads, state, config);
  return out;
}

inline TrainResult train(std::span<const data::LabeledPoseSample> dataset, const model::ModelConfig& model_config,
                         const TrainConfig& config, const EpochCallback& on_epoch = {}) {
  model_config.validate();
  config.validate();
  if (dataset.empty()) throw ValidationError("train: empty dataset");
  for (const auto& s : dataset) {
    if (!s.pose.valid) throw ValidationError("train: dataset contains an invalid frame");
    if (s.action_class < 0 || s.action_class >= model_config.num_classes) {
      throw ValidationError("train: sample class " + std::to_string(s.action_class) + " out of range");
    }
  }

  TrainResult result{model::init_params(model_config, config.seed), {}};
  OptimizerState state = init_optimizer(result.params);
  Rng rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(dataset.size());
  std::vector<data::LabeledPoseSample> batch;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    EpochStats stats{epoch, 0.0, 0.0, 0.0};
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(dataset[order[i]]);
      const auto loss = train_step(result.params, state, batch, config);
      const auto w = static_cast<double>(batch.size());
      stats.bce += w * loss.bce;
      stats.triplet += w * loss.triplet;
      stats.total += w * loss.total;
    }
    const auto n = static_cast<double>(dataset.size());
    stats.bce /= n;
    stats.triplet /= n;
    stats.total /= n;
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats, result.params);
  }
  return result;
}

inline std::string history_csv(const std::vector<EpochStats>& history) {
  std::string out = "epoch,bce,triplet,total\n";
  for (const auto& h : history) {
    out += std::to_string(h.epoch) + ',';
    csv::append_double(out, h.bce);
    out += ',';
    csv::append_double(out, h.triplet);
    out += ',';
    csv::append_double(out, h.total);
    out += '\n';
  }
  return out;
}

}  // namespace poserac::train
