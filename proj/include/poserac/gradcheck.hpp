#pragma once

#include "poserac/autodiff.hpp"
#include "poserac/model.hpp"
#include "poserac/model_graph.hpp"
#include "poserac/rng.hpp"
#include "poserac/training.hpp"

#include <chrono>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

// Compares reverse-mode gradients of the total training loss against central
// finite differences of the plain forward path on small random models.
namespace poserac::gradcheck {

inline constexpr double kTolerance = 1e-4;
// A step of 1e-5 (relative) moves relu inputs by up to ~1e-4, so points with
// any relu input closer than that to zero are resampled.
inline constexpr double kRelStep = 1e-5;
inline constexpr double kKinkGuard = 1e-4;
inline constexpr int kMaxResamples = 50;

struct CaseResult {
  model::ModelConfig config;
  std::uint64_t seed = 0;
  std::size_t parameters = 0;
  double max_rel_error = 0.0;
  int resamples = 0;
  double seconds = 0.0;
};

struct Report {
  std::vector<CaseResult> cases;
  double max_rel_error = 0.0;
  double seconds = 0.0;
  bool passed(double tol = kTolerance) const { return !cases.empty() && max_rel_error < tol; }
};

inline std::string describe(const model::ModelConfig& c) {
  return "K=" + std::to_string(c.keypoints) + " D'=" + std::to_string(c.embed_dim) + " L=" + std::to_string(c.layers) +
         " H=" + std::to_string(c.heads) + " C=" + std::to_string(c.num_classes) +
         (c.embedding_hidden ? "" : " affine-embed");
}

// L in {1,2}, D' in {8,16}, K in {4,33}.
inline model::ModelConfig random_config(Rng& rng) {
  model::ModelConfig c;
  c.keypoints = rng.below(2) == 0 ? 4 : 33;
  c.embed_dim = rng.below(2) == 0 ? 8 : 16;
  c.layers = 1 + static_cast<int>(rng.below(2));
  c.heads = rng.below(2) == 0 ? 1 : 2;
  c.mapping_hidden = 6;
  c.num_classes = 2 + static_cast<int>(rng.below(2));
  c.embedding_hidden = rng.below(4) != 0;
  return c;
}

// Five samples with two repeated metric identities, so triplets always exist.
inline std::vector<data::LabeledPoseSample> random_batch(const model::ModelConfig& c, Rng& rng) {
  const int extra = static_cast<int>(rng.below(static_cast<std::uint64_t>(c.num_classes)));
  const std::pair<int, int> ids[] = {{0, 1}, {0, 1}, {1, 2}, {1, 2}, {extra, 1}};
  std::vector<data::LabeledPoseSample> batch;
  for (const auto& [cls, salient] : ids) {
    data::LabeledPoseSample s;
    s.action_class = cls;
    s.salient_index = salient;
    s.pose.keypoints.resize(static_cast<std::size_t>(c.keypoints));
    for (auto& kp : s.pose.keypoints) kp = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    batch.push_back(std::move(s));
  }
  return batch;
}

// Initial parameters with biases and LayerNorm affine terms moved off their
// defaults so every gradient path is exercised.
inline model::ModelParams random_params(const model::ModelConfig& c, std::uint64_t seed) {
  auto p = model::init_params(c, seed);
  Rng rng(seed ^ 0x5bd1e995ULL);
  model::for_each_tensor(p.weights, c.embedding_hidden, [&](const std::string& name, Matrix& m) {
    const bool affine = name.find(".b") != std::string::npos || name.find("gamma") != std::string::npos ||
                        name.find("beta") != std::string::npos;
    if (!affine) return;
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += rng.normal(0.0, 0.1);
  });
  return p;
}

inline CaseResult check_case(const model::ModelConfig& config, std::uint64_t seed, double rel_step = kRelStep,
                             double kink_guard = kKinkGuard) {
  const auto t0 = std::chrono::steady_clock::now();
  train::TrainConfig tc;
  tc.alpha = 1.0;
  tc.margin = 0.5;
  tc.batch_size = 5;

  CaseResult out;
  out.config = config;
  out.seed = seed;
  Rng rng(seed);
  for (int attempt = 0;; ++attempt) {
    if (attempt > kMaxResamples) throw NumericError("gradcheck: could not sample a point away from relu kinks");
    auto params = random_params(config, rng.next_u64());
    const auto batch = random_batch(config, rng);

    ad::Tape tape;
    const auto vars = model::register_params(tape, params);
    const auto graph = train::build_batch_loss(tape, vars, config, batch, tc);
    if (tape.min_kink_distance() < kink_guard) {
      ++out.resamples;
      continue;
    }
    tape.backward(graph.total);
    const auto analytic = model::collect_gradients(vars, config);

    const auto triplets = graph.triplets;
    auto f = [&] { return train::total_loss(batch, params, tc, &triplets).total; };
    const auto ptrs = params.tensors();
    const auto numeric = ad::finite_difference_gradient(f, ptrs, rel_step);

    std::vector<Matrix> flat;
    model::for_each_tensor(analytic, config.embedding_hidden, [&](const std::string&, const Matrix& m) { flat.push_back(m); });
    out.parameters = params.parameter_count();
    out.max_rel_error = ad::max_relative_error(flat, numeric);
    break;
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

inline Report run(std::uint64_t seed, int cases = 20, const std::function<void(const CaseResult&)>& on_case = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  Report report;
  Rng rng(seed);
  for (int i = 0; i < cases; ++i) {
    const auto config = random_config(rng);
    auto r = check_case(config, rng.next_u64());
    report.max_rel_error = std::max(report.max_rel_error, r.max_rel_error);
    if (on_case) on_case(r);
    report.cases.push_back(std::move(r));
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace poserac::gradcheck
