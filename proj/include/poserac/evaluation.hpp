#pragma once

#include "poserac/csv.hpp"
#include "poserac/data_model.hpp"
#include "poserac/error.hpp"

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace poserac::eval {

namespace detail {
inline void check_lengths(std::size_t gt, std::size_t pred, const char* what) {
  if (gt != pred) {
    throw ValidationError(std::string(what) + ": ground truth has " + std::to_string(gt) + " entries, prediction " +
                          std::to_string(pred));
  }
  if (gt == 0) throw ValidationError(std::string(what) + ": no videos");
}
}  // namespace detail

// Fraction of videos whose predicted count is within one of the ground truth.
inline double obo(std::span<const std::int64_t> gt, std::span<const std::int64_t> pred) {
  detail::check_lengths(gt.size(), pred.size(), "obo");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) hits += std::llabs(gt[i] - pred[i]) <= 1 ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(gt.size());
}

// Mean of |gt - pred| / gt. Ground-truth counts must be >= 1.
inline double mae(std::span<const std::int64_t> gt, std::span<const std::int64_t> pred) {
  detail::check_lengths(gt.size(), pred.size(), "mae");
  double total = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] <= 0) throw ValidationError("mae: ground-truth count must be >= 1 (entry " + std::to_string(i) + ")");
    total += static_cast<double>(std::llabs(gt[i] - pred[i])) / static_cast<double>(gt[i]);
  }
  return total / static_cast<double>(gt.size());
}

struct VideoError {
  std::string video_id;
  std::string action_class;
  std::int64_t ground_truth = 0;
  std::int64_t prediction = 0;
  std::int64_t absolute_error = 0;
  double normalized_error = 0.0;
};

struct EvalResult {
  double mae = 0.0;
  double obo = 0.0;
  std::vector<VideoError> per_video;
};

// Joins predictions to ground truth on (video_id, action_class). Every
// ground-truth entry must have exactly one prediction; extra predictions are
// ignored.
inline EvalResult evaluate(const std::vector<data::GroundTruthCount>& ground_truth,
                           const std::vector<data::GroundTruthCount>& predictions) {
  if (ground_truth.empty()) throw ValidationError("evaluate: ground truth is empty");
  std::map<std::pair<std::string, std::string>, std::int64_t> pred;
  for (const auto& p : predictions) {
    if (!pred.emplace(std::pair{p.video_id, p.action_class}, p.count).second) {
      throw ValidationError("evaluate: duplicate prediction for " + p.video_id + "/" + p.action_class);
    }
  }
  EvalResult out;
  std::vector<std::int64_t> gt_counts;
  std::vector<std::int64_t> pred_counts;
  for (const auto& g : ground_truth) {
    const auto it = pred.find({g.video_id, g.action_class});
    if (it == pred.end()) {
      throw ValidationError("evaluate: no prediction for video '" + g.video_id + "' class '" + g.action_class + "'");
    }
    gt_counts.push_back(g.count);
    pred_counts.push_back(it->second);
    VideoError e{g.video_id, g.action_class, g.count, it->second, std::llabs(g.count - it->second), 0.0};
    if (g.count <= 0) throw ValidationError("evaluate: ground-truth count for '" + g.video_id + "' must be >= 1");
    e.normalized_error = static_cast<double>(e.absolute_error) / static_cast<double>(g.count);
    out.per_video.push_back(std::move(e));
  }
  out.mae = mae(gt_counts, pred_counts);
  out.obo = obo(gt_counts, pred_counts);
  return out;
}

inline std::string per_video_csv(const EvalResult& r) {
  std::string out = "video_id,action_class,ground_truth,prediction,absolute_error,normalized_error\n";
  for (const auto& v : r.per_video) {
    out += v.video_id + ',' + v.action_class + ',' + std::to_string(v.ground_truth) + ',' +
           std::to_string(v.prediction) + ',' + std::to_string(v.absolute_error) + ',';
    csv::append_double(out, v.normalized_error);
    out += '\n';
  }
  return out;
}

}  // namespace poserac::eval
