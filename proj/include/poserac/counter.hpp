#pragma once

#include "poserac/error.hpp"
#include "poserac/model.hpp"
#include "poserac/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace poserac::counting {

struct TriggerConfig {
  double upper = 0.8;  // salient pose I: score >= upper
  double lower = 0.2;  // salient pose II: score <= lower
  int smoothing_window = 1;
  bool either_order = false;  // also count II -> I cycles

  void validate() const {
    if (!(0.0 < lower && lower < upper && upper < 1.0)) {
      throw ConfigError("invalid trigger config: require 0 < lower < upper < 1 (lower=" + std::to_string(lower) +
                        ", upper=" + std::to_string(upper) + ")");
    }
    if (smoothing_window < 1 || smoothing_window % 2 == 0) {
      throw ConfigError("invalid trigger config: smoothing_window must be odd and >= 1");
    }
  }
};

struct Event {
  std::int64_t arm_frame = 0;
  std::int64_t fire_frame = 0;
  friend bool operator==(const Event&, const Event&) = default;
};

struct CountResult {
  std::string video_id;
  int action_class = 0;
  std::int64_t count = 0;
  std::vector<Event> events;
};

// Centered moving average; windows shrink at the edges.
inline std::vector<double> smooth_scores(std::span<const double> series, int window) {
  if (window < 1 || window % 2 == 0) throw ConfigError("smooth_scores: window must be odd and >= 1");
  const auto T = static_cast<std::int64_t>(series.size());
  if (window > 1 && window > T) {
    throw ConfigError("smooth_scores: window " + std::to_string(window) + " exceeds series length " +
                      std::to_string(T));
  }
  std::vector<double> out(series.begin(), series.end());
  if (window == 1) return out;
  const std::int64_t half = window / 2;
  for (std::int64_t t = 0; t < T; ++t) {
    const std::int64_t lo = std::max<std::int64_t>(0, t - half);
    const std::int64_t hi = std::min<std::int64_t>(T - 1, t + half);
    double acc = 0.0;
    for (std::int64_t i = lo; i <= hi; ++i) acc += series[static_cast<std::size_t>(i)];
    out[static_cast<std::size_t>(t)] = acc / static_cast<double>(hi - lo + 1);
  }
  return out;
}

// Streaming action trigger. Idle until a salient-pose-I score arms it; the
// next salient-pose-II score fires one repetition and returns it to idle.
class ActionTrigger {
 public:
  enum class Phase { Idle, ArmedHigh, ArmedLow };

  explicit ActionTrigger(const TriggerConfig& config) : config_(config) { config_.validate(); }

  // Returns true when this frame completes a repetition.
  bool update(std::int64_t frame, double score) {
    if (!std::isfinite(score)) throw NumericError("non-finite score at frame " + std::to_string(frame));
    const bool high = score >= config_.upper;
    const bool low = score <= config_.lower;
    switch (phase_) {
      case Phase::Idle:
        if (high) {
          phase_ = Phase::ArmedHigh;
          arm_frame_ = frame;
        } else if (low && config_.either_order) {
          phase_ = Phase::ArmedLow;
          arm_frame_ = frame;
        }
        return false;
      case Phase::ArmedHigh:
        if (low) return fire(frame);
        return false;
      case Phase::ArmedLow:
        if (high) return fire(frame);
        return false;
    }
    return false;
  }

  Phase phase() const { return phase_; }
  std::int64_t count() const { return static_cast<std::int64_t>(events_.size()); }
  const std::vector<Event>& events() const { return events_; }

 private:
  bool fire(std::int64_t frame) {
    events_.push_back({arm_frame_, frame});
    phase_ = Phase::Idle;
    return true;
  }

  TriggerConfig config_;
  Phase phase_ = Phase::Idle;
  std::int64_t arm_frame_ = 0;
  std::vector<Event> events_;
};

// Single O(T) scan of one class's score series. Smoothing is applied first
// when configured. Unfinished cycles at the end are not counted.
inline CountResult count_repetitions(std::span<const double> series, const TriggerConfig& config) {
  config.validate();
  const std::vector<double> s = smooth_scores(series, config.smoothing_window);
  ActionTrigger trigger(config);
  for (std::size_t t = 0; t < s.size(); ++t) trigger.update(static_cast<std::int64_t>(t), s[t]);
  CountResult out;
  out.count = trigger.count();
  out.events = trigger.events();
  return out;
}

// Independent naive counter used as a test oracle: symbolize the series, then
// greedily match non-overlapping I...II patterns from the left.
inline std::int64_t reference_count(std::span<const double> series, const TriggerConfig& config) {
  config.validate();
  const std::vector<double> s = smooth_scores(series, config.smoothing_window);
  std::string symbols;
  for (double v : s) {
    if (!std::isfinite(v)) throw NumericError("reference_count: non-finite score");
    symbols += v >= config.upper ? 'I' : (v <= config.lower ? 'J' : '.');
  }
  std::int64_t count = 0;
  std::size_t pos = 0;
  while (pos < symbols.size()) {
    const std::size_t open = config.either_order ? symbols.find_first_of("IJ", pos) : symbols.find('I', pos);
    if (open == std::string::npos) break;
    const char closer = symbols[open] == 'I' ? 'J' : 'I';
    const std::size_t close = symbols.find(closer, open + 1);
    if (close == std::string::npos) break;
    ++count;
    pos = close + 1;
  }
  return count;
}

inline std::vector<double> row_series(const Matrix& scores, int c) {
  std::vector<double> out(static_cast<std::size_t>(scores.cols()));
  for (Eigen::Index t = 0; t < scores.cols(); ++t) out[static_cast<std::size_t>(t)] = scores(c, t);
  return out;
}

inline CountResult count_class(const model::ScoreMatrix& scores, int action_class, const TriggerConfig& config) {
  if (action_class < 0 || action_class >= scores.scores.rows()) {
    throw ValidationError("count_class: class " + std::to_string(action_class) + " out of range");
  }
  auto out = count_repetitions(row_series(scores.scores, action_class), config);
  out.video_id = scores.video_id;
  out.action_class = action_class;
  return out;
}

// Class with the highest repetition count; ties go to the lowest id.
inline int select_class(const model::ScoreMatrix& scores, const TriggerConfig& config) {
  if (scores.scores.rows() == 0) throw ValidationError("select_class: score matrix has no classes");
  int best = 0;
  std::int64_t best_count = -1;
  for (int c = 0; c < scores.scores.rows(); ++c) {
    const auto n = count_repetitions(row_series(scores.scores, c), config).count;
    if (n > best_count) {
      best = c;
      best_count = n;
    }
  }
  return best;
}

}  // namespace poserac::counting
