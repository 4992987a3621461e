#pragma once

#include "poserac/csv.hpp"
#include "poserac/data_model.hpp"
#include "poserac/rng.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

// Synthetic repetitive-action data: each class has two template poses; the
// training set is noisy copies of the templates and test videos interpolate
// between them cycle by cycle.
namespace poserac::synthetic {

struct SyntheticSpec {
  int classes = 4;
  int keypoints = data::kDefaultKeypoints;
  int samples_per_pose = 40;
  double noise = 0.02;
  int videos = 20;
  int min_cycles = 3;
  int max_cycles = 10;
  int neutral_frames = 8;  // interpolated frames between two extremes
  std::uint64_t seed = 2023;
};

struct ClassTemplates {
  std::vector<data::Keypoint> pose1;
  std::vector<data::Keypoint> pose2;
};

struct SyntheticVideo {
  data::PoseSequence sequence;
  int action_class = 0;
  std::int64_t cycles = 0;
};

struct SyntheticDataset {
  data::ClassRegistry classes;
  std::vector<ClassTemplates> templates;
  std::vector<data::PoseSequence> training_videos;  // one per class
  std::vector<data::SaliencyAnnotation> annotations;
  std::vector<SyntheticVideo> test_videos;
  std::vector<data::GroundTruthCount> counts;
};

inline data::ClassRegistry synthetic_registry(int classes) {
  std::vector<std::string> names;
  for (int c = 0; c < classes; ++c) names.push_back("synthetic_" + std::to_string(c));
  return data::ClassRegistry(std::move(names));
}

// Pose I is a random body inside the frame; pose II moves about a third of the
// keypoints (never the hips) so the two extremes are clearly distinct.
inline std::vector<ClassTemplates> make_templates(const SyntheticSpec& spec, Rng& rng) {
  std::vector<ClassTemplates> out;
  const auto K = static_cast<std::size_t>(spec.keypoints);
  for (int c = 0; c < spec.classes; ++c) {
    ClassTemplates t;
    t.pose1.resize(K);
    for (auto& kp : t.pose1) kp = {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(-0.3, 0.3)};
    t.pose2 = t.pose1;
    for (std::size_t j = 0; j < K; ++j) {
      if (static_cast<int>(j) == data::kLeftHip || static_cast<int>(j) == data::kRightHip) continue;
      if (rng.uniform() >= 1.0 / 3.0) continue;
      auto& kp = t.pose2[j];
      kp.x = std::clamp(kp.x + rng.uniform(-0.25, 0.25), 0.05, 0.95);
      kp.y = std::clamp(kp.y + rng.uniform(-0.25, 0.25), 0.05, 0.95);
      kp.z = kp.z + rng.uniform(-0.1, 0.1);
    }
    out.push_back(std::move(t));
  }
  return out;
}

inline data::PoseFrame noisy_frame(const std::vector<data::Keypoint>& base, double noise, std::int64_t index,
                                   Rng& rng) {
  data::PoseFrame f;
  f.frame_index = index;
  f.keypoints = base;
  if (noise > 0.0) {
    for (auto& kp : f.keypoints) {
      kp.x += rng.normal(0.0, noise);
      kp.y += rng.normal(0.0, noise);
      kp.z += rng.normal(0.0, noise);
    }
  }
  return f;
}

inline std::vector<data::Keypoint> lerp(const std::vector<data::Keypoint>& a, const std::vector<data::Keypoint>& b,
                                        double t) {
  std::vector<data::Keypoint> out(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) {
    out[j] = {a[j].x + t * (b[j].x - a[j].x), a[j].y + t * (b[j].y - a[j].y), a[j].z + t * (b[j].z - a[j].z)};
  }
  return out;
}

// Cycle layout: pose I, neutral frames, pose II, neutral frames back toward I.
inline data::PoseSequence make_cycle_video(const ClassTemplates& t, std::int64_t cycles, int neutral_frames,
                                           std::string video_id) {
  data::PoseSequence seq;
  seq.video_id = std::move(video_id);
  std::int64_t idx = 0;
  const double steps = static_cast<double>(neutral_frames + 1);
  auto push = [&](std::vector<data::Keypoint> kps) { seq.frames.push_back({idx++, std::move(kps), true}); };
  for (std::int64_t c = 0; c < cycles; ++c) {
    push(t.pose1);
    for (int i = 1; i <= neutral_frames; ++i) push(lerp(t.pose1, t.pose2, i / steps));
    push(t.pose2);
    for (int i = 1; i <= neutral_frames; ++i) push(lerp(t.pose2, t.pose1, i / steps));
  }
  return seq;
}

inline SyntheticDataset make_dataset(const SyntheticSpec& spec) {
  Rng rng(spec.seed);
  SyntheticDataset ds;
  ds.classes = synthetic_registry(spec.classes);
  ds.templates = make_templates(spec, rng);

  // Training videos alternate noisy pose I / pose II frames; event e annotates
  // frames 2e and 2e+1.
  for (int c = 0; c < spec.classes; ++c) {
    data::PoseSequence seq;
    seq.video_id = "train_" + std::to_string(c);
    const auto& t = ds.templates[static_cast<std::size_t>(c)];
    for (int e = 0; e < spec.samples_per_pose; ++e) {
      seq.frames.push_back(noisy_frame(t.pose1, spec.noise, 2 * e, rng));
      seq.frames.push_back(noisy_frame(t.pose2, spec.noise, 2 * e + 1, rng));
      ds.annotations.push_back({seq.video_id, c, e, 2 * e, 2 * e + 1});
    }
    ds.training_videos.push_back(std::move(seq));
  }

  for (int v = 0; v < spec.videos; ++v) {
    const int c = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.classes)));
    const auto cycles = spec.min_cycles +
                        static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(spec.max_cycles - spec.min_cycles + 1)));
    std::string id = "test_" + std::string(v < 10 ? "0" : "") + std::to_string(v);
    SyntheticVideo video{make_cycle_video(ds.templates[static_cast<std::size_t>(c)], cycles, spec.neutral_frames, id), c,
                         cycles};
    ds.counts.push_back({id, ds.classes.name_of(c), cycles});
    ds.test_videos.push_back(std::move(video));
  }
  return ds;
}

// Writes keypoints/<video>.csv for training and test videos, plus
// annotations.csv, counts.csv and config.json (class registry + seed).
inline void write_fixture(const std::filesystem::path& dir, const SyntheticDataset& ds, std::uint64_t seed,
                          int keypoints = data::kDefaultKeypoints) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "keypoints");
  for (const auto& seq : ds.training_videos) {
    csv::write_file((dir / "keypoints" / (seq.video_id + ".csv")).string(), data::serialize_keypoint_csv(seq, keypoints));
  }
  for (const auto& v : ds.test_videos) {
    csv::write_file((dir / "keypoints" / (v.sequence.video_id + ".csv")).string(),
                    data::serialize_keypoint_csv(v.sequence, keypoints));
  }
  csv::write_file((dir / "annotations.csv").string(), data::serialize_annotation_csv(ds.annotations, ds.classes));
  csv::write_file((dir / "counts.csv").string(), data::serialize_count_csv(ds.counts));
  std::string config = "{\n  \"seed\": " + std::to_string(seed) + ",\n  \"classes\": [";
  for (int c = 0; c < ds.classes.size(); ++c) config += (c ? ", \"" : "\"") + ds.classes.name_of(c) + "\"";
  config += "]\n}\n";
  csv::write_file((dir / "config.json").string(), config);
}

}  // namespace poserac::synthetic
