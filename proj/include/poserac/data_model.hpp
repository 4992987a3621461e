#pragma once

#include "poserac/csv.hpp"
#include "poserac/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace poserac::data {

inline constexpr int kDefaultKeypoints = 33;
inline constexpr int kKeypointDim = 3;
inline constexpr int kLeftHip = 23;
inline constexpr int kRightHip = 24;
inline constexpr double kRawCoordMin = -0.5;
inline constexpr double kRawCoordMax = 1.5;

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

struct PoseFrame {
  std::int64_t frame_index = 0;
  std::vector<Keypoint> keypoints;
  bool valid = true;

  friend bool operator==(const PoseFrame&, const PoseFrame&) = default;
};

struct PoseSequence {
  std::string video_id;
  std::vector<PoseFrame> frames;

  std::size_t length() const { return frames.size(); }
  std::size_t valid_count() const {
    return static_cast<std::size_t>(std::count_if(frames.begin(), frames.end(),
                                                  [](const PoseFrame& f) { return f.valid; }));
  }

  friend bool operator==(const PoseSequence&, const PoseSequence&) = default;
};

struct SaliencyAnnotation {
  std::string video_id;
  int action_class = 0;
  std::int64_t event_index = 0;
  std::int64_t pose1_frame = 0;
  std::int64_t pose2_frame = 0;

  friend bool operator==(const SaliencyAnnotation&, const SaliencyAnnotation&) = default;
};

struct LabeledPoseSample {
  PoseFrame pose;  // normalized
  int action_class = 0;
  int salient_index = 1;  // 1 = salient pose I, 2 = salient pose II
};

struct GroundTruthCount {
  std::string video_id;
  std::string action_class;
  std::int64_t count = 0;

  friend bool operator==(const GroundTruthCount&, const GroundTruthCount&) = default;
};

// Maps action-class names to dense ids in [0, C).
class ClassRegistry {
 public:
  ClassRegistry() = default;
  explicit ClassRegistry(std::vector<std::string> names) : names_(std::move(names)) {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        if (names_[i] == names_[j]) throw ConfigError("duplicate class name: " + names_[i]);
      }
    }
  }

  int size() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }

  const std::string& name_of(int id) const {
    if (id < 0 || id >= size()) throw ValidationError("class id out of range: " + std::to_string(id));
    return names_[static_cast<std::size_t>(id)];
  }

  bool contains(std::string_view name) const {
    return std::find(names_.begin(), names_.end(), name) != names_.end();
  }

  int id_of(std::string_view name) const {
    const auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) {
      std::string known;
      for (const auto& n : names_) known += (known.empty() ? "" : ", ") + n;
      throw ValidationError("unknown action class '" + std::string(name) + "'; known classes: " + known);
    }
    return static_cast<int>(it - names_.begin());
  }

  friend bool operator==(const ClassRegistry&, const ClassRegistry&) = default;

 private:
  std::vector<std::string> names_;
};

// The eight RepCount-pose action classes, in table order.
inline ClassRegistry default_class_registry() {
  return ClassRegistry({"bench_press", "front_raise", "jumping_jack", "pommel_horse", "sit_up", "squat",
                        "pull_up", "push_up"});
}

// ---------------------------------------------------------------------------
// Keypoint CSV
// ---------------------------------------------------------------------------

inline std::string keypoint_header(int keypoints = kDefaultKeypoints) {
  std::string h = "frame";
  for (int j = 0; j < keypoints; ++j) {
    const auto s = std::to_string(j);
    h += ",x" + s + ",y" + s + ",z" + s;
  }
  return h;
}

// Parses keypoint CSV content. Lines starting with '#' before the header are
// comments; a `# video_id=<id>` comment overrides `video_id`.
inline PoseSequence parse_keypoint_csv(std::string_view content, std::string video_id = {},
                                       int keypoints = kDefaultKeypoints) {
  const auto lines = csv::split_lines(content);
  std::size_t i = 0;
  for (; i < lines.size(); ++i) {
    const auto line = csv::trim(lines[i]);
    if (line.empty()) continue;
    if (line.front() != '#') break;
    auto body = csv::trim(line.substr(1));
    constexpr std::string_view key = "video_id=";
    if (body.starts_with(key)) video_id = std::string(csv::trim(body.substr(key.size())));
  }
  if (i >= lines.size()) throw ParseError("keypoint file is empty");
  if (lines[i] != keypoint_header(keypoints)) {
    throw ParseError(csv::at_line(i + 1) + "bad keypoint header; expected 'frame,x0,y0,z0,...,x" +
                     std::to_string(keypoints - 1) + ",y" + std::to_string(keypoints - 1) + ",z" +
                     std::to_string(keypoints - 1) + "'");
  }

  const std::size_t expected = 1 + static_cast<std::size_t>(kKeypointDim * keypoints);
  PoseSequence seq;
  seq.video_id = std::move(video_id);
  for (++i; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    if (csv::is_blank(lines[i])) continue;
    const auto fields = csv::split_fields(lines[i]);
    if (fields.size() != expected) {
      throw ParseError(csv::at_line(line_no) + "expected " + std::to_string(expected) + " fields, got " +
                       std::to_string(fields.size()));
    }
    PoseFrame frame;
    frame.frame_index = csv::parse_int(fields[0], line_no);
    if (frame.frame_index < 0) throw ParseError(csv::at_line(line_no) + "negative frame index");
    if (!seq.frames.empty() && frame.frame_index <= seq.frames.back().frame_index) {
      throw ParseError(csv::at_line(line_no) + "frame indices must be strictly increasing");
    }

    std::size_t empty = 0;
    for (std::size_t f = 1; f < fields.size(); ++f) empty += csv::is_blank(fields[f]) ? 1 : 0;
    if (empty == expected - 1) {
      frame.valid = false;
    } else if (empty != 0) {
      throw ParseError(csv::at_line(line_no) + "partially empty coordinate row");
    } else {
      frame.keypoints.resize(static_cast<std::size_t>(keypoints));
      for (int j = 0; j < keypoints; ++j) {
        auto& kp = frame.keypoints[static_cast<std::size_t>(j)];
        const std::size_t base = 1 + static_cast<std::size_t>(kKeypointDim * j);
        kp.x = csv::parse_double(fields[base], line_no);
        kp.y = csv::parse_double(fields[base + 1], line_no);
        kp.z = csv::parse_double(fields[base + 2], line_no);
        if (!std::isfinite(kp.x) || !std::isfinite(kp.y) || !std::isfinite(kp.z)) {
          throw ParseError(csv::at_line(line_no) + "non-finite coordinate at keypoint " + std::to_string(j));
        }
        if (kp.x < kRawCoordMin || kp.x > kRawCoordMax || kp.y < kRawCoordMin || kp.y > kRawCoordMax) {
          throw ParseError(csv::at_line(line_no) + "keypoint " + std::to_string(j) +
                           " x/y outside [-0.5, 1.5]");
        }
      }
    }
    seq.frames.push_back(std::move(frame));
  }
  if (seq.frames.empty()) throw ParseError("keypoint file has no frames");
  return seq;
}

inline std::string serialize_keypoint_csv(const PoseSequence& seq, int keypoints = kDefaultKeypoints) {
  std::string out = keypoint_header(keypoints);
  out += '\n';
  for (const auto& frame : seq.frames) {
    out += std::to_string(frame.frame_index);
    if (!frame.valid) {
      out.append(static_cast<std::size_t>(kKeypointDim * keypoints), ',');
    } else {
      if (frame.keypoints.size() != static_cast<std::size_t>(keypoints)) {
        throw ValidationError("frame " + std::to_string(frame.frame_index) + " has " +
                              std::to_string(frame.keypoints.size()) + " keypoints, expected " +
                              std::to_string(keypoints));
      }
      for (const auto& kp : frame.keypoints) {
        out += ',';
        csv::append_double(out, kp.x);
        out += ',';
        csv::append_double(out, kp.y);
        out += ',';
        csv::append_double(out, kp.z);
      }
    }
    out += '\n';
  }
  return out;
}

inline PoseSequence load_keypoint_file(const std::filesystem::path& path, int keypoints = kDefaultKeypoints) {
  const auto content = csv::read_file(path.string());
  try {
    return parse_keypoint_csv(content, path.stem().string(), keypoints);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

struct NormalizeOptions {
  int left_hip = kLeftHip;
  int right_hip = kRightHip;
  double degenerate_radius = 1e-6;
};

// Translates the hip midpoint to the origin and scales so the farthest
// keypoint lies at radius 1. Falls back to the centroid when the hip indices
// do not exist (reduced keypoint sets).
inline PoseFrame normalize_pose(const PoseFrame& frame, const NormalizeOptions& opts = {}) {
  if (!frame.valid) throw ValidationError("cannot normalize an invalid frame");
  if (frame.keypoints.empty()) throw DegeneratePoseError("pose has no keypoints");
  const auto n = static_cast<int>(frame.keypoints.size());

  Keypoint center;
  if (opts.left_hip >= 0 && opts.left_hip < n && opts.right_hip >= 0 && opts.right_hip < n) {
    const auto& l = frame.keypoints[static_cast<std::size_t>(opts.left_hip)];
    const auto& r = frame.keypoints[static_cast<std::size_t>(opts.right_hip)];
    center = {0.5 * (l.x + r.x), 0.5 * (l.y + r.y), 0.5 * (l.z + r.z)};
  } else {
    for (const auto& kp : frame.keypoints) {
      center.x += kp.x;
      center.y += kp.y;
      center.z += kp.z;
    }
    center.x /= n;
    center.y /= n;
    center.z /= n;
  }

  PoseFrame out = frame;
  double radius = 0.0;
  for (auto& kp : out.keypoints) {
    kp.x -= center.x;
    kp.y -= center.y;
    kp.z -= center.z;
    radius = std::max(radius, std::sqrt(kp.x * kp.x + kp.y * kp.y + kp.z * kp.z));
  }
  if (!std::isfinite(radius)) throw NumericError("non-finite keypoint in frame " + std::to_string(frame.frame_index));
  if (radius < opts.degenerate_radius) {
    throw DegeneratePoseError("degenerate pose at frame " + std::to_string(frame.frame_index) +
                              ": all keypoints coincide");
  }
  const double inv = 1.0 / radius;
  for (auto& kp : out.keypoints) {
    kp.x *= inv;
    kp.y *= inv;
    kp.z *= inv;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Annotation CSV
// ---------------------------------------------------------------------------

inline constexpr std::string_view kAnnotationHeader = "video_id,action_class,event_index,pose1_frame,pose2_frame";

// The header row is optional.
inline std::vector<SaliencyAnnotation> parse_annotation_csv(std::string_view content,
                                                            const ClassRegistry& registry) {
  std::vector<SaliencyAnnotation> out;
  const auto lines = csv::split_lines(content);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    if (csv::is_blank(lines[i]) || lines[i] == kAnnotationHeader) continue;
    const auto fields = csv::split_fields(lines[i]);
    if (fields.size() != 5) {
      throw ParseError(csv::at_line(line_no) + "expected 5 fields, got " + std::to_string(fields.size()));
    }
    SaliencyAnnotation a;
    a.video_id = std::string(csv::trim(fields[0]));
    if (a.video_id.empty()) throw ParseError(csv::at_line(line_no) + "empty video_id");
    try {
      a.action_class = registry.id_of(csv::trim(fields[1]));
    } catch (const ValidationError& e) {
      throw ValidationError(csv::at_line(line_no) + e.what());
    }
    a.event_index = csv::parse_int(fields[2], line_no);
    a.pose1_frame = csv::parse_int(fields[3], line_no);
    a.pose2_frame = csv::parse_int(fields[4], line_no);
    if (a.event_index < 0 || a.pose1_frame < 0 || a.pose2_frame < 0) {
      throw ValidationError(csv::at_line(line_no) + "indices must be nonnegative");
    }
    if (a.pose1_frame >= a.pose2_frame) {
      throw ValidationError(csv::at_line(line_no) + "pose1_frame (" + std::to_string(a.pose1_frame) +
                            ") must precede pose2_frame (" + std::to_string(a.pose2_frame) + ")");
    }
    out.push_back(std::move(a));
  }
  return out;
}

inline std::string serialize_annotation_csv(const std::vector<SaliencyAnnotation>& annotations,
                                            const ClassRegistry& registry) {
  std::string out(kAnnotationHeader);
  out += '\n';
  for (const auto& a : annotations) {
    out += a.video_id + ',' + registry.name_of(a.action_class) + ',' + std::to_string(a.event_index) + ',' +
           std::to_string(a.pose1_frame) + ',' + std::to_string(a.pose2_frame) + '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Count CSV
// ---------------------------------------------------------------------------

inline constexpr std::string_view kCountHeader = "video_id,action_class,count";

inline std::vector<GroundTruthCount> parse_count_csv(std::string_view content) {
  std::vector<GroundTruthCount> out;
  const auto lines = csv::split_lines(content);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    if (csv::is_blank(lines[i]) || lines[i] == kCountHeader) continue;
    const auto fields = csv::split_fields(lines[i]);
    if (fields.size() != 3) {
      throw ParseError(csv::at_line(line_no) + "expected 3 fields, got " + std::to_string(fields.size()));
    }
    GroundTruthCount c;
    c.video_id = std::string(csv::trim(fields[0]));
    c.action_class = std::string(csv::trim(fields[1]));
    if (c.video_id.empty()) throw ParseError(csv::at_line(line_no) + "empty video_id");
    c.count = csv::parse_int(fields[2], line_no);
    if (c.count < 0) throw ValidationError(csv::at_line(line_no) + "negative count");
    out.push_back(std::move(c));
  }
  return out;
}

inline std::string serialize_count_csv(const std::vector<GroundTruthCount>& counts) {
  std::string out(kCountHeader);
  out += '\n';
  for (const auto& c : counts) out += c.video_id + ',' + c.action_class + ',' + std::to_string(c.count) + '\n';
  return out;
}

// ---------------------------------------------------------------------------
// Training-set assembly
// ---------------------------------------------------------------------------

struct TrainingSet {
  std::vector<LabeledPoseSample> samples;
  std::size_t skipped = 0;
  std::vector<std::string> warnings;
};

namespace detail {
inline const PoseFrame& find_frame(const PoseSequence& seq, std::int64_t frame_index) {
  const auto it = std::lower_bound(seq.frames.begin(), seq.frames.end(), frame_index,
                                   [](const PoseFrame& f, std::int64_t idx) { return f.frame_index < idx; });
  if (it == seq.frames.end() || it->frame_index != frame_index) {
    throw ValidationError("video '" + seq.video_id + "': frame index " + std::to_string(frame_index) +
                          " out of range");
  }
  return *it;
}
}  // namespace detail

// Emits one normalized sample per salient pose of every annotated event.
// Invalid (no-person) or degenerate frames are skipped and recorded.
inline TrainingSet build_training_set(const std::vector<SaliencyAnnotation>& annotations,
                                      const std::map<std::string, PoseSequence>& sequences,
                                      const NormalizeOptions& opts = {}) {
  TrainingSet set;
  set.samples.reserve(annotations.size() * 2);
  for (const auto& a : annotations) {
    const auto it = sequences.find(a.video_id);
    if (it == sequences.end()) throw ValidationError("annotation references missing video '" + a.video_id + "'");
    const std::pair<std::int64_t, int> poses[] = {{a.pose1_frame, 1}, {a.pose2_frame, 2}};
    for (const auto& [frame_index, salient] : poses) {
      const PoseFrame& frame = detail::find_frame(it->second, frame_index);
      auto skip = [&](const std::string& why) {
        ++set.skipped;
        set.warnings.push_back("skipping video '" + a.video_id + "' event " + std::to_string(a.event_index) +
                               " frame " + std::to_string(frame_index) + ": " + why);
      };
      if (!frame.valid) {
        skip("no person detected");
        continue;
      }
      try {
        set.samples.push_back({normalize_pose(frame, opts), a.action_class, salient});
      } catch (const DegeneratePoseError&) {
        skip("degenerate pose");
      }
    }
  }
  return set;
}

}  // namespace poserac::data
