#pragma once

#include "poserac/checkpoint.hpp"
#include "poserac/config.hpp"
#include "poserac/counter.hpp"
#include "poserac/data_model.hpp"
#include "poserac/evaluation.hpp"
#include "poserac/gradcheck.hpp"
#include "poserac/model.hpp"
#include "poserac/synthetic.hpp"
#include "poserac/training.hpp"

#include "json.hpp"

#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

// Command implementations behind the `poserac` executable. Each returns a
// process exit code and writes only to the given streams and output paths.
namespace poserac::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericFailure = 3 };

struct Io {
  std::ostream& out;
  std::ostream& err;
};

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool verbose = false;
};

// Maps library exceptions onto exit codes and prints the message.
template <class F>
int guarded(Io io, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    io.err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    io.err << "numeric failure: " << e.what() << "\n";
    return kNumericFailure;
  } catch (const Error& e) {
    io.err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::filesystem::filesystem_error& e) {
    io.err << "error: " << e.what() << "\n";
    return kDataError;
  }
}

inline void require_exists(const std::string& path, const char* what) {
  if (!std::filesystem::exists(path)) throw Error(std::string(what) + " not found: " + path);
}

inline RunConfig resolve_config(const GlobalOptions& g) {
  RunConfig cfg;
  if (!g.config_path.empty()) {
    if (!std::filesystem::exists(g.config_path)) throw ConfigError("config file not found: " + g.config_path);
    cfg = load_run_config(g.config_path);
  }
  if (g.seed) {
    cfg.seed = *g.seed;
    cfg.train.seed = *g.seed;
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOptions {
  std::string annotations;
  std::string keypoint_dir;
  std::string out_dir;
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::optional<double> learning_rate;
  std::optional<double> alpha;
};

inline int cmd_train(const GlobalOptions& g, const TrainOptions& o, Io io) {
  return guarded(io, [&] {
    RunConfig cfg = resolve_config(g);
    if (o.epochs) cfg.train.epochs = *o.epochs;
    if (o.batch_size) cfg.train.batch_size = *o.batch_size;
    if (o.learning_rate) cfg.train.learning_rate = *o.learning_rate;
    if (o.alpha) cfg.train.alpha = *o.alpha;
    cfg.validate();
    require_exists(o.annotations, "annotation file");
    require_exists(o.keypoint_dir, "keypoint directory");

    const auto annotations = data::parse_annotation_csv(csv::read_file(o.annotations), cfg.classes);
    std::map<std::string, data::PoseSequence> sequences;
    for (const auto& a : annotations) {
      if (sequences.contains(a.video_id)) continue;
      const auto path = std::filesystem::path(o.keypoint_dir) / (a.video_id + ".csv");
      if (!std::filesystem::exists(path)) throw ValidationError("keypoint file for video '" + a.video_id + "' not found: " + path.string());
      auto seq = data::load_keypoint_file(path, cfg.model.keypoints);
      seq.video_id = a.video_id;
      sequences.emplace(a.video_id, std::move(seq));
    }
    const auto set = data::build_training_set(annotations, sequences);
    if (g.verbose) {
      for (const auto& w : set.warnings) io.err << "warning: " << w << "\n";
    }
    io.err << "training samples: " << set.samples.size() << " (skipped " << set.skipped << ")\n";

    std::filesystem::create_directories(o.out_dir);
    const std::filesystem::path dir(o.out_dir);
    auto on_epoch = [&](const train::EpochStats& s, const model::ModelParams& p) {
      checkpoint::save((dir / ("epoch_" + std::to_string(s.epoch) + ".json")).string(), p, cfg.classes);
      if (g.verbose) {
        io.err << "epoch " << s.epoch << " bce=" << s.bce << " triplet=" << s.triplet << " total=" << s.total << "\n";
      }
    };
    const auto result = train::train(set.samples, cfg.model, cfg.train, on_epoch);
    checkpoint::save((dir / "final.json").string(), result.params, cfg.classes);
    csv::write_file((dir / "history.csv").string(), train::history_csv(result.history));
    io.out << (dir / "final.json").string() << "\n";
    return kOk;
  });
}

// ---------------------------------------------------------------------------
// count
// ---------------------------------------------------------------------------

struct CountOptions {
  std::string checkpoint;
  std::vector<std::string> keypoint_files;
  std::optional<std::string> action_class;
  std::optional<double> upper;
  std::optional<double> lower;
  std::optional<int> smoothing_window;
  bool either_order = false;
  std::string events_out;
};

inline nlohmann::json events_json(const counting::CountResult& r, const data::ClassRegistry& classes) {
  nlohmann::json events = nlohmann::json::array();
  for (const auto& e : r.events) events.push_back({e.arm_frame, e.fire_frame});
  return {{"video_id", r.video_id}, {"action_class", classes.name_of(r.action_class)}, {"count", r.count},
          {"events", std::move(events)}};
}

inline int cmd_count(const GlobalOptions& g, const CountOptions& o, Io io) {
  return guarded(io, [&] {
    RunConfig cfg = resolve_config(g);
    if (o.upper) cfg.trigger.upper = *o.upper;
    if (o.lower) cfg.trigger.lower = *o.lower;
    if (o.smoothing_window) cfg.trigger.smoothing_window = *o.smoothing_window;
    if (o.either_order) cfg.trigger.either_order = true;
    cfg.trigger.validate();
    if (g.verbose) {
      io.err << "trigger: upper=" << cfg.trigger.upper << " lower=" << cfg.trigger.lower
             << " smoothing_window=" << cfg.trigger.smoothing_window
             << " either_order=" << (cfg.trigger.either_order ? "true" : "false") << "\n";
    }
    require_exists(o.checkpoint, "checkpoint");
    for (const auto& f : o.keypoint_files) require_exists(f, "keypoint file");
    if (o.keypoint_files.empty()) throw ConfigError("no keypoint files given");

    const auto ck = checkpoint::load(o.checkpoint);
    std::optional<int> fixed_class;
    if (o.action_class) {
      if (!ck.classes.contains(*o.action_class)) {
        io.err << "error: " << "unknown class '" << *o.action_class << "' for this checkpoint\n";
        return static_cast<int>(kUsage);
      }
      fixed_class = ck.classes.id_of(*o.action_class);
    }

    std::vector<counting::CountResult> results;
    for (const auto& f : o.keypoint_files) {
      const auto seq = data::load_keypoint_file(f, ck.params.config.keypoints);
      const auto scores = model::score_video(seq, ck.params);
      const int c = fixed_class ? *fixed_class : counting::select_class(scores, cfg.trigger);
      if (!fixed_class) io.err << seq.video_id << ": auto-selected class " << ck.classes.name_of(c) << "\n";
      results.push_back(counting::count_class(scores, c, cfg.trigger));
    }

    io.out << data::kCountHeader << "\n";
    for (const auto& r : results) io.out << r.video_id << ',' << ck.classes.name_of(r.action_class) << ',' << r.count << "\n";
    if (!o.events_out.empty()) {
      nlohmann::json j = nlohmann::json::array();
      for (const auto& r : results) j.push_back(events_json(r, ck.classes));
      csv::write_file(o.events_out, j.dump(2) + "\n");
    }
    return static_cast<int>(kOk);
  });
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalOptions {
  std::string predictions;
  std::string ground_truth;
  std::string per_video_out;
};

inline int cmd_eval(const GlobalOptions& g, const EvalOptions& o, Io io) {
  return guarded(io, [&] {
    resolve_config(g);
    require_exists(o.predictions, "predictions file");
    require_exists(o.ground_truth, "ground-truth file");
    const auto pred = data::parse_count_csv(csv::read_file(o.predictions));
    const auto gt = data::parse_count_csv(csv::read_file(o.ground_truth));
    const auto r = eval::evaluate(gt, pred);
    if (!o.per_video_out.empty()) csv::write_file(o.per_video_out, eval::per_video_csv(r));
    io.out << nlohmann::json{{"mae", r.mae}, {"obo", r.obo}, {"n", r.per_video.size()}}.dump() << "\n";
    return kOk;
  });
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

struct GradcheckOptions {
  int configs = 20;
};

inline int cmd_gradcheck(const GlobalOptions& g, const GradcheckOptions& o, Io io) {
  return guarded(io, [&] {
    resolve_config(g);
    if (o.configs < 1) throw ConfigError("--configs must be >= 1");
    const std::uint64_t seed = g.seed.value_or(0);
    int index = 0;
    const auto report = gradcheck::run(seed, o.configs, [&](const gradcheck::CaseResult& r) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.3e", r.max_rel_error);
      io.out << "config " << ++index << "/" << o.configs << ": " << gradcheck::describe(r.config)
             << " params=" << r.parameters << " max_rel_error=" << buf
             << (r.max_rel_error < gradcheck::kTolerance ? " ok" : " FAIL") << "\n";
    });
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3e", report.max_rel_error);
    io.out << "max relative error: " << buf << " (tolerance 1e-4) in " << report.seconds << " s\n";
    return report.passed() ? kOk : kNumericFailure;
  });
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthOptions {
  std::string out_dir;
  synthetic::SyntheticSpec spec;
};

inline int cmd_synth(const GlobalOptions& g, SynthOptions o, Io io) {
  return guarded(io, [&] {
    if (g.seed) o.spec.seed = *g.seed;
    const auto ds = synthetic::make_dataset(o.spec);
    synthetic::write_fixture(o.out_dir, ds, o.spec.seed, o.spec.keypoints);
    io.out << o.out_dir << "\n";
    return kOk;
  });
}

}  // namespace poserac::cli
