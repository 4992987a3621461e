#include "poserac/commands.hpp"

#include "CLI11.hpp"

#include <iostream>

namespace cli = poserac::cli;

int main(int argc, char** argv) {
  CLI::App app{"poserac: pose-based repetitive action counting"};
  app.require_subcommand(1);
  app.fallthrough();

  cli::GlobalOptions global;
  std::uint64_t seed = 0;
  app.add_option("--config", global.config_path, "JSON run config (flags override it)");
  auto* seed_opt = app.add_option("--seed", seed, "random seed");
  app.add_flag("-v,--verbose", global.verbose, "print progress and warnings to stderr");

  cli::TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "train a model from saliency annotations");
  train_cmd->add_option("--annotations", train.annotations, "annotation CSV")->required();
  train_cmd->add_option("--keypoints", train.keypoint_dir, "directory of <video_id>.csv keypoint files")->required();
  train_cmd->add_option("--out-dir", train.out_dir, "where checkpoints and history.csv are written")->required();
  train_cmd->add_option("--epochs", train.epochs);
  train_cmd->add_option("--batch-size", train.batch_size);
  train_cmd->add_option("--learning-rate", train.learning_rate);
  train_cmd->add_option("--alpha", train.alpha, "triplet loss weight");

  cli::CountOptions count;
  auto* count_cmd = app.add_subcommand("count", "count repetitions in keypoint files");
  count_cmd->add_option("--checkpoint", count.checkpoint)->required();
  count_cmd->add_option("keypoints", count.keypoint_files, "keypoint CSV files")->required();
  count_cmd->add_option("--class", count.action_class, "action class name (default: pick by max count)");
  count_cmd->add_option("--upper", count.upper);
  count_cmd->add_option("--lower", count.lower);
  count_cmd->add_option("--smooth", count.smoothing_window, "odd moving-average window");
  count_cmd->add_flag("--either-order", count.either_order, "also count pose II followed by pose I");
  count_cmd->add_option("--events", count.events_out, "write per-video events as JSON");

  cli::EvalOptions eval;
  auto* eval_cmd = app.add_subcommand("eval", "compute OBO and MAE");
  eval_cmd->add_option("--predictions", eval.predictions)->required();
  eval_cmd->add_option("--ground-truth", eval.ground_truth)->required();
  eval_cmd->add_option("--out", eval.per_video_out, "per-video CSV");

  cli::GradcheckOptions gradcheck;
  auto* grad_cmd = app.add_subcommand("gradcheck", "compare autodiff gradients with finite differences");
  grad_cmd->add_option("--configs", gradcheck.configs, "number of random configs");

  cli::SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic dataset fixture");
  synth_cmd->add_option("--out-dir", synth.out_dir)->required();
  synth_cmd->add_option("--classes", synth.spec.classes);
  synth_cmd->add_option("--videos", synth.spec.videos);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : cli::kUsage;
  }
  if (*seed_opt) global.seed = seed;

  cli::Io io{std::cout, std::cerr};
  if (*train_cmd) return cli::cmd_train(global, train, io);
  if (*count_cmd) return cli::cmd_count(global, count, io);
  if (*eval_cmd) return cli::cmd_eval(global, eval, io);
  if (*grad_cmd) return cli::cmd_gradcheck(global, gradcheck, io);
  if (*synth_cmd) return cli::cmd_synth(global, synth, io);
  return cli::kUsage;
}
