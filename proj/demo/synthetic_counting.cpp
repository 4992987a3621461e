// Trains a small model on synthetic poses and counts repetitions in a few
// generated clips, printing the score trace of the first one.
//
//   ./poserac_demo [epochs]
#include "poserac/counter.hpp"
#include "poserac/model.hpp"
#include "poserac/synthetic.hpp"
#include "poserac/training.hpp"

#include <cstdio>
#include <cstdlib>
#include <map>

using namespace poserac;

int main(int argc, char** argv) {
  synthetic::SyntheticSpec spec;
  spec.videos = 5;
  const auto ds = synthetic::make_dataset(spec);

  std::map<std::string, data::PoseSequence> videos;
  for (const auto& v : ds.training_videos) videos.emplace(v.video_id, v);
  const auto set = data::build_training_set(ds.annotations, videos);

  model::ModelConfig mc;
  mc.num_classes = spec.classes;
  mc.layers = 2;
  mc.embed_dim = 32;
  train::TrainConfig tc;
  tc.epochs = argc > 1 ? std::atoi(argv[1]) : 8;
  tc.seed = 1;

  std::printf("training on %zu samples, %d epochs\n", set.samples.size(), tc.epochs);
  const auto result = train::train(set.samples, mc, tc, [](const train::EpochStats& s, const model::ModelParams&) {
    std::printf("  epoch %2d  bce %.4f  triplet %.4f\n", s.epoch, s.bce, s.triplet);
  });

  const counting::TriggerConfig trigger;
  for (const auto& v : ds.test_videos) {
    const auto scores = model::score_video(v.sequence, result.params);
    const int c = counting::select_class(scores, trigger);
    const auto r = counting::count_class(scores, c, trigger);
    std::printf("%s: true %s x%lld, predicted %s x%lld\n", v.sequence.video_id.c_str(),
                ds.classes.name_of(v.action_class).c_str(), static_cast<long long>(v.cycles),
                ds.classes.name_of(c).c_str(), static_cast<long long>(r.count));
  }

  const auto& first = ds.test_videos.front();
  const auto scores = model::score_video(first.sequence, result.params);
  std::printf("\nscore trace for %s (class %s), one column per frame:\n", first.sequence.video_id.c_str(),
              ds.classes.name_of(first.action_class).c_str());
  for (Eigen::Index t = 0; t < std::min<Eigen::Index>(scores.scores.cols(), 36); ++t) {
    const double s = scores.scores(first.action_class, t);
    std::printf("%3lld %.3f %s\n", static_cast<long long>(t), s, std::string(static_cast<std::size_t>(s * 40), '#').c_str());
  }
  return 0;
}
