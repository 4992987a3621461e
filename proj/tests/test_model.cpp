#include "poserac/model.hpp"
#include "poserac/model_graph.hpp"
#include "poserac/rng.hpp"

#include <gtest/gtest.h>

using namespace poserac;
using namespace poserac::model;

namespace {

data::PoseFrame random_pose(Rng& rng, int K = data::kDefaultKeypoints) {
  data::PoseFrame f;
  f.keypoints.resize(static_cast<std::size_t>(K));
  for (auto& kp : f.keypoints) kp = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(-0.3, 0.3)};
  return f;
}

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1.0, 1.0);
  return m;
}

ModelConfig small_config() {
  ModelConfig c;
  c.keypoints = 5;
  c.embed_dim = 8;
  c.layers = 2;
  c.heads = 2;
  c.num_classes = 3;
  c.mapping_hidden = 7;
  return c;
}

}  // namespace

TEST(ModelConfig, Defaults) {
  ModelConfig c;
  EXPECT_EQ(c.keypoints, 33);
  EXPECT_EQ(c.embed_dim, 64);
  EXPECT_EQ(c.layers, 6);
  EXPECT_EQ(c.heads, 4);
  EXPECT_EQ(c.resolved_head_dim(), 16);
  EXPECT_EQ(c.resolved_mlp_hidden(), 128);
  EXPECT_EQ(c.num_classes, 8);
  EXPECT_NO_THROW(c.validate());
}

TEST(ModelConfig, EmbedDimMustDivideByHeads) {
  ModelConfig c;
  c.embed_dim = 63;
  c.heads = 4;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(InitParams, SameSeedIsBitIdentical) {
  const auto a = init_params(ModelConfig{}, 123);
  const auto b = init_params(ModelConfig{}, 123);
  EXPECT_TRUE(params_bit_equal(a, b));
}

TEST(InitParams, DifferentSeedsDiffer) {
  EXPECT_FALSE(params_bit_equal(init_params(ModelConfig{}, 1), init_params(ModelConfig{}, 2)));
}

TEST(InitParams, TensorShapes) {
  const auto p = init_params(ModelConfig{}, 0);
  EXPECT_EQ(p.weights.embed_w1.rows(), 3);
  EXPECT_EQ(p.weights.embed_w1.cols(), 64);
  EXPECT_EQ(p.weights.layers.size(), 6u);
  EXPECT_EQ(p.weights.layers[0].wq.cols(), 64);
  EXPECT_EQ(p.weights.layers[0].mlp_w1.cols(), 128);
  EXPECT_EQ(p.weights.head_w1.rows(), 33 * 64);
  EXPECT_EQ(p.weights.head_w1.cols(), 128);
  EXPECT_EQ(p.weights.head_w2.cols(), 8);
  EXPECT_TRUE((p.weights.layers[3].ln1_gamma.array() == 1.0).all());
  EXPECT_TRUE(p.weights.layers[3].ln1_beta.isZero());
  const auto names = p.tensor_names();
  EXPECT_EQ(names.front(), "embed.w1");
  EXPECT_EQ(names.back(), "head.b2");
}

TEST(Embedding, IdentityWeightsReproduceNonnegativeInput) {
  ModelConfig c;
  c.embed_dim = 3;
  c.heads = 1;
  c.layers = 0;
  ModelParams p{c, zero_weights(c)};
  p.weights.embed_w1 = Matrix::Identity(3, 3);
  p.weights.embed_w2 = Matrix::Identity(3, 3);
  Rng rng(1);
  Matrix pose(33, 3);
  for (Eigen::Index i = 0; i < pose.size(); ++i) pose.data()[i] = rng.uniform(0.0, 1.0);
  EXPECT_EQ(embed_keypoints(pose, p), pose);
}

TEST(Embedding, ZeroPoseZeroBiasGivesZeros) {
  const auto p = init_params(ModelConfig{}, 4);
  EXPECT_TRUE(embed_keypoints(Matrix::Zero(33, 3), p).isZero());
}

TEST(Embedding, KeypointPermutationPermutesRows) {
  const auto p = init_params(ModelConfig{}, 4);
  Rng rng(2);
  Matrix pose = random_matrix(rng, 33, 3);
  const Matrix z = embed_keypoints(pose, p);
  pose.row(3).swap(pose.row(17));
  const Matrix zs = embed_keypoints(pose, p);
  EXPECT_EQ(zs.row(3), z.row(17));
  EXPECT_EQ(zs.row(17), z.row(3));
  EXPECT_EQ(zs.row(0), z.row(0));
}

TEST(EncoderLayer, SoftmaxRowsSumToOne) {
  const auto p = init_params(ModelConfig{}, 9);
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    AttentionTrace trace;
    encode(random_matrix(rng, 33, 64), p, &trace);
    ASSERT_EQ(trace.weights.size(), 6u * 4u);
    for (const auto& w : trace.weights) {
      EXPECT_LT((w.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-9);
      EXPECT_GE(w.minCoeff(), 0.0);
    }
  }
}

TEST(EncoderLayer, ZeroSublayersAreIdentity) {
  const auto c = small_config();
  auto w = zero_weights(c);
  Rng rng(5);
  auto& L = w.layers[0];
  L.ln1_gamma = random_matrix(rng, 1, c.embed_dim);
  L.ln2_beta = random_matrix(rng, 1, c.embed_dim);
  const Matrix z = random_matrix(rng, c.keypoints, c.embed_dim);
  EXPECT_EQ(encoder_layer(z, L, c), z);
}

TEST(EncoderLayer, SingleKeypointAttendsToItself) {
  ModelConfig c = small_config();
  c.keypoints = 1;
  c.layers = 1;
  auto p = init_params(c, 6);
  auto& L = p.weights.layers[0];
  L.wo = Matrix::Identity(c.embed_dim, c.embed_dim);
  L.mlp_w1.setZero();
  L.mlp_w2.setZero();
  Rng rng(7);
  const Matrix z = random_matrix(rng, 1, c.embed_dim);
  AttentionTrace trace;
  const Matrix out = encoder_layer(z, L, c, &trace);
  for (const auto& w : trace.weights) {
    ASSERT_EQ(w.size(), 1);
    EXPECT_EQ(w(0, 0), 1.0);
  }
  // Every head returns its slice of the single V row.
  const Matrix v = detail::layer_norm(z, L.ln1_gamma, L.ln1_beta) * L.wv;
  EXPECT_LT((out - z - v).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Encode, NoLayersIsIdentity) {
  ModelConfig c = small_config();
  c.layers = 0;
  const auto p = init_params(c, 1);
  Rng rng(8);
  const Matrix z0 = random_matrix(rng, c.keypoints, c.embed_dim);
  EXPECT_EQ(encode(z0, p).z, z0);
}

TEST(Encode, ShapePreserved) {
  Rng rng(9);
  for (int K : {1, 4, 33}) {
    for (int Dp : {4, 8, 12}) {
      ModelConfig c;
      c.keypoints = K;
      c.embed_dim = Dp;
      c.heads = Dp % 4 == 0 ? 4 : 2;
      c.layers = 2;
      const auto p = init_params(c, 2);
      const auto out = encode(random_matrix(rng, K, Dp), p);
      EXPECT_EQ(out.z.rows(), K);
      EXPECT_EQ(out.z.cols(), Dp);
      EXPECT_EQ(out.pooled.size(), K * Dp);
    }
  }
}

TEST(Encode, PooledIsRowMajorFlattening) {
  const auto p = init_params(small_config(), 3);
  Rng rng(10);
  const auto out = encode(random_matrix(rng, 5, 8), p);
  EXPECT_EQ(out.pooled(8 * 2 + 3), out.z(2, 3));
}

TEST(PoseMapping, ZeroFinalLayerGivesHalf) {
  auto p = init_params(ModelConfig{}, 11);
  p.weights.head_w2.setZero();
  p.weights.head_b2.setZero();
  Rng rng(11);
  const auto scores = forward_frame(random_pose(rng), p).scores;
  ASSERT_EQ(scores.size(), 8);
  EXPECT_TRUE((scores.array() == 0.5).all());
}

TEST(PoseMapping, ScoresInOpenUnitInterval) {
  const auto p = init_params(ModelConfig{}, 12);
  Rng rng(12);
  for (int i = 0; i < 20; ++i) {
    const auto s = forward_frame(random_pose(rng), p).scores;
    EXPECT_EQ(s.size(), 8);
    EXPECT_GT(s.minCoeff(), 0.0);
    EXPECT_LT(s.maxCoeff(), 1.0);
  }
}

TEST(ForwardFrame, DeterministicAndRejectsInvalid) {
  const auto p = init_params(ModelConfig{}, 13);
  Rng rng(13);
  const auto pose = random_pose(rng);
  const auto a = forward_frame(pose, p);
  const auto b = forward_frame(pose, p);
  EXPECT_EQ(a.scores, b.scores);
  EXPECT_EQ(a.encoded.z, b.encoded.z);
  data::PoseFrame invalid;
  invalid.valid = false;
  EXPECT_THROW(forward_frame(invalid, p), ValidationError);
}

TEST(ForwardFrame, IdenticalNormalizedPosesGiveIdenticalOutput) {
  const auto p = init_params(ModelConfig{}, 14);
  Rng rng(14);
  const auto pose = random_pose(rng);
  auto shifted = pose;
  for (auto& kp : shifted.keypoints) {
    kp.x += 0.25;
    kp.y -= 0.125;
  }
  auto copy = pose;
  copy.frame_index = 99;
  EXPECT_EQ(forward_frame(pose, p).encoded.z, forward_frame(copy, p).encoded.z);
  // translated copy normalizes to (almost) the same pose
  EXPECT_LT((forward_frame(pose, p).scores - forward_frame(shifted, p).scores).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(ScoreVideo, ShapeAndSentinel) {
  const auto p = init_params(ModelConfig{}, 15);
  Rng rng(15);
  data::PoseSequence seq;
  seq.video_id = "v";
  for (int t = 0; t < 6; ++t) {
    auto f = random_pose(rng);
    f.frame_index = t;
    if (t == 2) {
      f.valid = false;
      f.keypoints.clear();
    }
    seq.frames.push_back(f);
  }
  const auto s = score_video(seq, p);
  EXPECT_EQ(s.video_id, "v");
  EXPECT_EQ(s.scores.rows(), 8);
  EXPECT_EQ(s.scores.cols(), 6);
  EXPECT_TRUE((s.scores.col(2).array() == 0.5).all());
  EXPECT_EQ(s.scores.col(4).transpose(), forward_frame(seq.frames[4], p).scores);
}

TEST(ScoreVideo, AllInvalidIsAnError) {
  const auto p = init_params(ModelConfig{}, 16);
  data::PoseSequence seq;
  seq.video_id = "empty";
  for (int t = 0; t < 3; ++t) seq.frames.push_back({t, {}, false});
  EXPECT_THROW(score_video(seq, p), ValidationError);
}

TEST(ScoreVideo, FrameOrderDoesNotMatter) {
  const auto p = init_params(small_config(), 17);
  Rng rng(17);
  data::PoseSequence seq;
  for (int t = 0; t < 8; ++t) {
    auto f = random_pose(rng, 5);
    f.frame_index = t;
    seq.frames.push_back(f);
  }
  auto reversed = seq;
  std::reverse(reversed.frames.begin(), reversed.frames.end());
  const auto a = score_video(seq, p).scores;
  const auto b = score_video(reversed, p).scores;
  EXPECT_EQ(a, b.rowwise().reverse().eval());
}

TEST(ModelGraph, TapeForwardMatchesPlainForward) {
  for (bool hidden : {true, false}) {
    ModelConfig c = small_config();
    c.embedding_hidden = hidden;
    const auto p = init_params(c, 18);
    Rng rng(18);
    const auto pose = data::normalize_pose(random_pose(rng, c.keypoints));
    const auto plain = forward_frame(pose, p);
    ad::Tape tape;
    const auto vars = register_params(tape, p);
    const auto g = forward_on_tape(tape, vars, c, pose_matrix(pose));
    EXPECT_LT((g.scores.value() - plain.scores).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((g.pooled.value() - plain.encoded.pooled).cwiseAbs().maxCoeff(), 1e-12);
  }
}
