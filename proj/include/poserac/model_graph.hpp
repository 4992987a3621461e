#pragma once

#include "poserac/autodiff.hpp"
#include "poserac/model.hpp"

#include <cmath>
#include <vector>

// The model forward pass expressed in tape primitives, for training and
// gradient checking. Must agree with the plain forward in model.hpp.
namespace poserac::model {

using ParamVars = Weights<ad::Var>;

inline ParamVars register_params(ad::Tape& tape, const ModelParams& params) {
  return map_weights<ad::Var>(params.weights, params.config.embedding_hidden,
                              [&](const std::string&, const Matrix& m) { return tape.variable(m); });
}

// Gradients of every registered parameter, in the same layout as ModelParams.
inline Weights<Matrix> collect_gradients(const ParamVars& vars, const ModelConfig& config) {
  return map_weights<Matrix>(vars, config.embedding_hidden,
                             [](const std::string&, const ad::Var& v) { return v.grad(); });
}

struct FrameGraph {
  ad::Var pooled;  // 1 x K*D'
  ad::Var scores;  // 1 x C
};

inline ad::Var embed_on_tape(ad::Var pose, const ParamVars& w, const ModelConfig& c) {
  ad::Var h = ad::add_bias(ad::matmul(pose, w.embed_w1), w.embed_b1);
  if (!c.embedding_hidden) return h;
  return ad::add_bias(ad::matmul(ad::relu(h), w.embed_w2), w.embed_b2);
}

inline ad::Var encoder_layer_on_tape(ad::Var z, const LayerWeights<ad::Var>& L, const ModelConfig& c) {
  const int hd = c.resolved_head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  ad::Var x = ad::layer_norm(z, L.ln1_gamma, L.ln1_beta);
  ad::Var q = ad::matmul(x, L.wq);
  ad::Var k = ad::matmul(x, L.wk);
  ad::Var v = ad::matmul(x, L.wv);
  std::vector<ad::Var> heads;
  heads.reserve(static_cast<std::size_t>(c.heads));
  for (int h = 0; h < c.heads; ++h) {
    const Eigen::Index c0 = static_cast<Eigen::Index>(h) * hd;
    ad::Var qh = ad::slice_cols(q, c0, hd);
    ad::Var kh = ad::slice_cols(k, c0, hd);
    ad::Var vh = ad::slice_cols(v, c0, hd);
    ad::Var attn = ad::softmax_rows(ad::scale(ad::matmul(qh, ad::transpose(kh)), scale));
    heads.push_back(ad::matmul(attn, vh));
  }
  ad::Var zh = ad::add(ad::add_bias(ad::matmul(ad::concat_cols(heads), L.wo), L.bo), z);

  ad::Var x2 = ad::layer_norm(zh, L.ln2_gamma, L.ln2_beta);
  ad::Var hidden = ad::relu(ad::add_bias(ad::matmul(x2, L.mlp_w1), L.mlp_b1));
  return ad::add(ad::add_bias(ad::matmul(hidden, L.mlp_w2), L.mlp_b2), zh);
}

// `pose` is the K x D matrix of an already-normalized frame.
inline FrameGraph forward_on_tape(ad::Tape& tape, const ParamVars& w, const ModelConfig& c, const Matrix& pose) {
  if (pose.rows() != c.keypoints || pose.cols() != c.keypoint_dim) {
    throw ShapeError("forward_on_tape: pose " + shape_string(pose) + " expected " +
                     shape_string(c.keypoints, c.keypoint_dim));
  }
  ad::Var z = embed_on_tape(tape.constant(pose), w, c);
  for (const auto& L : w.layers) z = encoder_layer_on_tape(z, L, c);
  FrameGraph out;
  out.pooled = ad::flatten(z);
  ad::Var h = ad::relu(ad::add_bias(ad::matmul(out.pooled, w.head_w1), w.head_b1));
  out.scores = ad::sigmoid(ad::add_bias(ad::matmul(h, w.head_w2), w.head_b2));
  return out;
}

}  // namespace poserac::model
