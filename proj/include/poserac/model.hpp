#pragma once

#include "poserac/data_model.hpp"
#include "poserac/error.hpp"
#include "poserac/rng.hpp"
#include "poserac/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace poserac::model {

struct ModelConfig {
  int keypoints = data::kDefaultKeypoints;  // K
  int keypoint_dim = data::kKeypointDim;    // D
  int embed_dim = 64;                       // D'
  int layers = 6;                           // L
  int heads = 4;                            // H
  int head_dim = 0;                         // D_q = D_k = D_v; 0 means embed_dim / heads
  int mlp_hidden = 0;                       // 0 means 2 * embed_dim
  int num_classes = 8;                      // C
  int mapping_hidden = 128;
  bool embedding_hidden = true;  // false collapses the embedding to one affine layer

  int resolved_head_dim() const { return head_dim > 0 ? head_dim : embed_dim / heads; }
  int resolved_mlp_hidden() const { return mlp_hidden > 0 ? mlp_hidden : 2 * embed_dim; }
  int pooled_dim() const { return keypoints * embed_dim; }

  void validate() const {
    auto require = [](bool ok, const std::string& what) {
      if (!ok) throw ConfigError("invalid model config: " + what);
    };
    require(keypoints >= 1, "keypoints must be >= 1");
    require(keypoint_dim >= 1, "keypoint_dim must be >= 1");
    require(embed_dim >= 1, "embed_dim must be >= 1");
    require(layers >= 0, "layers must be >= 0");
    require(heads >= 1, "heads must be >= 1");
    require(embed_dim % heads == 0, "embed_dim (" + std::to_string(embed_dim) + ") must be divisible by heads (" +
                                        std::to_string(heads) + ")");
    require(head_dim >= 0, "head_dim must be >= 0");
    require(mlp_hidden >= 0, "mlp_hidden must be >= 0");
    require(num_classes >= 1, "num_classes must be >= 1");
    require(mapping_hidden >= 1, "mapping_hidden must be >= 1");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Trainable tensors of one encoder layer. Per-head projections are stored as
// column blocks: head h owns columns [h*head_dim, (h+1)*head_dim) of wq/wk/wv.
template <class T>
struct LayerWeights {
  T ln1_gamma, ln1_beta;
  T wq, wk, wv;
  T wo, bo;
  T ln2_gamma, ln2_beta;
  T mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

template <class T>
struct Weights {
  T embed_w1, embed_b1, embed_w2, embed_b2;
  std::vector<LayerWeights<T>> layers;
  T head_w1, head_b1, head_w2, head_b2;
};

// Visits every tensor with a stable name, in a fixed order. The embedding's
// second layer is skipped when `embedding_hidden` is off.
template <class W, class F>
void for_each_tensor(W& w, bool embedding_hidden, F&& f) {
  f("embed.w1", w.embed_w1);
  f("embed.b1", w.embed_b1);
  if (embedding_hidden) {
    f("embed.w2", w.embed_w2);
    f("embed.b2", w.embed_b2);
  }
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    auto& L = w.layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    f(p + "ln1.gamma", L.ln1_gamma);
    f(p + "ln1.beta", L.ln1_beta);
    f(p + "attn.wq", L.wq);
    f(p + "attn.wk", L.wk);
    f(p + "attn.wv", L.wv);
    f(p + "attn.wo", L.wo);
    f(p + "attn.bo", L.bo);
    f(p + "ln2.gamma", L.ln2_gamma);
    f(p + "ln2.beta", L.ln2_beta);
    f(p + "mlp.w1", L.mlp_w1);
    f(p + "mlp.b1", L.mlp_b1);
    f(p + "mlp.w2", L.mlp_w2);
    f(p + "mlp.b2", L.mlp_b2);
  }
  f("head.w1", w.head_w1);
  f("head.b1", w.head_b1);
  f("head.w2", w.head_w2);
  f("head.b2", w.head_b2);
}

// Builds a Weights<U> with the same layout by applying `fn` to every tensor.
template <class U, class T, class Fn>
Weights<U> map_weights(const Weights<T>& w, bool embedding_hidden, Fn&& fn) {
  Weights<U> out;
  out.layers.resize(w.layers.size());
  std::vector<const T*> src;
  for_each_tensor(w, embedding_hidden, [&](const std::string&, const T& t) { src.push_back(&t); });
  std::size_t i = 0;
  for_each_tensor(out, embedding_hidden, [&](const std::string& name, U& u) { u = fn(name, *src[i++]); });
  return out;
}

struct ModelParams {
  ModelConfig config;
  Weights<Matrix> weights;

  std::vector<Matrix*> tensors() {
    std::vector<Matrix*> out;
    for_each_tensor(weights, config.embedding_hidden, [&](const std::string&, Matrix& m) { out.push_back(&m); });
    return out;
  }

  std::vector<std::string> tensor_names() const {
    std::vector<std::string> out;
    for_each_tensor(weights, config.embedding_hidden, [&](const std::string& n, const Matrix&) { out.push_back(n); });
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor(weights, config.embedding_hidden, [&](const std::string&, const Matrix& m) {
      n += static_cast<std::size_t>(m.size());
    });
    return n;
  }
};

// Expected shape of every tensor under `config`, in visiting order.
inline Weights<Matrix> zero_weights(const ModelConfig& c) {
  c.validate();
  const auto Dp = c.embed_dim;
  const auto hd = c.resolved_head_dim() * c.heads;
  const auto mh = c.resolved_mlp_hidden();
  Weights<Matrix> w;
  w.embed_w1 = Matrix::Zero(c.keypoint_dim, Dp);
  w.embed_b1 = Matrix::Zero(1, Dp);
  if (c.embedding_hidden) {
    w.embed_w2 = Matrix::Zero(Dp, Dp);
    w.embed_b2 = Matrix::Zero(1, Dp);
  }
  w.layers.resize(static_cast<std::size_t>(c.layers));
  for (auto& L : w.layers) {
    L.ln1_gamma = Matrix::Ones(1, Dp);
    L.ln1_beta = Matrix::Zero(1, Dp);
    L.wq = Matrix::Zero(Dp, hd);
    L.wk = Matrix::Zero(Dp, hd);
    L.wv = Matrix::Zero(Dp, hd);
    L.wo = Matrix::Zero(hd, Dp);
    L.bo = Matrix::Zero(1, Dp);
    L.ln2_gamma = Matrix::Ones(1, Dp);
    L.ln2_beta = Matrix::Zero(1, Dp);
    L.mlp_w1 = Matrix::Zero(Dp, mh);
    L.mlp_b1 = Matrix::Zero(1, mh);
    L.mlp_w2 = Matrix::Zero(mh, Dp);
    L.mlp_b2 = Matrix::Zero(1, Dp);
  }
  w.head_w1 = Matrix::Zero(c.pooled_dim(), c.mapping_hidden);
  w.head_b1 = Matrix::Zero(1, c.mapping_hidden);
  w.head_w2 = Matrix::Zero(c.mapping_hidden, c.num_classes);
  w.head_b2 = Matrix::Zero(1, c.num_classes);
  return w;
}

// Weight matrices ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases 0; LayerNorm
// scale 1, shift 0.
inline ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p{config, zero_weights(config)};
  Rng rng(seed);
  auto fill = [&](Matrix& m) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(m.rows()));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
  };
  fill(p.weights.embed_w1);
  if (config.embedding_hidden) fill(p.weights.embed_w2);
  for (auto& L : p.weights.layers) {
    fill(L.wq);
    fill(L.wk);
    fill(L.wv);
    fill(L.wo);
    fill(L.mlp_w1);
    fill(L.mlp_w2);
  }
  fill(p.weights.head_w1);
  fill(p.weights.head_w2);
  return p;
}

inline bool params_bit_equal(const ModelParams& a, const ModelParams& b) {
  if (!(a.config == b.config)) return false;
  std::vector<const Matrix*> ta;
  for_each_tensor(a.weights, a.config.embedding_hidden, [&](const std::string&, const Matrix& m) { ta.push_back(&m); });
  std::size_t i = 0;
  bool same = true;
  for_each_tensor(b.weights, b.config.embedding_hidden, [&](const std::string&, const Matrix& m) {
    same = same && i < ta.size() && bit_equal(*ta[i], m);
    ++i;
  });
  return same && i == ta.size();
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

struct EncoderOutput {
  Matrix z;         // K x D'
  RowVector pooled;  // row-major flattening of z
};

struct FrameOutput {
  EncoderOutput encoded;
  RowVector scores;  // C sigmoid scores
};

struct ScoreMatrix {
  std::string video_id;
  Matrix scores;  // C x T

  RowVector class_series(int c) const { return scores.row(c); }
};

// Collects per-head attention matrices (K x K) when passed to the forward pass.
struct AttentionTrace {
  std::vector<Matrix> weights;
};

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kInvalidFrameScore = 0.5;

namespace detail {

inline Matrix layer_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta) {
  Matrix y(x.rows(), x.cols());
  const double n = static_cast<double>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() / n;
    const double var = (x.row(r).array() - mean).square().sum() / n;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    y.row(r) = ((x.row(r).array() - mean) * inv * gamma.row(0).array() + beta.row(0).array()).matrix();
  }
  return y;
}

inline void softmax_rows_inplace(Matrix& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double m = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - m).exp().matrix();
    s.row(r) /= s.row(r).sum();
  }
}

inline Matrix relu(Matrix x) { return x.cwiseMax(0.0); }

}  // namespace detail

// K x D matrix of the pose's keypoint coordinates.
inline Matrix pose_matrix(const data::PoseFrame& pose) {
  if (!pose.valid) throw ValidationError("frame " + std::to_string(pose.frame_index) + " is invalid (no person)");
  Matrix m(static_cast<Eigen::Index>(pose.keypoints.size()), data::kKeypointDim);
  for (std::size_t j = 0; j < pose.keypoints.size(); ++j) {
    const auto r = static_cast<Eigen::Index>(j);
    m(r, 0) = pose.keypoints[j].x;
    m(r, 1) = pose.keypoints[j].y;
    m(r, 2) = pose.keypoints[j].z;
  }
  return m;
}

// Applies the shared per-keypoint embedding to every row.
inline Matrix embed_keypoints(const Matrix& pose, const ModelParams& params) {
  const auto& c = params.config;
  if (pose.rows() != c.keypoints || pose.cols() != c.keypoint_dim) {
    throw ShapeError("embed_keypoints: pose " + shape_string(pose) + " does not match config " +
                     shape_string(c.keypoints, c.keypoint_dim));
  }
  if (!all_finite(pose)) throw NumericError("embed_keypoints: non-finite keypoint coordinate");
  const auto& w = params.weights;
  Matrix h = pose * w.embed_w1;
  h.rowwise() += w.embed_b1.row(0);
  if (!c.embedding_hidden) return h;
  h = detail::relu(std::move(h));
  Matrix z = h * w.embed_w2;
  z.rowwise() += w.embed_b2.row(0);
  return z;
}

// One pre-norm encoder layer:
//   Zh = MHSA(LN(Z)) + Z ;  Z' = MLP(LN(Zh)) + Zh
inline Matrix encoder_layer(const Matrix& z, const LayerWeights<Matrix>& L, const ModelConfig& c,
                            AttentionTrace* trace = nullptr) {
  const int hd = c.resolved_head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  const Matrix x = detail::layer_norm(z, L.ln1_gamma, L.ln1_beta);
  const Matrix q = x * L.wq;
  const Matrix k = x * L.wk;
  const Matrix v = x * L.wv;
  Matrix heads(z.rows(), static_cast<Eigen::Index>(hd) * c.heads);
  for (int h = 0; h < c.heads; ++h) {
    const auto c0 = static_cast<Eigen::Index>(h) * hd;
    Matrix s = (q.middleCols(c0, hd) * k.middleCols(c0, hd).transpose()) * scale;
    detail::softmax_rows_inplace(s);
    heads.middleCols(c0, hd).noalias() = s * v.middleCols(c0, hd);
    if (trace) trace->weights.push_back(std::move(s));
  }
  Matrix zh = heads * L.wo;
  zh.rowwise() += L.bo.row(0);
  zh += z;

  const Matrix x2 = detail::layer_norm(zh, L.ln2_gamma, L.ln2_beta);
  Matrix hidden = x2 * L.mlp_w1;
  hidden.rowwise() += L.mlp_b1.row(0);
  hidden = detail::relu(std::move(hidden));
  Matrix out = hidden * L.mlp_w2;
  out.rowwise() += L.mlp_b2.row(0);
  out += zh;
  return out;
}

inline EncoderOutput encode(const Matrix& z0, const ModelParams& params, AttentionTrace* trace = nullptr) {
  const auto& c = params.config;
  if (z0.rows() != c.keypoints || z0.cols() != c.embed_dim) {
    throw ShapeError("encode: input " + shape_string(z0) + " expected " + shape_string(c.keypoints, c.embed_dim));
  }
  EncoderOutput out;
  out.z = z0;
  for (const auto& L : params.weights.layers) out.z = encoder_layer(out.z, L, c, trace);
  out.pooled = Eigen::Map<const RowVector>(out.z.data(), out.z.size());
  return out;
}

inline RowVector pose_mapping(const EncoderOutput& encoded, const ModelParams& params) {
  const auto& w = params.weights;
  if (encoded.pooled.size() != w.head_w1.rows()) {
    throw ShapeError("pose_mapping: pooled length " + std::to_string(encoded.pooled.size()) + " expected " +
                     std::to_string(w.head_w1.rows()));
  }
  RowVector h = encoded.pooled * w.head_w1 + w.head_b1;
  h = h.cwiseMax(0.0);
  RowVector logits = h * w.head_w2 + w.head_b2;
  return logits.unaryExpr([](double t) { return 1.0 / (1.0 + std::exp(-t)); });
}

// Normalizes the raw pose, then embeds, encodes and maps it to class scores.
inline FrameOutput forward_frame(const data::PoseFrame& pose, const ModelParams& params,
                                 const data::NormalizeOptions& norm = {}, AttentionTrace* trace = nullptr) {
  const data::PoseFrame normalized = data::normalize_pose(pose, norm);
  FrameOutput out;
  out.encoded = encode(embed_keypoints(pose_matrix(normalized), params), params, trace);
  out.scores = pose_mapping(out.encoded, params);
  return out;
}

// Scores every frame of a video. Invalid or degenerate frames get the neutral
// score 0.5 in every class.
inline ScoreMatrix score_video(const data::PoseSequence& seq, const ModelParams& params,
                               const data::NormalizeOptions& norm = {}) {
  const auto T = static_cast<Eigen::Index>(seq.frames.size());
  ScoreMatrix out{seq.video_id, Matrix::Constant(params.config.num_classes, T, kInvalidFrameScore)};
  std::size_t scored = 0;
  for (Eigen::Index t = 0; t < T; ++t) {
    const auto& frame = seq.frames[static_cast<std::size_t>(t)];
    if (!frame.valid) continue;
    try {
      out.scores.col(t) = forward_frame(frame, params, norm).scores.transpose();
      ++scored;
    } catch (const DegeneratePoseError&) {
    }
  }
  if (scored == 0) throw ValidationError("video '" + seq.video_id + "' has no valid frames");
  return out;
}

}  // namespace poserac::model
