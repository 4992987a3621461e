#pragma once

#include "poserac/error.hpp"
#include "poserac/tensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

// Reverse-mode differentiation over 2-D tensors. A Tape records one forward
// evaluation as a topologically ordered node list; backward() walks it once in
// reverse. Scalars are 1x1 tensors, vectors are 1xN.
namespace poserac::ad {

enum class Op {
  Leaf,
  MatMul,
  Add,
  AddBias,  // m x n plus a 1 x n row broadcast over rows
  Scale,
  AddScalar,
  Relu,
  Sigmoid,
  SoftmaxRows,
  LayerNorm,  // rowwise, with 1 x n gain and shift
  Flatten,
  Transpose,
  ConcatRows,
  ConcatCols,
  SliceCols,
  Mean,
  Sum,
  Log,
  Hinge,        // max(x, 0) for loss terms; same rule as Relu
  L2Normalize,  // rowwise
  Dot,
  BinaryCrossEntropy,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::MatMul: return "matmul";
    case Op::Add: return "add";
    case Op::AddBias: return "add_bias";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::Relu: return "relu";
    case Op::Sigmoid: return "sigmoid";
    case Op::SoftmaxRows: return "softmax";
    case Op::LayerNorm: return "layernorm";
    case Op::Flatten: return "flatten";
    case Op::Transpose: return "transpose";
    case Op::ConcatRows: return "concat_rows";
    case Op::ConcatCols: return "concat_cols";
    case Op::SliceCols: return "slice_cols";
    case Op::Mean: return "mean";
    case Op::Sum: return "sum";
    case Op::Log: return "log";
    case Op::Hinge: return "max0";
    case Op::L2Normalize: return "l2_normalize";
    case Op::Dot: return "dot";
    case Op::BinaryCrossEntropy: return "bce";
  }
  return "?";
}

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kBceClamp = 1e-12;

class Tape;

// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  inline const Matrix& value() const;
  inline const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

struct Node {
  Matrix value;
  Matrix grad;
  Op op = Op::Leaf;
  std::vector<int> inputs;
  bool requires_grad = false;
  double param = 0.0;  // scale factor, scalar offset, slice start
  Matrix aux;          // op-specific saved state (layernorm xhat, rstd; bce targets; l2 norms)
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Trainable leaf; receives a gradient.
  Var variable(Matrix value) { return push(std::move(value), Op::Leaf, {}, true); }
  // Non-trainable leaf.
  Var constant(Matrix value) { return push(std::move(value), Op::Leaf, {}, false); }

  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

  // Accumulates d(loss)/d(node) for every node that requires a gradient.
  // A tape supports exactly one backward pass.
  void backward(Var loss) {
    if (loss.tape() != this) throw Error("backward: loss node belongs to another tape");
    if (backward_done_) throw Error("backward: already called on this tape; build a new tape per step");
    const Node& ln = node(loss.id());
    if (ln.value.rows() != 1 || ln.value.cols() != 1) {
      throw ShapeError("backward: loss must be scalar, got " + shape_string(ln.value));
    }
    backward_done_ = true;
    for (auto& n : nodes_) {
      if (n.requires_grad) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    }
    if (!nodes_[static_cast<std::size_t>(loss.id())].requires_grad) return;
    nodes_[static_cast<std::size_t>(loss.id())].grad(0, 0) = 1.0;
    for (int i = loss.id(); i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.requires_grad || n.op == Op::Leaf) continue;
      propagate(n);
    }
  }

  // Smallest |input| over every relu / max(.,0) application. Finite-difference
  // checks are unreliable when this is near zero.
  double min_kink_distance() const {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& n : nodes_) {
      if (n.op != Op::Relu && n.op != Op::Hinge) continue;
      const Matrix& x = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
      best = std::min(best, x.cwiseAbs().minCoeff());
    }
    return best;
  }

  Var push(Matrix value, Op op, std::vector<int> inputs, bool requires_grad, double param = 0.0,
           Matrix aux = {}) {
    Node n;
    n.value = std::move(value);
    n.op = op;
    n.inputs = std::move(inputs);
    n.requires_grad = requires_grad;
    n.param = param;
    n.aux = std::move(aux);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size() - 1)};
  }

  bool any_requires_grad(std::initializer_list<Var> vs) const {
    for (const auto& v : vs) {
      if (node(v.id()).requires_grad) return true;
    }
    return false;
  }

 private:
  Matrix& grad_of(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }
  const Matrix& value_of(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool wants(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  void propagate(const Node& n) {
    const Matrix& g = n.grad;
    const auto& in = n.inputs;
    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::MatMul:
        if (wants(in[0])) grad_of(in[0]).noalias() += g * value_of(in[1]).transpose();
        if (wants(in[1])) grad_of(in[1]).noalias() += value_of(in[0]).transpose() * g;
        break;
      case Op::Add:
        if (wants(in[0])) grad_of(in[0]) += g;
        if (wants(in[1])) grad_of(in[1]) += g;
        break;
      case Op::AddBias:
        if (wants(in[0])) grad_of(in[0]) += g;
        if (wants(in[1])) grad_of(in[1]) += g.colwise().sum();
        break;
      case Op::Scale:
        if (wants(in[0])) grad_of(in[0]) += n.param * g;
        break;
      case Op::AddScalar:
        if (wants(in[0])) grad_of(in[0]) += g;
        break;
      case Op::Relu:
      case Op::Hinge:
        if (wants(in[0])) {
          const Matrix& x = value_of(in[0]);
          grad_of(in[0]).array() += (x.array() > 0.0).select(g.array(), 0.0);
        }
        break;
      case Op::Sigmoid:
        if (wants(in[0])) {
          const Matrix& y = n.value;
#ifdef POSERAC_CORRUPT_BACKWARD
          // Deliberately wrong rule for negative-control builds of the gradient checker.
          grad_of(in[0]).array() += g.array() * y.array();
#else
          grad_of(in[0]).array() += g.array() * y.array() * (1.0 - y.array());
#endif
        }
        break;
      case Op::SoftmaxRows:
        if (wants(in[0])) {
          const Matrix& y = n.value;
          const Eigen::VectorXd dots = (g.array() * y.array()).rowwise().sum();
          grad_of(in[0]).array() += y.array() * (g.colwise() - dots).array();
        }
        break;
      case Op::LayerNorm: {
        // aux: [xhat | rstd] with rstd in the last column.
        const Eigen::Index cols = n.value.cols();
        const auto xhat = n.aux.leftCols(cols);
        const auto rstd = n.aux.col(cols);
        const Matrix& gamma = value_of(in[1]);
        if (wants(in[1])) grad_of(in[1]) += (g.array() * xhat.array()).colwise().sum().matrix();
        if (wants(in[2])) grad_of(in[2]) += g.colwise().sum();
        if (wants(in[0])) {
          const double N = static_cast<double>(cols);
          const Matrix dxhat = (g.array().rowwise() * gamma.row(0).array()).matrix();
          const Eigen::VectorXd sum_d = dxhat.rowwise().sum();
          const Eigen::VectorXd sum_dx = (dxhat.array() * xhat.array()).rowwise().sum();
          Matrix dx = N * dxhat;
          dx.colwise() -= sum_d;
          dx.array() -= xhat.array().colwise() * sum_dx.array();
          dx.array().colwise() *= rstd.array() / N;
          grad_of(in[0]) += dx;
        }
        break;
      }
      case Op::Flatten:
        if (wants(in[0])) {
          Matrix& gi = grad_of(in[0]);
          gi += Eigen::Map<const Matrix>(g.data(), gi.rows(), gi.cols());
        }
        break;
      case Op::Transpose:
        if (wants(in[0])) grad_of(in[0]) += g.transpose();
        break;
      case Op::ConcatRows: {
        Eigen::Index r0 = 0;
        for (int id : in) {
          const Eigen::Index r = value_of(id).rows();
          if (wants(id)) grad_of(id) += g.middleRows(r0, r);
          r0 += r;
        }
        break;
      }
      case Op::ConcatCols: {
        Eigen::Index c0 = 0;
        for (int id : in) {
          const Eigen::Index c = value_of(id).cols();
          if (wants(id)) grad_of(id) += g.middleCols(c0, c);
          c0 += c;
        }
        break;
      }
      case Op::SliceCols:
        if (wants(in[0])) grad_of(in[0]).middleCols(static_cast<Eigen::Index>(n.param), g.cols()) += g;
        break;
      case Op::Mean:
        if (wants(in[0])) {
          Matrix& gi = grad_of(in[0]);
          gi.array() += g(0, 0) / static_cast<double>(gi.size());
        }
        break;
      case Op::Sum:
        if (wants(in[0])) grad_of(in[0]).array() += g(0, 0);
        break;
      case Op::Log:
        if (wants(in[0])) grad_of(in[0]).array() += g.array() / value_of(in[0]).array();
        break;
      case Op::L2Normalize:
        if (wants(in[0])) {
          // aux holds the row norms.
          const Matrix& y = n.value;
          const Eigen::VectorXd dots = (g.array() * y.array()).rowwise().sum();
          Matrix dx = g - (y.array().colwise() * dots.array()).matrix();
          dx.array().colwise() /= n.aux.col(0).array();
          grad_of(in[0]) += dx;
        }
        break;
      case Op::Dot:
        if (wants(in[0])) grad_of(in[0]) += g(0, 0) * value_of(in[1]);
        if (wants(in[1])) grad_of(in[1]) += g(0, 0) * value_of(in[0]);
        break;
      case Op::BinaryCrossEntropy:
        if (wants(in[0])) {
          const Matrix& p = value_of(in[0]);
          const Matrix& y = n.aux;
          const double inv_n = 1.0 / static_cast<double>(p.size());
          Matrix& gi = grad_of(in[0]);
          for (Eigen::Index i = 0; i < p.size(); ++i) {
            const double pi = p.data()[i];
            if (pi < kBceClamp || pi > 1.0 - kBceClamp) continue;  // clamped: flat
            gi.data()[i] += g(0, 0) * inv_n * (pi - y.data()[i]) / (pi * (1.0 - pi));
          }
        }
        break;
    }
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

inline const Matrix& Var::value() const { return tape_->node(id_).value; }
inline const Matrix& Var::grad() const {
  const Node& n = tape_->node(id_);
  if (!tape_->backward_done()) throw Error("grad: backward has not run");
  if (!n.requires_grad) throw Error("grad: node does not require a gradient");
  return n.grad;
}

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

namespace detail {
inline Tape& same_tape(std::initializer_list<Var> vs, const char* op) {
  Tape* t = vs.begin()->tape();
  for (const auto& v : vs) {
    if (!v.valid() || v.tape() != t) throw Error(std::string(op) + ": operands must share one tape");
  }
  return *t;
}

[[noreturn]] inline void shape_mismatch(const char* op, const Matrix& a, const Matrix& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b));
}
}  // namespace detail

inline Var matmul(Var a, Var b) {
  Tape& t = detail::same_tape({a, b}, "matmul");
  if (a.cols() != b.rows()) detail::shape_mismatch("matmul", a.value(), b.value());
  Matrix v = a.value() * b.value();
  return t.push(std::move(v), Op::MatMul, {a.id(), b.id()}, t.any_requires_grad({a, b}));
}

inline Var add(Var a, Var b) {
  Tape& t = detail::same_tape({a, b}, "add");
  if (a.rows() != b.rows() || a.cols() != b.cols()) detail::shape_mismatch("add", a.value(), b.value());
  return t.push(a.value() + b.value(), Op::Add, {a.id(), b.id()}, t.any_requires_grad({a, b}));
}

inline Var add_bias(Var a, Var bias) {
  Tape& t = detail::same_tape({a, bias}, "add_bias");
  if (bias.rows() != 1 || bias.cols() != a.cols()) detail::shape_mismatch("add_bias", a.value(), bias.value());
  Matrix v = a.value();
  v.rowwise() += bias.value().row(0);
  return t.push(std::move(v), Op::AddBias, {a.id(), bias.id()}, t.any_requires_grad({a, bias}));
}

inline Var scale(Var a, double s) {
  Tape& t = *a.tape();
  return t.push(s * a.value(), Op::Scale, {a.id()}, t.any_requires_grad({a}), s);
}

inline Var add_scalar(Var a, double s) {
  Tape& t = *a.tape();
  return t.push((a.value().array() + s).matrix(), Op::AddScalar, {a.id()}, t.any_requires_grad({a}), s);
}

inline Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

inline Var relu(Var a) {
  Tape& t = *a.tape();
  return t.push(a.value().cwiseMax(0.0), Op::Relu, {a.id()}, t.any_requires_grad({a}));
}

inline Var hinge(Var a) {
  Tape& t = *a.tape();
  return t.push(a.value().cwiseMax(0.0), Op::Hinge, {a.id()}, t.any_requires_grad({a}));
}

inline Var sigmoid(Var a) {
  Tape& t = *a.tape();
  Matrix v = a.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  return t.push(std::move(v), Op::Sigmoid, {a.id()}, t.any_requires_grad({a}));
}

inline Var softmax_rows(Var a) {
  Tape& t = *a.tape();
  Matrix v = a.value();
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double m = v.row(r).maxCoeff();
    v.row(r) = (v.row(r).array() - m).exp().matrix();
    v.row(r) /= v.row(r).sum();
  }
  return t.push(std::move(v), Op::SoftmaxRows, {a.id()}, t.any_requires_grad({a}));
}

inline Var layer_norm(Var x, Var gamma, Var beta) {
  Tape& t = detail::same_tape({x, gamma, beta}, "layernorm");
  const Eigen::Index n = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != n) detail::shape_mismatch("layernorm", x.value(), gamma.value());
  if (beta.rows() != 1 || beta.cols() != n) detail::shape_mismatch("layernorm", x.value(), beta.value());
  const Matrix& xv = x.value();
  Matrix aux(xv.rows(), n + 1);
  Matrix y(xv.rows(), n);
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mean = xv.row(r).sum() / static_cast<double>(n);
    const double var = (xv.row(r).array() - mean).square().sum() / static_cast<double>(n);
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    aux.row(r).head(n) = ((xv.row(r).array() - mean) * rstd).matrix();
    aux(r, n) = rstd;
    y.row(r) = (aux.row(r).head(n).array() * gamma.value().row(0).array() + beta.value().row(0).array()).matrix();
  }
  return t.push(std::move(y), Op::LayerNorm, {x.id(), gamma.id(), beta.id()},
                t.any_requires_grad({x, gamma, beta}), 0.0, std::move(aux));
}

// Row-major flattening to 1 x (rows*cols).
inline Var flatten(Var a) {
  Tape& t = *a.tape();
  Matrix v = Eigen::Map<const Matrix>(a.value().data(), 1, a.value().size());
  return t.push(std::move(v), Op::Flatten, {a.id()}, t.any_requires_grad({a}));
}

inline Var transpose(Var a) {
  Tape& t = *a.tape();
  return t.push(a.value().transpose(), Op::Transpose, {a.id()}, t.any_requires_grad({a}));
}

inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  Tape& t = *parts[0].tape();
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts[0].cols();
  bool rg = false;
  std::vector<int> ids;
  for (const auto& p : parts) {
    if (p.tape() != &t) throw Error("concat_rows: operands must share one tape");
    if (p.cols() != cols) detail::shape_mismatch("concat_rows", parts[0].value(), p.value());
    rows += p.rows();
    rg = rg || t.node(p.id()).requires_grad;
    ids.push_back(p.id());
  }
  Matrix v(rows, cols);
  Eigen::Index r0 = 0;
  for (const auto& p : parts) {
    v.middleRows(r0, p.rows()) = p.value();
    r0 += p.rows();
  }
  return t.push(std::move(v), Op::ConcatRows, std::move(ids), rg);
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  Tape& t = *parts[0].tape();
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  bool rg = false;
  std::vector<int> ids;
  for (const auto& p : parts) {
    if (p.tape() != &t) throw Error("concat_cols: operands must share one tape");
    if (p.rows() != rows) detail::shape_mismatch("concat_cols", parts[0].value(), p.value());
    cols += p.cols();
    rg = rg || t.node(p.id()).requires_grad;
    ids.push_back(p.id());
  }
  Matrix v(rows, cols);
  Eigen::Index c0 = 0;
  for (const auto& p : parts) {
    v.middleCols(c0, p.cols()) = p.value();
    c0 += p.cols();
  }
  return t.push(std::move(v), Op::ConcatCols, std::move(ids), rg);
}

inline Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of range for " + shape_string(a.value()));
  }
  Tape& t = *a.tape();
  return t.push(a.value().middleCols(start, count), Op::SliceCols, {a.id()}, t.any_requires_grad({a}),
                static_cast<double>(start));
}

inline Var mean(Var a) {
  Tape& t = *a.tape();
  if (a.value().size() == 0) throw ShapeError("mean: empty tensor");
  return t.push(Matrix::Constant(1, 1, a.value().mean()), Op::Mean, {a.id()}, t.any_requires_grad({a}));
}

inline Var sum(Var a) {
  Tape& t = *a.tape();
  return t.push(Matrix::Constant(1, 1, a.value().sum()), Op::Sum, {a.id()}, t.any_requires_grad({a}));
}

inline Var log(Var a) {
  Tape& t = *a.tape();
  if ((a.value().array() <= 0.0).any()) throw NumericError("log: non-positive argument");
  return t.push(a.value().array().log().matrix(), Op::Log, {a.id()}, t.any_requires_grad({a}));
}

// Rowwise x / ||x||.
inline Var l2_normalize(Var a) {
  Tape& t = *a.tape();
  const Matrix& x = a.value();
  Matrix norms(x.rows(), 1);
  Matrix v(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double n = x.row(r).norm();
    if (!(n > 0.0)) throw NumericError("l2_normalize: zero-norm row");
    norms(r, 0) = n;
    v.row(r) = x.row(r) / n;
  }
  return t.push(std::move(v), Op::L2Normalize, {a.id()}, t.any_requires_grad({a}), 0.0, std::move(norms));
}

// Sum of elementwise products of equally shaped tensors.
inline Var dot(Var a, Var b) {
  Tape& t = detail::same_tape({a, b}, "dot");
  if (a.rows() != b.rows() || a.cols() != b.cols()) detail::shape_mismatch("dot", a.value(), b.value());
  const double d = (a.value().array() * b.value().array()).sum();
  return t.push(Matrix::Constant(1, 1, d), Op::Dot, {a.id(), b.id()}, t.any_requires_grad({a, b}));
}

// Mean binary cross-entropy over all entries, predictions clamped to
// [1e-12, 1 - 1e-12]. Targets are constants.
inline Var binary_cross_entropy(Var pred, const Matrix& targets) {
  Tape& t = *pred.tape();
  const Matrix& p = pred.value();
  if (p.rows() != targets.rows() || p.cols() != targets.cols()) detail::shape_mismatch("bce", p, targets);
  double total = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double pi = std::clamp(p.data()[i], kBceClamp, 1.0 - kBceClamp);
    const double yi = targets.data()[i];
    total -= yi * std::log(pi) + (1.0 - yi) * std::log(1.0 - pi);
  }
  return t.push(Matrix::Constant(1, 1, total / static_cast<double>(p.size())), Op::BinaryCrossEntropy, {pred.id()},
                t.any_requires_grad({pred}), 0.0, targets);
}

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

// Central differences of `f` with respect to every entry of `params`, using
// step rel_step * max(|theta|, 1). Entries are perturbed in place and restored.
inline std::vector<Matrix> finite_difference_gradient(const std::function<double()>& f,
                                                      std::span<Matrix* const> params, double rel_step = 1e-4) {
  std::vector<Matrix> grads;
  grads.reserve(params.size());
  for (Matrix* m : params) {
    Matrix g(m->rows(), m->cols());
    for (Eigen::Index i = 0; i < m->size(); ++i) {
      double& theta = m->data()[i];
      const double saved = theta;
      const double h = rel_step * std::max(std::abs(saved), 1.0);
      theta = saved + h;
      const double up = f();
      theta = saved - h;
      const double down = f();
      theta = saved;
      g.data()[i] = (up - down) / (2.0 * h);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

// max |a - b| / max(|b|, floor) over all entries; b is the reference.
inline double max_relative_error(std::span<const Matrix> a, std::span<const Matrix> b, double floor = 1e-6) {
  if (a.size() != b.size()) throw ShapeError("max_relative_error: tensor count mismatch");
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k].rows() != b[k].rows() || a[k].cols() != b[k].cols()) {
      detail::shape_mismatch("max_relative_error", a[k], b[k]);
    }
    for (Eigen::Index i = 0; i < a[k].size(); ++i) {
      const double ref = b[k].data()[i];
      const double err = std::abs(a[k].data()[i] - ref) / std::max(std::abs(ref), floor);
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace poserac::ad
