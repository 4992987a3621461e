#include "poserac/autodiff.hpp"
#include "poserac/gradcheck.hpp"
#include "poserac/model_graph.hpp"
#include "poserac/rng.hpp"
#include "poserac/training.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>

using namespace poserac;
using ad::Tape;
using ad::Var;

namespace {

using Graph = std::function<Var(Tape&, const std::vector<Var>&)>;

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

// Backward on one tape vs central differences over fresh tapes.
double gradient_error(const Graph& g, std::vector<Matrix> inputs) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& m : inputs) vars.push_back(tape.variable(m));
  tape.backward(g(tape, vars));
  std::vector<Matrix> analytic;
  for (const auto& v : vars) analytic.push_back(v.grad());

  auto f = [&] {
    Tape t;
    std::vector<Var> vs;
    for (const auto& m : inputs) vs.push_back(t.variable(m));
    return g(t, vs).scalar();
  };
  std::vector<Matrix*> ptrs;
  for (auto& m : inputs) ptrs.push_back(&m);
  const auto numeric = ad::finite_difference_gradient(f, ptrs, 1e-6);
  return ad::max_relative_error(analytic, numeric);
}

// Weighted sum so every output entry gets a distinct upstream gradient.
Var weighted_sum(Tape& t, Var v) {
  Matrix w(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = 0.3 + 0.17 * static_cast<double>(i % 7);
  return ad::dot(v, t.constant(w));
}

}  // namespace

TEST(AutodiffPrimitives, ReluBackwardAtNegativeIsZero) {
  Tape t;
  auto x = t.variable(Matrix::Constant(1, 1, -1.0));
  t.backward(ad::sum(ad::relu(x)));
  EXPECT_EQ(x.grad()(0, 0), 0.0);
}

TEST(AutodiffPrimitives, SigmoidDerivativeAtZero) {
  Tape t;
  auto x = t.variable(Matrix::Zero(1, 1));
  auto y = ad::sigmoid(x);
  EXPECT_EQ(y.scalar(), 0.5);
  t.backward(ad::sum(y));
  EXPECT_NEAR(x.grad()(0, 0), 0.25, 1e-15);
}

TEST(AutodiffPrimitives, SoftmaxOfZeros) {
  Tape t;
  auto y = ad::softmax_rows(t.constant(Matrix::Zero(1, 2)));
  EXPECT_EQ(y.value()(0, 0), 0.5);
  EXPECT_EQ(y.value()(0, 1), 0.5);
}

TEST(AutodiffPrimitives, HingeAtKinkHasZeroSubgradient) {
  Tape t;
  auto x = t.variable(Matrix::Zero(1, 1));
  t.backward(ad::sum(ad::hinge(x)));
  EXPECT_EQ(x.grad()(0, 0), 0.0);
}

TEST(AutodiffPrimitives, FiniteDifferenceAgreement) {
  Rng rng(42);
  const Matrix a = random_matrix(rng, 3, 4);
  const Matrix b = random_matrix(rng, 4, 5);
  const Matrix c = random_matrix(rng, 3, 4);
  const Matrix bias = random_matrix(rng, 1, 4);
  const Matrix pos = random_matrix(rng, 3, 4, 0.5, 2.0);
  const Matrix gamma = random_matrix(rng, 1, 4, 0.5, 1.5);

  struct Case {
    const char* name;
    Graph g;
    std::vector<Matrix> in;
  };
  const std::vector<Case> cases = {
      {"matmul", [](Tape& t, auto& v) { return weighted_sum(t, ad::matmul(v[0], v[1])); }, {a, b}},
      {"add", [](Tape& t, auto& v) { return weighted_sum(t, ad::add(v[0], v[1])); }, {a, c}},
      {"add_bias", [](Tape& t, auto& v) { return weighted_sum(t, ad::add_bias(v[0], v[1])); }, {a, bias}},
      {"scale", [](Tape& t, auto& v) { return weighted_sum(t, ad::scale(v[0], -2.5)); }, {a}},
      {"add_scalar", [](Tape& t, auto& v) { return weighted_sum(t, ad::add_scalar(v[0], 0.7)); }, {a}},
      {"sub", [](Tape& t, auto& v) { return weighted_sum(t, ad::sub(v[0], v[1])); }, {a, c}},
      {"relu", [](Tape& t, auto& v) { return weighted_sum(t, ad::relu(v[0])); }, {a}},
      {"hinge", [](Tape& t, auto& v) { return weighted_sum(t, ad::hinge(v[0])); }, {a}},
      {"sigmoid", [](Tape& t, auto& v) { return weighted_sum(t, ad::sigmoid(v[0])); }, {a}},
      {"softmax_rows", [](Tape& t, auto& v) { return weighted_sum(t, ad::softmax_rows(v[0])); }, {a}},
      {"layer_norm",
       [](Tape& t, auto& v) { return weighted_sum(t, ad::layer_norm(v[0], v[1], v[2])); },
       {a, gamma, bias}},
      {"flatten", [](Tape& t, auto& v) { return weighted_sum(t, ad::flatten(v[0])); }, {a}},
      {"transpose", [](Tape& t, auto& v) { return weighted_sum(t, ad::transpose(v[0])); }, {a}},
      {"concat_rows",
       [](Tape& t, auto& v) {
         const Var parts[] = {v[0], v[1]};
         return weighted_sum(t, ad::concat_rows(parts));
       },
       {a, c}},
      {"concat_cols",
       [](Tape& t, auto& v) {
         const Var parts[] = {v[0], v[1]};
         return weighted_sum(t, ad::concat_cols(parts));
       },
       {a, b.transpose().eval().topRows(3).eval()}},
      {"slice_cols", [](Tape& t, auto& v) { return weighted_sum(t, ad::slice_cols(v[0], 1, 2)); }, {a}},
      {"mean", [](Tape&, auto& v) { return ad::mean(v[0]); }, {a}},
      {"sum", [](Tape&, auto& v) { return ad::sum(v[0]); }, {a}},
      {"log", [](Tape& t, auto& v) { return weighted_sum(t, ad::log(v[0])); }, {pos}},
      {"l2_normalize", [](Tape& t, auto& v) { return weighted_sum(t, ad::l2_normalize(v[0])); }, {a}},
      {"dot", [](Tape&, auto& v) { return ad::dot(v[0], v[1]); }, {a, c}},
      {"bce",
       [](Tape&, auto& v) {
         Matrix y(3, 4);
         y << 1, 0, 0.5, 0.5, 0.5, 1, 0, 0.5, 0.2, 0.5, 0.5, 1;
         return ad::binary_cross_entropy(ad::sigmoid(v[0]), y);
       },
       {a}},
  };
  for (const auto& c : cases) {
    EXPECT_LT(gradient_error(c.g, c.in), 1e-6) << c.name;
  }
}

TEST(AutodiffBackward, SumOfParamsHasUnitGradients) {
  Tape t;
  auto x = t.variable(Matrix::Constant(2, 3, 4.0));
  auto y = t.variable(Matrix::Constant(1, 1, -1.0));
  t.backward(ad::add(ad::sum(x), ad::sum(y)));
  EXPECT_TRUE((x.grad().array() == 1.0).all());
  EXPECT_EQ(y.grad()(0, 0), 1.0);
}

TEST(AutodiffBackward, UnusedParameterGetsZero) {
  Tape t;
  auto x = t.variable(Matrix::Constant(2, 2, 1.0));
  auto unused = t.variable(Matrix::Constant(3, 1, 1.0));
  t.backward(ad::sum(x));
  EXPECT_TRUE(unused.grad().isZero());
  EXPECT_EQ(unused.grad().rows(), 3);
}

TEST(AutodiffBackward, SecondCallIsAnError) {
  Tape t;
  auto x = t.variable(Matrix::Constant(1, 1, 2.0));
  auto loss = ad::sum(x);
  t.backward(loss);
  EXPECT_THROW(t.backward(loss), Error);
}

TEST(AutodiffBackward, LossMustBeScalar) {
  Tape t;
  auto x = t.variable(Matrix::Constant(2, 2, 2.0));
  EXPECT_THROW(t.backward(x), ShapeError);
}

TEST(AutodiffBackward, ShapeMismatchIsReported) {
  Tape t;
  auto a = t.variable(Matrix::Zero(2, 3));
  auto b = t.variable(Matrix::Zero(2, 3));
  EXPECT_THROW(ad::matmul(a, b), ShapeError);
  EXPECT_THROW(ad::add(a, t.variable(Matrix::Zero(3, 2))), ShapeError);
}

TEST(AutodiffBackward, GradientShapesMatchValues) {
  Rng rng(1);
  Tape t;
  auto a = t.variable(random_matrix(rng, 3, 4));
  auto b = t.variable(random_matrix(rng, 4, 2));
  t.backward(ad::mean(ad::sigmoid(ad::matmul(a, b))));
  EXPECT_EQ(a.grad().rows(), 3);
  EXPECT_EQ(a.grad().cols(), 4);
  EXPECT_EQ(b.grad().rows(), 4);
  EXPECT_EQ(b.grad().cols(), 2);
}

TEST(FiniteDifference, SquareAtThree) {
  Matrix theta = Matrix::Constant(1, 1, 3.0);
  Matrix* ptrs[] = {&theta};
  const auto g = ad::finite_difference_gradient([&] { return theta(0, 0) * theta(0, 0); }, ptrs);
  EXPECT_NEAR(g[0](0, 0), 6.0, 1e-6);
  EXPECT_EQ(theta(0, 0), 3.0);  // restored
}

TEST(FiniteDifference, ConstantFunction) {
  Matrix theta = Matrix::Constant(2, 2, 1.5);
  Matrix* ptrs[] = {&theta};
  const auto g = ad::finite_difference_gradient([] { return 7.0; }, ptrs);
  EXPECT_LT(g[0].cwiseAbs().maxCoeff(), 1e-8);
}

TEST(FiniteDifference, FullModelLossOnTinyConfig) {
  model::ModelConfig c;
  c.keypoints = 4;
  c.embed_dim = 8;
  c.layers = 1;
  c.heads = 2;
  c.num_classes = 2;
  c.mapping_hidden = 6;
  const auto r = gradcheck::check_case(c, 99);
  EXPECT_LT(r.max_rel_error, gradcheck::kTolerance);
}

TEST(FiniteDifference, RandomConfigsPassGradcheck) {
  const auto report = gradcheck::run(7, 4);
  EXPECT_TRUE(report.passed()) << report.max_rel_error;
}

// grad(L_bce + a*L_tri) = grad(L_bce) + a*grad(L_tri) for two values of a.
TEST(AutodiffLoss, GradientIsLinearInAlpha) {
  Rng rng(3);
  const auto config = gradcheck::random_config(rng);
  const auto params = gradcheck::random_params(config, 17);
  const auto batch = gradcheck::random_batch(config, rng);
  train::TrainConfig tc;
  tc.batch_size = 5;

  auto grads_of = [&](auto pick) {
    Tape tape;
    const auto vars = model::register_params(tape, params);
    const auto g = train::build_batch_loss(tape, vars, config, batch, tc);
    EXPECT_FALSE(g.triplets.empty());
    tape.backward(pick(g));
    std::vector<Matrix> out;
    const auto grads = model::collect_gradients(vars, config);
    model::for_each_tensor(grads, config.embedding_hidden, [&](const std::string&, const Matrix& m) { out.push_back(m); });
    return out;
  };
  const auto g_bce = grads_of([](const train::BatchGraph& g) { return g.bce; });
  const auto g_tri = grads_of([](const train::BatchGraph& g) { return g.triplet; });
  for (double alpha : {0.01, 0.7}) {
    tc.alpha = alpha;
    const auto g_total = grads_of([](const train::BatchGraph& g) { return g.total; });
    for (std::size_t k = 0; k < g_total.size(); ++k) {
      const Matrix expect = g_bce[k] + alpha * g_tri[k];
      EXPECT_LT((g_total[k] - expect).cwiseAbs().maxCoeff(), 1e-9) << "tensor " << k << " alpha " << alpha;
    }
  }
}
