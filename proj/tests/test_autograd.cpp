#include <gtest/gtest.h>

#include <cmath>
#include <algorithm>
#include <functional>
#include <numeric>

#include "leanconv/gradcheck.hpp"
#include "leanconv/steps.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace lc = leanconv;
using lc::Context;
using lc::GradTape;
using lc::Mode;
using lc::Shape4;
using lc::Tensor;

namespace {

Tensor forward_on(lc::Layer& layer, const Tensor& x, GradTape* tape = nullptr) {
  Context ctx{Mode::train, tape};
  return layer.forward(x, ctx);
}

/// Directional derivative of f at x along v by central differences with one
/// Richardson extrapolation step (fourth-order accurate).
Tensor jvp(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, const Tensor& v,
           double h) {
  auto at = [&](double t) {
    Tensor xt = x;
    xt.axpy(t, v);
    return f(xt);
  };
  const auto d1 = at(h) - at(-h);
  const auto d2 = at(2 * h) - at(-2 * h);
  Tensor out = d1;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = (8 * d1[k] - d2[k]) / (12 * h);
  return out;
}

/// |<w, J v> - <J^T w, v>| relative to the larger side, with J^T w from the
/// layer's recorded backward pass.
double adjoint_gap(lc::Layer& layer, const Tensor& x, lc::testing::Rng& rng, double h = 1e-5) {
  const auto y = forward_on(layer, x);
  const auto v = lc::testing::random_tensor(rng, x.shape());
  const auto w = lc::testing::random_tensor(rng, y.shape());
  const auto jv = jvp([&](const Tensor& t) { return forward_on(layer, t); }, x, v, h);
  GradTape tape;
  forward_on(layer, x, &tape);
  const auto jtw = tape.backward(w);
  const double lhs = lc::dot(w, jv), rhs = lc::dot(jtw, v);
  return std::abs(lhs - rhs) / std::max({std::abs(lhs), std::abs(rhs), 1e-300});
}

void randomize(lc::InitializableLayer& layer, lc::testing::Rng& rng) {
  layer.initialize(rng);
  for (auto* bn : layer.norms()) {
    for (auto& g : bn->gamma()) g = lc::testing::uniform(rng, 0.5, 1.5);
    for (auto& b : bn->beta()) b = lc::testing::uniform(rng, -0.5, 0.5);
  }
  for (const auto& p : layer.params())
    if (std::ranges::all_of(p.value, [](double v) { return v == 0.0; }))
      for (auto& v : p.value) v = lc::testing::uniform(rng);
}

/// Records how often backward runs.
class CountingLayer : public lc::Layer {
 public:
  std::string_view kind() const override { return "counting"; }
  Tensor forward(const Tensor& x, Context& ctx) override {
    if (ctx.recording()) ctx.tape->record(*this, std::any(0));
    return x;
  }
  Tensor backward(const std::any&, const Tensor& dy) override {
    ++calls;
    if (log) log->push_back(id);
    return dy;
  }
  int calls = 0;
  int id = 0;
  std::vector<int>* log = nullptr;
};

}  // namespace

// ---------------------------------------------------------------------------
// Elementary VJPs

TEST(Vjp, ReluAtPositiveInputIsIdentity) {
  lc::testing::Rng rng(1);
  const auto x = lc::testing::random_tensor(rng, {2, 3, 4, 4}, 0.1, 2.0);
  const auto dy = lc::testing::random_tensor(rng, x.shape());
  EXPECT_EQ(lc::relative_error(lc::relu_backward(x, dy), dy), 0.0);
}

TEST(Vjp, ReluSubgradientAtZeroIsZero) {
  Tensor x(Shape4{1, 1, 1, 3}, {0.0, -1.0, 1.0});
  Tensor dy(Shape4{1, 1, 1, 3}, {5.0, 5.0, 5.0});
  const auto g = lc::relu_backward(x, dy);
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(g[1], 0.0);
  EXPECT_EQ(g[2], 5.0);
}

TEST(Vjp, OneByOneInputCotangentIsTransposeApply) {
  lc::testing::Rng rng(2);
  const auto m = lc::testing::random_matrix(rng, 4, 3);
  lc::ChannelMatrix<double> mt(3, 4);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t q = 0; q < 3; ++q) mt(q, r) = m(r, q);
  const auto dy = lc::testing::random_tensor(rng, {2, 4, 3, 5});
  EXPECT_LT(lc::relative_error(lc::apply_one_by_one_transpose(m, dy), lc::apply_one_by_one(mt, dy)),
            1e-15);
}

// ---------------------------------------------------------------------------
// Adjoint consistency of every layer's backward against its forward

class LayerAdjoint : public ::testing::TestWithParam<lc::StepKind> {};

TEST_P(LayerAdjoint, StepBackwardIsTheJacobianTranspose) {
  lc::testing::Rng rng(10 + static_cast<int>(GetParam()));
  auto step = lc::make_step(GetParam(), 3, 3, 0.4);
  randomize(*step, rng);
  const auto x = lc::testing::random_tensor(rng, {2, 3, 6, 6});
  EXPECT_LT(adjoint_gap(*step, x, rng), 1e-9);
}

INSTANTIATE_TEST_SUITE_P(AllKinds, LayerAdjoint, ::testing::ValuesIn(lc::kAllStepKinds),
                         [](const auto& info) { return std::string(lc::to_string(info.param)); });

TEST(LayerAdjoint, OpeningConnectingClassifier) {
  lc::testing::Rng rng(20);
  lc::OpeningLayer opening(3, 4, 5);
  randomize(opening, rng);
  EXPECT_LT(adjoint_gap(opening, lc::testing::random_tensor(rng, {2, 3, 6, 6}), rng), 1e-9);

  lc::ConnectingLayer connecting(3, 3);
  randomize(connecting, rng);
  EXPECT_LT(adjoint_gap(connecting, lc::testing::random_tensor(rng, {2, 3, 6, 4}), rng), 1e-9);

  lc::ClassifierLayer head(3, 5);
  randomize(head, rng);
  EXPECT_LT(adjoint_gap(head, lc::testing::random_tensor(rng, {2, 3, 4, 4}), rng), 1e-9);
}

TEST(LinearAdjoint, ConvolutionsAndPooling) {
  lc::testing::Rng rng(21);
  const Shape4 s{2, 3, 4, 6};
  const auto x = lc::testing::random_tensor(rng, s);
  const auto grid = lc::testing::random_grid(rng, 3, 2, 3);
  const auto yg = lc::testing::random_tensor(rng, {2, 2, 4, 6});
  EXPECT_NEAR(lc::dot(yg, lc::apply_fully_coupled(grid, x)),
              lc::dot(lc::apply_fully_coupled_transpose(grid, yg), x), 1e-12);
  const auto bank = lc::testing::random_bank(rng, 3, 3);
  const auto y = lc::testing::random_tensor(rng, s);
  EXPECT_NEAR(lc::dot(y, lc::apply_depthwise(bank, x)),
              lc::dot(lc::apply_depthwise_transpose(bank, y), x), 1e-12);
  EXPECT_NEAR(lc::dot(y, lc::apply_circulant(bank, x)),
              lc::dot(lc::apply_circulant_transpose(bank, y), x), 1e-12);
  const auto yp = lc::testing::random_tensor(rng, {2, 3, 2, 3});
  EXPECT_NEAR(lc::dot(yp, lc::avgpool2(x)), lc::dot(lc::avgpool2_backward(yp), x), 1e-14);
}

// ---------------------------------------------------------------------------
// grad_check itself

TEST(GradCheck, QuadraticIsExactToRounding) {
  std::vector<double> x{0.5, -1.25, 3.0, 2.0};
  const auto report = lc::grad_check(
      [](std::span<const double> v) {
        return 0.5 * std::inner_product(v.begin(), v.end(), v.begin(), 0.0);
      },
      [](std::span<const double> v) { return std::vector<double>(v.begin(), v.end()); }, x);
  EXPECT_TRUE(report.passed);
  EXPECT_LT(report.max_rel_error, 1e-10);
}

TEST(GradCheck, ReportsMismatchWithoutThrowing) {
  std::vector<double> x{1.0, 2.0};
  const auto report = lc::grad_check(
      [](std::span<const double> v) { return v[0] * v[0] + v[1]; },
      [](std::span<const double>) { return std::vector<double>{0.0, 1.0}; }, x);
  EXPECT_FALSE(report.passed);
  EXPECT_GT(report.max_rel_error, 0.5);
}

TEST(GradCheck, ClassifierCrossEntropy) {
  lc::testing::Rng rng(22);
  lc::ClassifierLayer head(4, 3);
  randomize(head, rng);
  const auto x = lc::testing::random_tensor(rng, {5, 4, 3, 3});
  const std::vector<int> labels{0, 2, 1, 1, 0};
  auto loss = [&] {
    Context ctx{Mode::train, nullptr};
    return lc::softmax_cross_entropy(head.forward(x, ctx), labels).loss;
  };
  for (const auto& p : head.params()) std::ranges::fill(p.grad, 0.0);
  GradTape tape;
  Context ctx{Mode::train, &tape};
  tape.backward(lc::softmax_cross_entropy(head.forward(x, ctx), labels).dlogits);
  const auto params = head.params();
  const auto report = lc::grad_check(loss, params, 1e-5, 1e-7, 0.0);
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(GradCheck, CirculantStepAlone) {
  lc::testing::Rng rng(23);
  lc::RdExplicitStep step(3, 3, 0.5, true);
  randomize(step, rng);
  const auto x = lc::testing::random_tensor(rng, {2, 3, 4, 4});
  const auto w = lc::testing::random_tensor(rng, x.shape());
  auto loss = [&] { return lc::dot(w, forward_on(step, x)); };
  for (const auto& p : step.params()) std::ranges::fill(p.grad, 0.0);
  GradTape tape;
  forward_on(step, x, &tape);
  tape.backward(w);
  const auto params = step.params();
  const auto report = lc::grad_check(loss, params);
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(GradCheck, ImplicitNetworkWithTwoSteps) {
  auto spec = lc::grad_check_spec(lc::StepKind::rd_implicit);
  spec.channel_plan = {4};
  spec.steps_per_block = 2;
  lc::Network net(spec, 3);
  lc::randomize_for_grad_check(net, 4);
  lc::testing::Rng rng(5);
  const auto x = lc::testing::random_tensor(rng, {2, 4, 8, 8});
  const std::vector<int> labels{1, 2};
  lc::loss_and_gradients(net, x, labels);
  const auto params = net.params();
  const auto report =
      lc::grad_check([&] { return lc::network_loss(net, x, labels); }, params);
  EXPECT_TRUE(report.passed) << report.max_rel_error;
  EXPECT_EQ(report.entries.size(), params.size());
}

class NetworkGradient : public ::testing::TestWithParam<lc::StepKind> {};

TEST_P(NetworkGradient, MatchesCentralDifferences) {
  const auto report = lc::network_grad_check(GetParam());
  EXPECT_TRUE(report.passed) << report.max_rel_error;
  EXPECT_LE(report.max_rel_error, 1e-5);
  for (const auto& e : report.entries) EXPECT_TRUE(e.passed) << e.name << " " << e.rel_error;
}

INSTANTIATE_TEST_SUITE_P(AllKinds, NetworkGradient, ::testing::ValuesIn(lc::kAllStepKinds),
                         [](const auto& info) { return std::string(lc::to_string(info.param)); });

TEST(Invariance, BatchNormIgnoresPerChannelShift) {
  lc::testing::Rng rng(24);
  lc::BatchNorm bn(3);
  for (auto& g : bn.gamma()) g = lc::testing::uniform(rng, 0.5, 1.5);
  const auto x = lc::testing::random_tensor(rng, {4, 3, 5, 5});
  const auto w = lc::testing::random_tensor(rng, x.shape());
  lc::BatchNorm::Cache cache;
  bn.forward(x, Mode::train, &cache);
  const auto dx = bn.backward(cache, w);
  double scale = 0;
  for (double v : dx.data()) scale = std::max(scale, std::abs(v));
  for (std::size_t c = 0; c < 3; ++c) {
    double along = 0;
    for (std::size_t n = 0; n < 4; ++n)
      for (double v : dx.plane(n, c)) along += v;
    EXPECT_LT(std::abs(along), 1e-8 * scale);
  }
}

// ---------------------------------------------------------------------------
// Loss

TEST(CrossEntropy, UniformLogitsGiveLogClassCount) {
  const Tensor logits(Shape4{3, 7, 1, 1});
  const std::vector<int> labels{0, 3, 6};
  EXPECT_NEAR(lc::softmax_cross_entropy(logits, labels).loss, std::log(7.0), 1e-15);
}

TEST(CrossEntropy, SaturatedTrueClassGivesZero) {
  Tensor logits(Shape4{1, 3, 1, 1}, {900.0, 0.0, -5.0});
  const std::vector<int> labels{0};
  const auto r = lc::softmax_cross_entropy(logits, labels);
  EXPECT_NEAR(r.loss, 0.0, 1e-300);
  EXPECT_TRUE(lc::all_finite(r.dlogits));
}

TEST(CrossEntropy, MatchesNaiveFormulaAndGradient) {
  lc::testing::Rng rng(25);
  const auto logits = lc::testing::random_tensor(rng, {4, 5, 1, 1}, -3.0, 3.0);
  const std::vector<int> labels{4, 0, 2, 2};
  const auto r = lc::softmax_cross_entropy(logits, labels);
  double expected = 0;
  for (std::size_t n = 0; n < 4; ++n) {
    double z = 0;
    for (std::size_t k = 0; k < 5; ++k) z += std::exp(logits(n, k, 0, 0));
    expected -= std::log(std::exp(logits(n, labels[n], 0, 0)) / z) / 4.0;
    for (std::size_t k = 0; k < 5; ++k) {
      const double p = std::exp(logits(n, k, 0, 0)) / z;
      const double g = (p - (static_cast<int>(k) == labels[n] ? 1.0 : 0.0)) / 4.0;
      EXPECT_NEAR(r.dlogits(n, k, 0, 0), g, 1e-15);
    }
  }
  EXPECT_NEAR(r.loss, expected, 1e-12);
}

TEST(CrossEntropy, BadLabelThrows) {
  const Tensor logits(Shape4{2, 3, 1, 1});
  const std::vector<int> labels{0, 3};
  EXPECT_THROW(lc::softmax_cross_entropy(logits, labels), lc::Error);
}

// ---------------------------------------------------------------------------
// Tape

TEST(Tape, ReplaysEveryOpOnceInReverse) {
  std::vector<CountingLayer> layers(4);
  std::vector<int> order;
  GradTape tape;
  Tensor x(Shape4{1, 1, 1, 1});
  for (int k = 0; k < 4; ++k) {
    layers[k].id = k;
    layers[k].log = &order;
    Context ctx{Mode::train, &tape};
    x = layers[k].forward(x, ctx);
  }
  tape.backward(x);
  for (const auto& l : layers) EXPECT_EQ(l.calls, 1);
  EXPECT_EQ(order, (std::vector<int>{3, 2, 1, 0}));
  EXPECT_EQ(tape.size(), 4u);
  EXPECT_TRUE(tape.replayed());
}

TEST(Tape, MisuseThrows) {
  GradTape empty;
  EXPECT_THROW(empty.backward(Tensor(Shape4{1, 1, 1, 1})), lc::Error);

  CountingLayer layer;
  GradTape tape;
  Context ctx{Mode::train, &tape};
  const Tensor x(Shape4{1, 1, 1, 1});
  layer.forward(x, ctx);
  tape.backward(x);
  EXPECT_THROW(tape.backward(x), lc::Error);
  EXPECT_THROW(layer.forward(x, ctx), lc::Error);
  tape.clear();
  EXPECT_NO_THROW(layer.forward(x, ctx));
}

TEST(Tape, BackwardWithoutRecordedStateThrows) {
  lc::RdExplicitStep step(2, 3);
  EXPECT_THROW(step.backward(std::any{}, Tensor(Shape4{1, 2, 4, 4})), lc::Error);
  lc::ResNetStep resnet(2, 3);
  EXPECT_THROW(resnet.backward(std::any(1), Tensor(Shape4{1, 2, 4, 4})), lc::Error);
}
