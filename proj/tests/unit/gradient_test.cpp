#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "exprnet/gradcheck.hpp"
#include "exprnet/ops.hpp"
#include "exprnet/resnet18.hpp"
#include "oracles.hpp"

using exprnet::Mode;
using exprnet::Tensor;

namespace {

constexpr double kEps = 1e-6;
constexpr double kTol = 1e-5;

Tensor<double> param(exprnet::Shape shape, std::mt19937_64& gen, double lo = -1, double hi = 1) {
  auto t = oracle::random_tensor<double>(std::move(shape), gen, lo, hi);
  t.set_requires_grad(true);
  return t;
}

// Projects an op's output onto fixed random weights so every output
// coordinate contributes a distinct sensitivity.
std::function<Tensor<double>()> projected(std::function<Tensor<double>()> op, std::mt19937_64& gen) {
  auto probe = op();
  auto r = oracle::random_tensor<double>(probe.shape(), gen);
  return [op, r] { return exprnet::sum(exprnet::mul(op(), r)); };
}

// Values well away from zero so relu kinks stay outside the stencil.
Tensor<double> off_kink(exprnet::Shape shape, std::mt19937_64& gen) {
  auto t = oracle::random_tensor<double>(std::move(shape), gen, 0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (double& v : t.mutable_data()) v = sign(gen) ? v : -v;
  t.set_requires_grad(true);
  return t;
}

}  // namespace

TEST(GradCheck, QuadraticIsExact) {
  std::mt19937_64 gen(11);
  auto x = oracle::random_tensor<double>({5}, gen, -3, 3);
  const double err = exprnet::finite_diff_check<double>(
      [](const Tensor<double>& t) { return exprnet::sum(exprnet::mul(t, t)); }, x, 1e-5);
  EXPECT_LT(err, 1e-8);
}

TEST(GradCheck, RejectsBadEpsilonAndNonScalar) {
  Tensor<double> x({2}, 1.0);
  EXPECT_THROW(exprnet::finite_diff_check<double>([](const Tensor<double>& t) { return exprnet::sum(t); }, x, 0.0),
               exprnet::ValueError);
  EXPECT_THROW(exprnet::finite_diff_check<double>([](const Tensor<double>& t) { return exprnet::relu(t); }, x, 1e-5),
               exprnet::ShapeError);
}

class OpGradient : public ::testing::TestWithParam<int> {};

TEST_P(OpGradient, Conv2d) {
  std::mt19937_64 gen(100 + GetParam());
  const std::size_t stride = 1 + GetParam() % 2, pad = GetParam() % 2;
  auto x = param({2, 2, 5, 5}, gen), w = param({3, 2, 3, 3}, gen), b = param({3}, gen);
  auto loss = projected([=] { return exprnet::conv2d(x, w, b, stride, pad); }, gen);
  EXPECT_LT(exprnet::finite_diff_check<double>(loss, {x, w, b}, kEps), kTol);
}

TEST_P(OpGradient, BatchNormTrain) {
  std::mt19937_64 gen(200 + GetParam());
  auto x = param({3, 2, 3, 3}, gen, -2, 2), g = param({2}, gen, 0.5, 1.5), b = param({2}, gen);
  Tensor<double> rm({2}, 0.0), rv({2}, 1.0);
  auto loss = projected([=] { return exprnet::batch_norm2d(x, g, b, rm, rv, Mode::train, 0.1, 1e-5); }, gen);
  EXPECT_LT(exprnet::finite_diff_check<double>(loss, {x, g, b}, kEps), kTol);
}

TEST_P(OpGradient, BatchNormEval) {
  std::mt19937_64 gen(250 + GetParam());
  auto x = param({2, 2, 3, 3}, gen), g = param({2}, gen), b = param({2}, gen);
  Tensor<double> rm({2}, std::vector<double>{0.2, -0.3}), rv({2}, std::vector<double>{0.8, 1.7});
  auto loss = projected([=] { return exprnet::batch_norm2d(x, g, b, rm, rv, Mode::eval, 0.1, 1e-5); }, gen);
  EXPECT_LT(exprnet::finite_diff_check<double>(loss, {x, g, b}, kEps), kTol);
}

TEST_P(OpGradient, Relu) {
  std::mt19937_64 gen(300 + GetParam());
  auto x = off_kink({4, 6}, gen);
  auto loss = projected([=] { return exprnet::relu(x); }, gen);
  EXPECT_LT(exprnet::finite_diff_check<double>(loss, {x}, kEps), kTol);
}

TEST_P(OpGradient, MaxPool) {
  std::mt19937_64 gen(400 + GetParam());
  auto x = param({2, 2, 7, 7}, gen);  // continuous draws: ties have probability zero
  auto loss = projected([=] { return exprnet::max_pool2d(x, 3, 2, 1); }, gen);
  EXPECT_LT(exprnet::finite_diff_check<double>(loss, {x}, kEps), kTol);
}

TEST_P(OpGradient, GlobalAvgPool) {
  std::mt19937_64 gen(500 + GetParam());
  auto x = param({2, 3, 4, 5}, gen);
  auto loss = projected([=] { return exprnet::global_avg_pool2d(x); }, gen);
  EXPECT_LT(exprnet::finite_diff_check<double>(loss, {x}, kEps), kTol);
}

TEST_P(OpGradient, Linear) {
  std::mt19937_64 gen(600 + GetParam());
  auto x = param({3, 6}, gen), w = param({4, 6}, gen), b = param({4}, gen);
  auto loss = projected([=] { return exprnet::linear(x, w, b); }, gen);
  EXPECT_LT(exprnet::finite_diff_check<double>(loss, {x, w, b}, kEps), kTol);
}

TEST_P(OpGradient, WeightedCrossEntropy) {
  std::mt19937_64 gen(700 + GetParam());
  auto logits = param({5, 7}, gen, -3, 3);
  auto weights = oracle::random_tensor<double>({7}, gen, 0.2, 3.0);
  const std::vector<int> labels{0, 6, 3, 3, 1};
  const double err = exprnet::finite_diff_check<double>(
      [=] { return exprnet::weighted_cross_entropy(logits, labels, weights); }, {logits}, kEps);
  EXPECT_LT(err, 1e-6);
}

TEST_P(OpGradient, Elementwise) {
  std::mt19937_64 gen(800 + GetParam());
  auto a = param({3, 4}, gen), b = param({3, 4}, gen);
  auto loss = projected([=] { return exprnet::scale(exprnet::add(exprnet::mul(a, b), a), 1.7); }, gen);
  EXPECT_LT(exprnet::finite_diff_check<double>(loss, {a, b}, kEps), kTol);
}

TEST_P(OpGradient, ConvReluComposite) {
  std::mt19937_64 gen(900 + GetParam());
  auto x = param({1, 2, 6, 6}, gen), w = param({2, 2, 3, 3}, gen);
  auto loss = projected([=] { return exprnet::relu(exprnet::conv2d(x, w, Tensor<double>(), 1, 1)); }, gen);
  EXPECT_LT(exprnet::finite_diff_check<double>(loss, {x, w}, 1e-4), kTol);
}

INSTANTIATE_TEST_SUITE_P(RandomInstances, OpGradient, ::testing::Values(0, 1, 2));

TEST(ModelGradient, QuarterWidthResNetLossOnSampledParameters) {
  exprnet::ModelConfig cfg;
  cfg.width_multiplier = exprnet::Ratio(1, 4);
  cfg.input_size = 64;
  auto model = exprnet::build_model<double>(cfg, 5);
  std::mt19937_64 gen(12);
  auto batch = oracle::random_tensor<double>({2, 3, 64, 64}, gen);
  const std::vector<int> labels{2, 5};
  Tensor<double> weights({7}, std::vector<double>{0.8, 1.2, 1.0, 1.1, 0.9, 1.0, 1.3});

  std::vector<Tensor<double>> inputs;
  for (const auto& p : model.parameters()) inputs.push_back(p.tensor);
  std::vector<exprnet::GradProbe> probes;
  for (int i = 0; i < 50; ++i) {
    const std::size_t t = std::uniform_int_distribution<std::size_t>(0, inputs.size() - 1)(gen);
    probes.push_back({t, std::uniform_int_distribution<std::size_t>(0, inputs[t].numel() - 1)(gen)});
  }
  const double err = exprnet::finite_diff_check<double>(
      [&] { return exprnet::weighted_cross_entropy(model.forward(batch, Mode::train), labels, weights); }, inputs,
      1e-6, probes);
  EXPECT_LT(err, 1e-4);
}
