// Tensor container, autodiff mechanics, and the numeric ops, checked against
// the independent double-precision oracles in support/reference.hpp plus
// hand-computed closed-form cases.

#include <cmath>
#include <cstring>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "support/reference.hpp"
#include "winnow/errors.hpp"
#include "winnow/ops.hpp"
#include "winnow/rng.hpp"
#include "winnow/tensor.hpp"

namespace {

using winnow::NoGradGuard;
using winnow::Rng;
using winnow::Shape;
using winnow::Tensor;
namespace ops = winnow::ops;
namespace ref = winnow::testsupport;

ref::Array as_array(const Tensor& t) { return ref::from_tensor(t); }

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data().data(), b.data().data(),
                     a.data().size() * sizeof(float)) == 0;
}

std::vector<float> grad_copy(const Tensor& t) {
  return {t.grad().begin(), t.grad().end()};
}

// ==== Tensor container basics ====

TEST(TensorBasics, FactoriesProduceExpectedValues) {
  Tensor z = Tensor::zeros({2, 3});
  EXPECT_EQ(z.shape(), (Shape{2, 3}));
  EXPECT_EQ(z.numel(), 6);
  for (float v : z.data()) EXPECT_EQ(v, 0.0f);

  Tensor f = Tensor::full({4}, 2.5f);
  for (float v : f.data()) EXPECT_EQ(v, 2.5f);

  Tensor d = Tensor::from_data({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
  EXPECT_EQ(d.dim(0), 2);
  EXPECT_EQ(d.dim(1), 2);
  EXPECT_FLOAT_EQ(d.data()[3], 4.0f);
}

TEST(TensorBasics, ShapeMismatchAndBadExtentsThrow) {
  EXPECT_THROW(Tensor::from_data({2, 2}, {1.0f, 2.0f, 3.0f}),
               winnow::ShapeError);
  EXPECT_THROW(Tensor::zeros({2, -1}), winnow::ShapeError);
}

TEST(TensorBasics, ItemRequiresSingleElement) {
  Tensor scalar = Tensor::full({1}, 7.0f);
  EXPECT_FLOAT_EQ(scalar.item(), 7.0f);
  Tensor pair = Tensor::zeros({2});
  EXPECT_THROW(pair.item(), winnow::UsageError);
}

TEST(TensorBasics, GradAccessBeforeBackwardThrows) {
  Tensor x = Tensor::zeros({3}, /*requires_grad=*/true);
  EXPECT_FALSE(x.has_grad());
  EXPECT_THROW(x.grad(), winnow::UsageError);
}

TEST(TensorBasics, CheckFiniteRejectsInfAndNan) {
  Tensor ok = Tensor::from_data({2}, {1.0f, -2.0f});
  EXPECT_NO_THROW(ok.check_finite("ok"));
  Tensor bad = Tensor::from_data({2}, {1.0f, INFINITY});
  EXPECT_FALSE(bad.all_finite());
  EXPECT_THROW(bad.check_finite("bad"), winnow::InvariantError);
  Tensor nan = Tensor::from_data({1}, {NAN});
  EXPECT_THROW(nan.check_finite("nan"), winnow::InvariantError);
}

TEST(TensorBasics, CloneIsADeepDetachedCopy) {
  Rng rng(11);
  Tensor x = Tensor::randn({2, 3}, rng, 1.0, /*requires_grad=*/true);
  Tensor y = x.clone();
  EXPECT_TRUE(bitwise_equal(x, y));
  EXPECT_TRUE(y.requires_grad());
  y.mutable_data()[0] += 1.0f;
  EXPECT_NE(x.data()[0], y.data()[0]);
  // The clone is a fresh leaf: differentiating through it must not reach x.
  winnow::backward(ops::sum(y));
  EXPECT_TRUE(y.has_grad());
  EXPECT_FALSE(x.has_grad());
}

TEST(TensorBasics, RandnIsReproduciblePerSeed) {
  Rng a(7), b(7), c(8);
  Tensor ta = Tensor::randn({3, 4}, a);
  Tensor tb = Tensor::randn({3, 4}, b);
  Tensor tc = Tensor::randn({3, 4}, c);
  EXPECT_TRUE(bitwise_equal(ta, tb));
  EXPECT_FALSE(bitwise_equal(ta, tc));
}

// ==== Convolution ====

TEST(Conv2d, IdentityKernelReproducesInput) {
  std::vector<float> vals(16);
  std::iota(vals.begin(), vals.end(), 1.0f);
  Tensor x = Tensor::from_data({1, 1, 4, 4}, vals);
  std::vector<float> k(9, 0.0f);
  k[4] = 1.0f;  // center tap
  Tensor w = Tensor::from_data({1, 1, 3, 3}, k);
  Tensor y = ops::conv2d(x, w, /*stride=*/1, /*pad=*/1);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
  for (int i = 0; i < 16; ++i) EXPECT_FLOAT_EQ(y.data()[i], vals[i]);
}

TEST(Conv2d, OnesKernelOnConstantInputCountsWindowOverlap) {
  Tensor x = Tensor::full({1, 1, 4, 4}, 5.0f);
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0f);
  Tensor y = ops::conv2d(x, w, 1, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
  auto at = [&](int r, int c) { return y.data()[r * 4 + c]; };
  EXPECT_FLOAT_EQ(at(0, 0), 20.0f);  // corner window covers 4 cells
  EXPECT_FLOAT_EQ(at(0, 3), 20.0f);
  EXPECT_FLOAT_EQ(at(3, 0), 20.0f);
  EXPECT_FLOAT_EQ(at(3, 3), 20.0f);
  EXPECT_FLOAT_EQ(at(0, 1), 30.0f);  // edge window covers 6 cells
  EXPECT_FLOAT_EQ(at(2, 0), 30.0f);
  EXPECT_FLOAT_EQ(at(1, 1), 45.0f);  // interior window covers all 9
  EXPECT_FLOAT_EQ(at(2, 2), 45.0f);
}

TEST(Conv2d, MatchesNestedLoopOracle) {
  Rng rng(301);
  Tensor x = Tensor::randn({2, 3, 8, 8}, rng);
  Tensor w = Tensor::randn({4, 3, 3, 3}, rng, 0.5);
  Tensor y = ops::conv2d(x, w, /*stride=*/2, /*pad=*/1);
  ASSERT_EQ(y.shape(), (Shape{2, 4, 4, 4}));
  ref::Array expect = ref::conv2d_ref(as_array(x), as_array(w), 2, 1);
  EXPECT_LT(ref::max_abs_diff(expect, y), 1e-5);
}

TEST(Conv2d, OutputExtentsFollowFloorRule) {
  Rng rng(5);
  Tensor x = Tensor::randn({1, 1, 7, 7}, rng);
  Tensor w = Tensor::randn({2, 1, 3, 3}, rng);
  EXPECT_EQ(ops::conv2d(x, w, 2, 0).shape(), (Shape{1, 2, 3, 3}));
  EXPECT_EQ(ops::conv2d(x, w, 2, 1).shape(), (Shape{1, 2, 4, 4}));
  EXPECT_EQ(ops::conv2d(x, w, 3, 0).shape(), (Shape{1, 2, 2, 2}));
}

TEST(Conv2d, RejectsBadShapesAndDegenerateOutputs) {
  Rng rng(6);
  Tensor x = Tensor::randn({1, 2, 4, 4}, rng);
  Tensor w3 = Tensor::randn({1, 3, 3, 3}, rng);
  EXPECT_THROW(ops::conv2d(x, w3, 1, 1), winnow::ShapeError);
  // Non-square kernels are rejected.
  EXPECT_THROW(ops::conv2d(x, Tensor::randn({1, 2, 2, 3}, rng), 1, 0),
               winnow::ShapeError);
  Tensor tiny = Tensor::randn({1, 2, 2, 2}, rng);
  Tensor w = Tensor::randn({1, 2, 3, 3}, rng);
  EXPECT_THROW(ops::conv2d(tiny, w, 1, 0), winnow::ConfigError);
  EXPECT_THROW(ops::conv2d(x, w, 0, 0), winnow::ConfigError);
  EXPECT_THROW(ops::conv2d(x, w, 1, -1), winnow::ConfigError);
}

// ==== Linear ====

TEST(Linear, IdentityWeightReproducesInput) {
  Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  std::vector<float> eye(9, 0.0f);
  eye[0] = eye[4] = eye[8] = 1.0f;
  Tensor w = Tensor::from_data({3, 3}, eye);
  Tensor b = Tensor::zeros({3});
  Tensor y = ops::linear(x, w, b);
  ASSERT_EQ(y.shape(), (Shape{2, 3}));
  for (int i = 0; i < 6; ++i) EXPECT_FLOAT_EQ(y.data()[i], x.data()[i]);
}

TEST(Linear, ZeroWeightBroadcastsBias) {
  Tensor x = Tensor::from_data({2, 2}, {9, 9, 9, 9});
  Tensor w = Tensor::zeros({3, 2});
  Tensor b = Tensor::from_data({3}, {1.0f, -2.0f, 3.0f});
  Tensor y = ops::linear(x, w, b);
  ASSERT_EQ(y.shape(), (Shape{2, 3}));
  for (int n = 0; n < 2; ++n)
    for (int k = 0; k < 3; ++k)
      EXPECT_FLOAT_EQ(y.data()[n * 3 + k], b.data()[k]);
}

TEST(Linear, MatchesNestedLoopOracle) {
  Rng rng(302);
  Tensor x = Tensor::randn({5, 7}, rng, 0.5);
  Tensor w = Tensor::randn({4, 7}, rng, 0.5);
  Tensor b = Tensor::randn({4}, rng, 0.5);
  Tensor y = ops::linear(x, w, b);
  ref::Array expect = ref::linear_ref(as_array(x), as_array(w), as_array(b));
  EXPECT_LT(ref::max_abs_diff(expect, y), 1e-6);
}

TEST(Linear, RejectsMismatchedShapes) {
  Rng rng(7);
  Tensor x = Tensor::randn({2, 3}, rng);
  EXPECT_THROW(
      ops::linear(x, Tensor::randn({4, 5}, rng), Tensor::zeros({4})),
      winnow::ShapeError);
  EXPECT_THROW(
      ops::linear(x, Tensor::randn({4, 3}, rng), Tensor::zeros({5})),
      winnow::ShapeError);
}

// ==== Batch normalization ====

TEST(BatchNorm, TrainModeNormalizesEachChannel) {
  Rng rng(303);
  Tensor x = Tensor::randn({4, 3, 5, 5}, rng, 2.0);
  for (auto& v : x.mutable_data()) v += 1.5f;  // nonzero mean, var != 1
  Tensor gamma = Tensor::full({3}, 1.0f);
  Tensor beta = Tensor::zeros({3});
  Tensor rm = Tensor::zeros({3});
  Tensor rv = Tensor::full({3}, 1.0f);
  Tensor y = ops::batchnorm2d(x, gamma, beta, rm, rv, ops::BnMode::kTrain);
  const int64_t per_channel = 4 * 5 * 5;
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0, sq = 0.0;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 25; ++i) {
        double v = y.data()[(n * 3 + c) * 25 + i];
        mean += v;
        sq += v * v;
      }
    mean /= static_cast<double>(per_channel);
    double var = sq / static_cast<double>(per_channel) - mean * mean;
    EXPECT_NEAR(mean, 0.0, 1e-4) << "channel " << c;
    EXPECT_NEAR(var, 1.0, 1e-3) << "channel " << c;
  }
}

TEST(BatchNorm, ZeroGammaCollapsesToBeta) {
  Rng rng(304);
  Tensor x = Tensor::randn({2, 2, 3, 3}, rng, 3.0);
  Tensor gamma = Tensor::zeros({2});
  Tensor beta = Tensor::from_data({2}, {0.7f, -1.25f});
  Tensor rm = Tensor::zeros({2});
  Tensor rv = Tensor::full({2}, 1.0f);
  Tensor y = ops::batchnorm2d(x, gamma, beta, rm, rv, ops::BnMode::kTrain);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 2; ++c)
      for (int i = 0; i < 9; ++i)
        EXPECT_FLOAT_EQ(y.data()[(n * 2 + c) * 9 + i], beta.data()[c]);
}

TEST(BatchNorm, TrainModeMatchesOracle) {
  Rng rng(305);
  Tensor x = Tensor::randn({3, 4, 4, 6}, rng, 1.5);
  Tensor gamma = Tensor::randn({4}, rng, 0.5);
  Tensor beta = Tensor::randn({4}, rng, 0.5);
  Tensor rm = Tensor::zeros({4});
  Tensor rv = Tensor::full({4}, 1.0f);
  Tensor y = ops::batchnorm2d(x, gamma, beta, rm, rv, ops::BnMode::kTrain);
  ref::Array expect = ref::batchnorm_train_ref(as_array(x), as_array(gamma),
                                               as_array(beta), 1e-5);
  EXPECT_LT(ref::max_abs_diff(expect, y), 1e-5);
}

TEST(BatchNorm, RunningStatsUseEmaWithUnbiasedVariance) {
  Rng rng(306);
  Tensor x = Tensor::randn({2, 2, 3, 3}, rng, 2.0);
  Tensor gamma = Tensor::full({2}, 1.0f);
  Tensor beta = Tensor::zeros({2});
  Tensor rm = Tensor::zeros({2});
  Tensor rv = Tensor::full({2}, 1.0f);
  (void)ops::batchnorm2d(x, gamma, beta, rm, rv, ops::BnMode::kTrain,
                         /*momentum=*/0.1f);
  const int64_t m = 2 * 3 * 3;  // samples per channel
  ref::Array xa = as_array(x);
  for (int c = 0; c < 2; ++c) {
    double mean = 0.0;
    for (int n = 0; n < 2; ++n)
      for (int i = 0; i < 9; ++i) mean += xa.data[(n * 2 + c) * 9 + i];
    mean /= static_cast<double>(m);
    double ss = 0.0;
    for (int n = 0; n < 2; ++n)
      for (int i = 0; i < 9; ++i) {
        double d = xa.data[(n * 2 + c) * 9 + i] - mean;
        ss += d * d;
      }
    double unbiased = ss / static_cast<double>(m - 1);
    EXPECT_NEAR(rm.data()[c], 0.1 * mean, 1e-5) << "channel " << c;
    EXPECT_NEAR(rv.data()[c], 0.9 * 1.0 + 0.1 * unbiased, 1e-5)
        << "channel " << c;
  }
}

TEST(BatchNorm, EvalModeUsesRunningStatsElementwise) {
  Rng rng(307);
  Tensor x = Tensor::randn({2, 3, 2, 2}, rng, 1.0);
  Tensor gamma = Tensor::from_data({3}, {1.0f, 0.5f, 2.0f});
  Tensor beta = Tensor::from_data({3}, {0.0f, 1.0f, -1.0f});
  Tensor rm = Tensor::from_data({3}, {0.2f, -0.3f, 0.0f});
  Tensor rv = Tensor::from_data({3}, {1.5f, 0.8f, 2.0f});
  Tensor rm_before = rm.clone();
  Tensor rv_before = rv.clone();
  Tensor y = ops::batchnorm2d(x, gamma, beta, rm, rv, ops::BnMode::kEval);
  ref::Array expect =
      ref::batchnorm_eval_ref(as_array(x), as_array(gamma), as_array(beta),
                              as_array(rm), as_array(rv), 1e-5);
  EXPECT_LT(ref::max_abs_diff(expect, y), 1e-6);
  // Eval mode must leave the running buffers untouched.
  EXPECT_TRUE(bitwise_equal(rm, rm_before));
  EXPECT_TRUE(bitwise_equal(rv, rv_before));
}

// ==== Elementwise / pooling ops ====

TEST(Relu, ClampsNegativesOnly) {
  Tensor x = Tensor::from_data({3}, {-1.0f, 0.0f, 2.0f});
  Tensor y = ops::relu(x);
  EXPECT_FLOAT_EQ(y.data()[0], 0.0f);
  EXPECT_FLOAT_EQ(y.data()[1], 0.0f);
  EXPECT_FLOAT_EQ(y.data()[2], 2.0f);
}

TEST(Relu, GradientMasksNonPositiveInputs) {
  Tensor x = Tensor::from_data({4}, {-1.0f, 0.5f, 2.0f, -3.0f},
                               /*requires_grad=*/true);
  winnow::backward(ops::sum(ops::relu(x)));
  auto g = x.grad();
  EXPECT_FLOAT_EQ(g[0], 0.0f);
  EXPECT_FLOAT_EQ(g[1], 1.0f);
  EXPECT_FLOAT_EQ(g[2], 1.0f);
  EXPECT_FLOAT_EQ(g[3], 0.0f);
}

TEST(Maxpool, ConstantInputStaysConstantAndOddTailsDrop) {
  Tensor x = Tensor::full({1, 1, 4, 4}, 3.5f);
  Tensor y = ops::maxpool2x2(x);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  for (float v : y.data()) EXPECT_FLOAT_EQ(v, 3.5f);

  Rng rng(308);
  Tensor odd = Tensor::randn({1, 2, 5, 7}, rng);
  EXPECT_EQ(ops::maxpool2x2(odd).shape(), (Shape{1, 2, 2, 3}));
}

TEST(Maxpool, MatchesOracleExactly) {
  Rng rng(309);
  Tensor x = Tensor::randn({2, 3, 6, 8}, rng);
  Tensor y = ops::maxpool2x2(x);
  ref::Array expect = ref::maxpool2x2_ref(as_array(x));
  EXPECT_EQ(ref::max_abs_diff(expect, y), 0.0);  // pure selection, no rounding
}

TEST(Maxpool, GradientFlowsToWindowMaxOnly) {
  Tensor x = Tensor::from_data({1, 1, 2, 2}, {1.0f, 7.0f, 3.0f, 5.0f},
                               /*requires_grad=*/true);
  winnow::backward(ops::sum(ops::maxpool2x2(x)));
  auto g = x.grad();
  EXPECT_FLOAT_EQ(g[0], 0.0f);
  EXPECT_FLOAT_EQ(g[1], 1.0f);
  EXPECT_FLOAT_EQ(g[2], 0.0f);
  EXPECT_FLOAT_EQ(g[3], 0.0f);
}

TEST(GlobalAvgPool, MatchesMeanOracle) {
  Rng rng(310);
  Tensor x = Tensor::randn({2, 3, 4, 4}, rng);
  Tensor y = ops::global_avg_pool(x);
  ASSERT_EQ(y.shape(), (Shape{2, 3}));
  ref::Array expect = ref::gap_ref(as_array(x));
  EXPECT_LT(ref::max_abs_diff(expect, y), 1e-6);

  Tensor c = Tensor::full({1, 2, 3, 3}, -0.25f);
  Tensor yc = ops::global_avg_pool(c);
  EXPECT_FLOAT_EQ(yc.data()[0], -0.25f);
  EXPECT_FLOAT_EQ(yc.data()[1], -0.25f);
}

TEST(Add, SumsElementwiseAndRejectsMismatch) {
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor z = Tensor::zeros({2, 2});
  Tensor y = ops::add(a, z);
  EXPECT_TRUE(bitwise_equal(a, y));
  EXPECT_THROW(ops::add(a, Tensor::zeros({2, 3})), winnow::ShapeError);
}

TEST(Add, GradientReachesBothOperands) {
  Tensor a = Tensor::from_data({3}, {1, 2, 3}, true);
  Tensor b = Tensor::from_data({3}, {4, 5, 6}, true);
  winnow::backward(ops::sum(ops::add(a, b)));
  for (int i = 0; i < 3; ++i) {
    EXPECT_FLOAT_EQ(a.grad()[i], 1.0f);
    EXPECT_FLOAT_EQ(b.grad()[i], 1.0f);
  }
}

// ==== Cross-entropy ====

TEST(CrossEntropy, UniformLogitsGiveLogClassCount) {
  Tensor two = Tensor::zeros({3, 2});
  float loss2 = ops::cross_entropy(two, {0, 1, 0}).item();
  EXPECT_NEAR(loss2, std::log(2.0), 1e-6);

  Tensor five = Tensor::zeros({2, 5});
  float loss5 = ops::cross_entropy(five, {4, 2}).item();
  EXPECT_NEAR(loss5, std::log(5.0), 1e-6);
}

TEST(CrossEntropy, DominantCorrectLogitDrivesLossTowardZero) {
  Tensor logits = Tensor::from_data({1, 2}, {12.0f, 0.0f});
  float loss = ops::cross_entropy(logits, {0}).item();
  EXPECT_GT(loss, 0.0f);
  EXPECT_LT(loss, 1e-4f);
}

TEST(CrossEntropy, MatchesOracle) {
  Rng rng(311);
  Tensor logits = Tensor::randn({4, 2}, rng, 2.0);
  float loss = ops::cross_entropy(logits, {1, 0, 0, 1}).item();
  double expect = ref::cross_entropy_ref(as_array(logits), {1, 0, 0, 1});
  EXPECT_NEAR(loss, expect, 1e-5);
}

TEST(CrossEntropy, LargeLogitsStayFinite) {
  Tensor logits = Tensor::from_data({2, 2}, {500.0f, -500.0f, 80.0f, 81.0f});
  Tensor loss = ops::cross_entropy(logits, {0, 1});
  EXPECT_TRUE(loss.all_finite());
  double expect =
      ref::cross_entropy_ref(as_array(logits), {0, 1});
  EXPECT_NEAR(loss.item(), expect, 1e-5);
}

TEST(CrossEntropy, RejectsBadLabels) {
  Tensor logits = Tensor::zeros({2, 3});
  EXPECT_THROW(ops::cross_entropy(logits, {0, 3}), winnow::ConfigError);
  EXPECT_THROW(ops::cross_entropy(logits, {0, -1}), winnow::ConfigError);
  EXPECT_THROW(ops::cross_entropy(logits, {0}), winnow::ShapeError);
}

TEST(CrossEntropy, GradientRowsSumToZero) {
  Rng rng(312);
  Tensor logits = Tensor::randn({5, 4}, rng, 1.5);
  logits.set_requires_grad(true);
  winnow::backward(ops::cross_entropy(logits, {0, 1, 2, 3, 0}));
  for (int n = 0; n < 5; ++n) {
    double row = 0.0;
    for (int m = 0; m < 4; ++m) row += logits.grad()[n * 4 + m];
    EXPECT_NEAR(row, 0.0, 1e-6) << "row " << n;
  }
}

// ==== Backward mechanics ====

TEST(Backward, SumProducesUnitGradients) {
  Rng rng(313);
  Tensor x = Tensor::randn({2, 3}, rng, 1.0, true);
  winnow::backward(ops::sum(x));
  for (float g : x.grad()) EXPECT_FLOAT_EQ(g, 1.0f);
}

TEST(Backward, RequiresScalarLossWithTrackedInputs) {
  Tensor vec = Tensor::from_data({2}, {1, 2}, true);
  EXPECT_THROW(winnow::backward(vec), winnow::UsageError);
  Tensor untracked = Tensor::from_data({2}, {1, 2});
  EXPECT_THROW(winnow::backward(ops::sum(untracked)), winnow::UsageError);
}

TEST(Backward, AccumulatesAcrossCallsAndResetsWithZeroGrad) {
  Rng rng(314);
  Tensor w = Tensor::randn({2, 3, 2, 2}, rng, 0.5, true);

  // Build one graph, run backward twice without clearing: gradients double.
  Tensor inp = Tensor::randn({1, 3, 4, 4}, rng, 1.0, true);
  Tensor loss = ops::sum(ops::conv2d(inp, w, 1, 1));
  winnow::backward(loss);
  std::vector<float> once = grad_copy(inp);
  winnow::backward(loss);
  for (size_t i = 0; i < once.size(); ++i)
    EXPECT_FLOAT_EQ(inp.grad()[i], 2.0f * once[i]);

  // Clearing and re-running the same graph reproduces the exact gradients.
  inp.zero_grad();
  w.zero_grad();
  winnow::backward(loss);
  std::vector<float> again = grad_copy(inp);
  EXPECT_EQ(std::memcmp(once.data(), again.data(),
                        once.size() * sizeof(float)),
            0);
}

TEST(Backward, NoGradGuardSuppressesTapeConstruction) {
  Rng rng(315);
  Tensor x = Tensor::randn({1, 2, 4, 4}, rng, 1.0, true);
  Tensor w = Tensor::randn({2, 2, 3, 3}, rng, 0.5, true);
  Tensor y_tracked = ops::conv2d(x, w, 1, 1);
  EXPECT_TRUE(y_tracked.requires_grad());
  {
    NoGradGuard guard;
    Tensor y = ops::conv2d(x, w, 1, 1);
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(bitwise_equal(y, y_tracked));  // same numerics either way
    EXPECT_THROW(winnow::backward(ops::sum(y)), winnow::UsageError);
  }
  EXPECT_TRUE(winnow::grad_enabled());
}

TEST(Backward, ChainThroughWholeOpVocabulary) {
  // One composite touching conv, bn, relu, pool, gap, linear, add, ce: the
  // loss must be finite and every leaf must receive a finite gradient.
  Rng rng(316);
  Tensor x = Tensor::randn({2, 3, 8, 8}, rng, 1.0, true);
  Tensor w = Tensor::randn({4, 3, 3, 3}, rng, 0.3, true);
  Tensor gamma = Tensor::full({4}, 1.0f, true);
  Tensor beta = Tensor::zeros({4}, true);
  Tensor rm = Tensor::zeros({4});
  Tensor rv = Tensor::full({4}, 1.0f);
  Tensor fcw = Tensor::randn({2, 4}, rng, 0.4, true);
  Tensor fcb = Tensor::zeros({2}, true);

  Tensor h = ops::conv2d(x, w, 1, 1);
  h = ops::batchnorm2d(h, gamma, beta, rm, rv, ops::BnMode::kTrain);
  h = ops::relu(h);
  h = ops::add(h, h);
  h = ops::maxpool2x2(h);
  Tensor pooled = ops::global_avg_pool(h);
  Tensor logits = ops::linear(pooled, fcw, fcb);
  Tensor loss = ops::cross_entropy(logits, {0, 1});
  ASSERT_TRUE(loss.all_finite());
  winnow::backward(loss);
  for (const Tensor* t : {&x, &w, &gamma, &beta, &fcw, &fcb}) {
    ASSERT_TRUE(t->has_grad());
    t->check_finite("leaf");
  }
}

// ==== Finite-difference gradient checks ====

TEST(FiniteDifference, CrossEntropyLinearChainEveryCoordinate) {
  Rng rng(317);
  Tensor x = Tensor::randn({4, 6}, rng, 0.5, true);
  Tensor w = Tensor::randn({3, 6}, rng, 0.5, true);
  Tensor b = Tensor::randn({3}, rng, 0.5, true);
  std::vector<int> labels = {0, 2, 1, 0};
  auto loss_fn = [&]() {
    return ops::cross_entropy(ops::linear(x, w, b), labels);
  };
  for (Tensor* leaf : {&x, &w, &b}) {
    Rng coord_rng(99);
    ref::FdReport rep =
        ref::fd_check(*leaf, loss_fn, /*h=*/1e-3, /*max_coords=*/1000,
                      coord_rng);
    EXPECT_EQ(rep.checked, static_cast<int>(leaf->numel()));
    EXPECT_LT(rep.max_rel, 1e-4);
  }
}

TEST(FiniteDifference, ConvIsLinearSoLargeStepIsExact) {
  Rng rng(318);
  Tensor x = Tensor::randn({2, 3, 6, 6}, rng, 0.5, true);
  Tensor w = Tensor::randn({4, 3, 3, 3}, rng, 0.3, true);
  auto loss_fn = [&]() { return ops::sum(ops::conv2d(x, w, 2, 1)); };
  for (Tensor* leaf : {&x, &w}) {
    Rng coord_rng(100);
    ref::FdReport rep = ref::fd_check(*leaf, loss_fn, 0.05, 60, coord_rng);
    EXPECT_LT(rep.max_rel, 1e-4);
  }
}

TEST(FiniteDifference, BatchNormThroughRandomProjection) {
  Rng rng(319);
  Tensor x = Tensor::randn({2, 3, 4, 4}, rng, 1.0, true);
  Tensor gamma = Tensor::randn({3}, rng, 0.3, true);
  Tensor beta = Tensor::randn({3}, rng, 0.3, true);
  Tensor proj = Tensor::randn({2, 3, 1, 1}, rng, 0.5);
  auto loss_fn = [&]() {
    Tensor rm = Tensor::zeros({3});
    Tensor rv = Tensor::full({3}, 1.0f);
    Tensor y = ops::batchnorm2d(x, gamma, beta, rm, rv, ops::BnMode::kTrain);
    return ops::sum(ops::conv2d(y, proj, 1, 0));
  };
  for (Tensor* leaf : {&x, &gamma, &beta}) {
    Rng coord_rng(101);
    ref::FdReport rep = ref::fd_check(*leaf, loss_fn, 0.01, 60, coord_rng);
    EXPECT_LT(rep.max_rel, 1e-4) << "leaf numel " << leaf->numel();
  }
}

TEST(FiniteDifference, ReluAwayFromTheKink) {
  Rng rng(320);
  Tensor x = Tensor::randn({3, 7}, rng, 1.0, true);
  Tensor proj = Tensor::randn({2, 7}, rng, 0.5);
  Tensor pb = Tensor::zeros({2});
  auto loss_fn = [&]() {
    return ops::cross_entropy(ops::linear(ops::relu(x), proj, pb), {0, 1, 0});
  };
  auto near_kink = [&](int64_t i) { return std::abs(x.data()[i]) < 0.05f; };
  Rng coord_rng(102);
  ref::FdReport rep = ref::fd_check(x, loss_fn, 0.01, 100, coord_rng,
                                    near_kink);
  EXPECT_GT(rep.checked, 0);
  EXPECT_LT(rep.max_rel, 1e-4);
}

TEST(FiniteDifference, MaxpoolWithSafeMargins) {
  // Distinct values spaced 0.1 apart: every window argmax wins by more than
  // the probe step, so central differences see a locally linear function.
  std::vector<float> vals(1 * 2 * 4 * 4);
  std::iota(vals.begin(), vals.end(), 0.0f);
  Rng perm_rng(103);
  perm_rng.shuffle(vals);
  for (auto& v : vals) v *= 0.1f;
  Tensor x = Tensor::from_data({1, 2, 4, 4}, vals, true);
  auto loss_fn = [&]() { return ops::sum(ops::maxpool2x2(x)); };
  Rng coord_rng(104);
  ref::FdReport rep = ref::fd_check(x, loss_fn, 0.01, 64, coord_rng);
  EXPECT_EQ(rep.checked, 32);
  EXPECT_LT(rep.max_rel, 1e-4);
}

TEST(FiniteDifference, GlobalAvgPoolChain) {
  Rng rng(321);
  Tensor x = Tensor::randn({2, 4, 3, 3}, rng, 0.8, true);
  Tensor w = Tensor::randn({3, 4}, rng, 0.5, true);
  Tensor b = Tensor::zeros({3}, true);
  auto loss_fn = [&]() {
    return ops::cross_entropy(ops::linear(ops::global_avg_pool(x), w, b),
                              {0, 2});
  };
  for (Tensor* leaf : {&x, &w}) {
    Rng coord_rng(105);
    ref::FdReport rep = ref::fd_check(*leaf, loss_fn, 1e-3, 60, coord_rng);
    EXPECT_LT(rep.max_rel, 1e-4);
  }
}

// ==== Determinism ====

TEST(Determinism, OpsAreBitwiseRepeatable) {
  Rng rng(322);
  Tensor x = Tensor::randn({2, 3, 8, 8}, rng);
  Tensor w = Tensor::randn({4, 3, 3, 3}, rng);
  Tensor y1 = ops::conv2d(x, w, 1, 1);
  Tensor y2 = ops::conv2d(x, w, 1, 1);
  EXPECT_TRUE(bitwise_equal(y1, y2));

  Tensor gamma = Tensor::full({4}, 1.0f);
  Tensor beta = Tensor::zeros({4});
  Tensor rm1 = Tensor::zeros({4}), rv1 = Tensor::full({4}, 1.0f);
  Tensor rm2 = Tensor::zeros({4}), rv2 = Tensor::full({4}, 1.0f);
  Tensor b1 = ops::batchnorm2d(y1, gamma, beta, rm1, rv1, ops::BnMode::kTrain);
  Tensor b2 = ops::batchnorm2d(y2, gamma, beta, rm2, rv2, ops::BnMode::kTrain);
  EXPECT_TRUE(bitwise_equal(b1, b2));
  EXPECT_TRUE(bitwise_equal(rm1, rm2));
}

}  // namespace
