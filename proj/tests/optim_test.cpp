// SGD, Adam, and the step-decay schedule, checked against hand-derived
// update math.

#include <cmath>
#include <cstring>
#include <vector>

#include <gtest/gtest.h>

#include "winnow/errors.hpp"
#include "winnow/ops.hpp"
#include "winnow/optim.hpp"
#include "winnow/rng.hpp"
#include "winnow/tensor.hpp"

namespace {

using winnow::Adam;
using winnow::LrSchedule;
using winnow::Rng;
using winnow::Sgd;
using winnow::Tensor;

Tensor leaf(std::vector<float> values) {
  const int64_t n = static_cast<int64_t>(values.size());
  return Tensor::from_data({n}, std::move(values), /*requires_grad=*/true);
}

void set_grad(Tensor& t, const std::vector<float>& g) {
  auto span = t.mutable_grad();
  for (size_t i = 0; i < g.size(); ++i) span[i] = g[i];
}

// ==== Learning-rate schedule ====

TEST(LrSchedule, StepDecayByThirtyEpochs) {
  LrSchedule s{/*base_lr=*/0.1f, /*decay_factor=*/0.1f, /*step_every=*/30};
  EXPECT_FLOAT_EQ(winnow::lr_at(s, 0), 0.1f);
  EXPECT_FLOAT_EQ(winnow::lr_at(s, 29), 0.1f);
  EXPECT_NEAR(winnow::lr_at(s, 30), 0.01f, 1e-8);
  EXPECT_NEAR(winnow::lr_at(s, 59), 0.01f, 1e-8);
  EXPECT_NEAR(winnow::lr_at(s, 65), 0.001f, 1e-8);
  EXPECT_NEAR(winnow::lr_at(s, 90), 0.0001f, 1e-9);
}

TEST(LrSchedule, HalvingVariant) {
  LrSchedule s{0.02f, 0.5f, 10};
  EXPECT_FLOAT_EQ(winnow::lr_at(s, 9), 0.02f);
  EXPECT_NEAR(winnow::lr_at(s, 10), 0.01f, 1e-8);
  EXPECT_NEAR(winnow::lr_at(s, 25), 0.005f, 1e-8);
}

// ==== SGD ====

TEST(Sgd, VanillaStepSubtractsLrTimesGrad) {
  Tensor w = leaf({1.0f});
  Sgd opt({w}, /*lr=*/0.1f);
  set_grad(w, {1.0f});
  opt.step();
  EXPECT_FLOAT_EQ(w.data()[0], 0.9f);
  EXPECT_EQ(opt.step_count(), 1);
}

TEST(Sgd, MomentumAccumulatesVelocity) {
  // v <- mu*v + g; w <- w - lr*v, starting from v = 0.
  Tensor w = leaf({0.0f});
  Sgd opt({w}, 0.1f, /*momentum=*/0.9f);
  set_grad(w, {1.0f});
  opt.step();  // v=1.0, w = -0.1
  EXPECT_NEAR(w.data()[0], -0.1f, 1e-7);
  set_grad(w, {1.0f});
  opt.step();  // v=1.9, w = -0.1 - 0.19 = -0.29
  EXPECT_NEAR(w.data()[0], -0.29f, 1e-6);
  set_grad(w, {0.0f});
  opt.step();  // v=1.71, w = -0.29 - 0.171 = -0.461
  EXPECT_NEAR(w.data()[0], -0.461f, 1e-6);
}

TEST(Sgd, WeightDecayAddsLambdaW) {
  // Decoupled-from-loss L2 term: effective grad = g + wd*w.
  Tensor w = leaf({2.0f});
  Sgd opt({w}, 0.1f, 0.0f, /*weight_decay=*/0.5f);
  set_grad(w, {0.0f});
  opt.step();  // w <- 2 - 0.1*(0 + 0.5*2) = 1.9
  EXPECT_NEAR(w.data()[0], 1.9f, 1e-7);
}

TEST(Sgd, ZeroGradClearsBuffersSoStepIsNoOp) {
  Tensor w = leaf({1.0f, -2.0f});
  Sgd opt({w}, 0.5f);
  set_grad(w, {3.0f, 4.0f});
  opt.zero_grad();
  opt.step();
  EXPECT_FLOAT_EQ(w.data()[0], 1.0f);
  EXPECT_FLOAT_EQ(w.data()[1], -2.0f);
}

TEST(Sgd, StepWithoutGradBufferThrows) {
  Tensor w = leaf({1.0f});
  Sgd opt({w}, 0.1f);
  EXPECT_THROW(opt.step(), winnow::UsageError);
}

TEST(Sgd, SetLrTakesEffectImmediately) {
  Tensor w = leaf({0.0f});
  Sgd opt({w}, 1.0f);
  opt.set_lr(0.25f);
  set_grad(w, {1.0f});
  opt.step();
  EXPECT_FLOAT_EQ(w.data()[0], -0.25f);
}

// ==== Adam ====

TEST(Adam, FirstStepMovesByApproximatelyLr) {
  // With bias correction the first update is lr * g/(|g| + eps') ~= lr,
  // independent of the gradient scale.
  for (float g : {1.0f, 0.01f, 100.0f}) {
    Tensor w = leaf({0.0f});
    Adam opt({w}, /*lr=*/0.001f);
    set_grad(w, {g});
    opt.step();
    EXPECT_NEAR(std::abs(w.data()[0]), 0.001f, 0.001f * 0.01f)
        << "grad scale " << g;
    EXPECT_LT(w.data()[0], 0.0f);  // moves against the gradient
  }
}

TEST(Adam, MatchesHandComputedTwoSteps) {
  // Reference computed by hand for g = (1.0, 0.5) with defaults
  // beta1=0.9 beta2=0.999 eps=1e-8 lr=0.1.
  Tensor w = leaf({1.0f});
  Adam opt({w}, 0.1f);
  set_grad(w, {1.0f});
  opt.step();
  double m = 0.1, v = 0.001;
  double mhat = m / (1 - 0.9), vhat = v / (1 - 0.999);
  double w1 = 1.0 - 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
  EXPECT_NEAR(w.data()[0], w1, 1e-6);

  set_grad(w, {0.5f});
  opt.step();
  m = 0.9 * m + 0.1 * 0.5;
  v = 0.999 * v + 0.001 * 0.25;
  mhat = m / (1 - 0.9 * 0.9);
  vhat = v / (1 - 0.999 * 0.999);
  double w2 = w1 - 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
  EXPECT_NEAR(w.data()[0], w2, 1e-6);
}

TEST(Adam, WeightDecayFoldsIntoGradient) {
  Tensor w = leaf({4.0f});
  Adam opt({w}, 0.001f, 0.9f, 0.999f, 1e-8f, /*weight_decay=*/0.01f);
  set_grad(w, {0.0f});
  opt.step();
  // Effective gradient 0.01*4 = 0.04 > 0, so the weight must shrink by ~lr.
  EXPECT_LT(w.data()[0], 4.0f);
  EXPECT_NEAR(w.data()[0], 4.0f - 0.001f, 1e-4);
}

TEST(Adam, StateForExposesBothMomentBuffers) {
  Tensor w = leaf({1.0f, 2.0f, 3.0f});
  Adam opt({w}, 0.01f);
  set_grad(w, {1.0f, -1.0f, 2.0f});
  opt.step();
  auto state = opt.state_for(w);
  ASSERT_EQ(state.size(), 2u);
  for (auto& span : state) ASSERT_EQ(span.size(), 3u);
  EXPECT_NE(state[0][0], 0.0f);  // first moment picked up the gradient
  EXPECT_NE(state[1][0], 0.0f);  // second moment as well
  // Zeroing the exposed buffers must stick (pruning relies on this).
  for (auto& span : state)
    for (auto& x : span) x = 0.0f;
  auto again = opt.state_for(w);
  EXPECT_EQ(again[0][0], 0.0f);
  EXPECT_EQ(again[1][0], 0.0f);
}

TEST(Sgd, StateForMatchesMomentumConfiguration) {
  Tensor w = leaf({1.0f});
  Sgd plain({w}, 0.1f);
  EXPECT_TRUE(plain.state_for(w).empty());
  Sgd with_momentum({w}, 0.1f, 0.9f);
  set_grad(w, {2.0f});
  with_momentum.step();
  auto state = with_momentum.state_for(w);
  ASSERT_EQ(state.size(), 1u);
  EXPECT_FLOAT_EQ(state[0][0], 2.0f);  // velocity = g after first step
}

TEST(Optimizer, StateForUnknownParamIsEmpty) {
  Tensor w = leaf({1.0f});
  Tensor other = leaf({5.0f});
  Adam opt({w}, 0.01f);
  EXPECT_TRUE(opt.state_for(other).empty());
}

TEST(Optimizer, DrivesASmallProblemDownhill) {
  // Minimize CE of linear probe on two separable points; loss must drop
  // monotonically-ish and end near zero with both optimizers.
  for (int kind = 0; kind < 2; ++kind) {
    Rng rng(41);
    Tensor x = Tensor::from_data({2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
    Tensor w = Tensor::randn({2, 2}, rng, 0.1, true);
    Tensor b = Tensor::zeros({2}, true);
    std::unique_ptr<winnow::Optimizer> opt;
    if (kind == 0)
      opt = std::make_unique<Sgd>(std::vector<Tensor>{w, b}, 0.5f, 0.9f);
    else
      opt = std::make_unique<Adam>(std::vector<Tensor>{w, b}, 0.05f);
    float first = 0.0f, last = 0.0f;
    for (int it = 0; it < 200; ++it) {
      opt->zero_grad();
      Tensor loss = winnow::ops::cross_entropy(winnow::ops::linear(x, w, b),
                                               {0, 1});
      if (it == 0) first = loss.item();
      last = loss.item();
      winnow::backward(loss);
      opt->step();
    }
    EXPECT_LT(last, first * 0.1f) << (kind == 0 ? "sgd" : "adam");
    EXPECT_LT(last, 0.05f);
  }
}

}  // namespace
