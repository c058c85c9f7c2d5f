#include "osta/combinatorics.hpp"
#include "osta/metrics.hpp"
#include "osta/schedule.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace osta;

namespace {

ScheduleConfig with_iters(std::int64_t T) {
  ScheduleConfig c;
  c.total_iters = T;
  return c;
}

} // namespace

TEST(Stages, BoundariesAtTenThousand) {
  const auto c = with_iters(10000);
  EXPECT_EQ(stage_of(0, c), Stage::SupernetTraining);
  EXPECT_EQ(stage_of(1499, c), Stage::SupernetTraining);
  EXPECT_EQ(stage_of(1500, c), Stage::Pruning);
  EXPECT_EQ(stage_of(4999, c), Stage::Pruning);
  EXPECT_EQ(stage_of(5000, c), Stage::FineTuning);
  EXPECT_EQ(stage_of(9999, c), Stage::FineTuning);
  EXPECT_THROW(stage_of(10000, c), std::invalid_argument);
  EXPECT_THROW(stage_of(-1, c), std::invalid_argument);
}

TEST(Stages, SupernetDisabledStartsWithPruning) {
  auto c = with_iters(10000);
  c.supernet_stage_enabled = false;
  EXPECT_EQ(stage_of(0, c), Stage::Pruning);
  EXPECT_EQ(stage_of(100, c), Stage::Pruning);
  EXPECT_EQ(stage_of(5000, c), Stage::FineTuning);
}

TEST(Stages, FloorAtDeskScale) {
  const auto c = with_iters(2000);
  EXPECT_EQ(c.warmup_end(), 300);
  EXPECT_EQ(c.pruning_end(), 1000);
}

TEST(LearningRate, WarmupEndpoints) {
  const auto c = with_iters(10000);
  EXPECT_EQ(lr_at(0, c), 0.0);
  EXPECT_EQ(lr_at(1500, c), c.base_lr);
  EXPECT_DOUBLE_EQ(lr_at(750, c), c.base_lr / 2);
  EXPECT_EQ(lr_at(10000, c), 0.0);
}

TEST(LearningRate, PolyFormula) {
  const auto c = with_iters(10000);
  const double expected = c.base_lr * std::pow(1.0 - 3500.0 / 8500.0, 0.9);
  EXPECT_DOUBLE_EQ(lr_at(5000, c), expected);
}

TEST(LearningRate, WarmupDisabledIsPolyEverywhere) {
  auto c = with_iters(1000);
  c.warmup_enabled = false;
  EXPECT_EQ(lr_at(0, c), c.base_lr);
  EXPECT_DOUBLE_EQ(lr_at(500, c), c.base_lr * std::pow(0.5, 0.9));
}

TEST(LearningRate, ContinuousAndMonotone) {
  for (std::int64_t T : {20, 137, 2000, 10000}) {
    const auto c = with_iters(T);
    const auto w = c.warmup_end();
    // the jump across the warmup boundary is one warmup step at most
    EXPECT_EQ(lr_at(w, c), c.base_lr);
    EXPECT_NEAR(lr_at(w - 1, c), c.base_lr, c.base_lr / static_cast<double>(w) + 1e-15);
    for (std::int64_t it = 1; it < w; ++it) ASSERT_GT(lr_at(it, c), lr_at(it - 1, c));
    for (std::int64_t it = w + 1; it <= T; ++it) ASSERT_LT(lr_at(it, c), lr_at(it - 1, c));
    for (std::int64_t it = 0; it <= T; ++it) ASSERT_GE(lr_at(it, c), 0.0);
  }
}

TEST(Config, Validation) {
  auto c = with_iters(19);
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = with_iters(100);
  c.finetune_fraction = 0.6;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = with_iters(100);
  c.base_lr = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Pauses, SinglePause) {
  const auto plan = pause_schedule(with_iters(10000), 2);
  EXPECT_EQ(plan.pauses, (std::vector<std::int64_t>{5000}));
}

TEST(Pauses, TwoPauses) {
  const auto plan = pause_schedule(with_iters(10000), 3);
  EXPECT_EQ(plan.pauses, (std::vector<std::int64_t>{3250, 5000}));
}

TEST(Pauses, FiftySixInitialIcs) {
  const auto plan = pause_schedule(with_iters(10000), 56);
  EXPECT_EQ(plan.n_pauses(), 55);
  EXPECT_EQ(plan.total_evaluations(), 1595);
  EXPECT_EQ(plan.evaluations_at(1), 56);
  EXPECT_EQ(plan.evaluations_at(55), 2);
}

TEST(Pauses, StructureForAllSmallShapes) {
  for (int n = 2; n <= 10; ++n) {
    for (int k = 1; k < n; ++k) {
      const auto n0 = static_cast<int>(binomial(n, k));
      const auto c = with_iters(10000);
      const auto plan = pause_schedule(c, n0);
      ASSERT_EQ(plan.n_pauses(), n0 - 1);
      ASSERT_EQ(plan.pauses.back(), c.pruning_end());
      ASSERT_GT(plan.pauses.front(), c.pruning_begin());
      for (std::size_t j = 1; j < plan.pauses.size(); ++j) ASSERT_LT(plan.pauses[j - 1], plan.pauses[j]);
    }
  }
}

TEST(Pauses, EvaluationTotalsClosedForm) {
  for (int n0 = 2; n0 <= 200; ++n0) {
    const auto plan = pause_schedule(with_iters(10000), n0);
    ASSERT_EQ(plan.total_evaluations(), n0 * (n0 + 1) / 2 - 1);
    ASSERT_EQ(plan.total_evaluations(), pruning_epoch_total(n0));
  }
}

TEST(Pauses, SupernetDisabledSpreadsFromZero) {
  auto c = with_iters(2000);
  c.supernet_stage_enabled = false;
  const auto plan = pause_schedule(c, 20);
  EXPECT_EQ(plan.pauses.front(), 53); // ceil(1000 / 19)
  EXPECT_EQ(plan.pauses.back(), 1000);
}

TEST(Pauses, Errors) {
  EXPECT_THROW(pause_schedule(with_iters(10000), 1), std::invalid_argument);
  EXPECT_THROW(pause_schedule(with_iters(20), 56), std::invalid_argument);
}
