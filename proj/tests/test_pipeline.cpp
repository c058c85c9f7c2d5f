#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>

using namespace osta;
using namespace osta::testing;

TEST(SampleIc, SingletonAlwaysReturned) {
  const std::vector<ChannelCombination> one = {make_combination({1, 2}, 4)};
  for (std::uint64_t it = 0; it < 50; ++it) {
    RandomStream rng(9, "osta.ic", it);
    EXPECT_EQ(&sample_ic(one, rng), &one[0]);
  }
}

TEST(SampleIc, RoughlyUniformOverFiftySix) {
  const auto ics = enumerate_combinations(8, 3);
  std::map<std::uint64_t, int> counts;
  for (std::uint64_t it = 0; it < 56000; ++it) {
    RandomStream rng(1, "osta.ic", it);
    ++counts[sample_ic(ics, rng).index];
  }
  ASSERT_EQ(counts.size(), 56u);
  for (const auto& [idx, n] : counts) {
    EXPECT_GE(n, 800) << idx;
    EXPECT_LE(n, 1200) << idx;
  }
}

TEST(SampleIc, DeterministicPerIteration) {
  const auto ics = enumerate_combinations(6, 3);
  for (std::uint64_t it = 0; it < 100; ++it) {
    RandomStream a(4, "osta.ic", it), b(4, "osta.ic", it);
    EXPECT_EQ(sample_ic(ics, a).index, sample_ic(ics, b).index);
  }
}

TEST(SampleIc, EmptyThrows) {
  RandomStream rng(1, "osta.ic", 0);
  EXPECT_THROW(sample_ic({}, rng), InvalidState);
}

TEST(EvaluateIc, LeavesParametersUntouched) {
  const auto ds = tiny_dataset();
  const auto params = init_params(2, ds.n_classes(), 5);
  const auto set = make_eval_set(ds, ds.indices({Split::SubVal}), 16, 16);
  const auto before = value_hash(params);
  AllocationMeter meter;
  for (const auto& ic : enumerate_combinations(4, 2)) evaluate_ic(params, ic, set, Metric::MIoU, 4, &meter);
  EXPECT_EQ(value_hash(params), before);
}

TEST(EvaluateIc, ConfusionIndependentOfBatching) {
  const auto ds = tiny_dataset();
  const auto params = init_params(2, ds.n_classes(), 5);
  const auto ic = make_combination({1, 3}, 4);
  const auto set = make_eval_set(ds, ds.indices({Split::Test}), 16, 16);
  const auto a = confusion_on(params, ic.channels, set, 1);
  const auto b = confusion_on(params, ic.channels, set, 7);
  EXPECT_EQ(a, b);

  // independent path: argmax over forward logits, one window at a time
  ConfusionMatrix c(ds.n_classes());
  const int C = ds.n_classes();
  for (const auto& w : set.windows) {
    const auto batch = gather_batch(ds, {w}, 16, 16, ic.channels);
    const auto f = forward(params, batch);
    for (int px = 0; px < 256; ++px) {
      const auto label = batch.labels[static_cast<std::size_t>(px)];
      if (label == kIgnoreLabel) continue;
      int best = 0;
      for (int k = 1; k < C; ++k)
        if (f.logits[static_cast<std::size_t>(k * 256 + px)] > f.logits[static_cast<std::size_t>(best * 256 + px)]) best = k;
      ++c.at(label, best);
    }
  }
  EXPECT_EQ(a, c);
  EXPECT_DOUBLE_EQ(evaluate_ic(params, ic, set, Metric::MA, 3), mean_accuracy(c));
}

TEST(Criteria, HistogramEntropyOracles) {
  std::vector<float> constant(1000, 2.5f);
  EXPECT_EQ(histogram_entropy(constant, 2.5, 2.5), 0.0);
  std::vector<float> bytes;
  for (int v = 0; v < 256; ++v) bytes.push_back(static_cast<float>(v));
  EXPECT_NEAR(histogram_entropy(bytes, 0, 255), 8.0, 1e-12);
  std::vector<float> coin = {0, 1, 0, 1};
  EXPECT_NEAR(histogram_entropy(coin, 0, 1), 1.0, 1e-12);
}

namespace {

/// Four channels: 1 random, 2 constant, 3 = copy of 1, 4 random.
Dataset crafted_dataset() {
  std::mt19937_64 rng(11);
  std::vector<McSample> samples;
  for (int i = 0; i < 6; ++i) {
    auto s = random_sample(rng, 16, 16, 4, 2);
    auto p2 = s.plane(1);
    std::fill(p2.begin(), p2.end(), 0.75f);
    const auto p1 = s.plane(0);
    auto p3 = s.plane(2);
    std::copy(p1.begin(), p1.end(), p3.begin());
    samples.push_back(std::move(s));
  }
  return make_dataset(std::move(samples),
                      {Split::SubTrain, Split::SubTrain, Split::SubTrain, Split::SubVal, Split::Test, Split::Test}, 2);
}

} // namespace

TEST(Criteria, EntropyScoresConstantChannelLowest) {
  const auto ds = crafted_dataset();
  RunConfig cfg = tiny_run();
  cfg.criterion = Criterion::Entropy;
  const auto ctx = make_criterion_context(ds, cfg, 1);
  EXPECT_EQ(ctx.entropies[1], 0.0);
  EXPECT_GT(ctx.entropies[0], 5.0);
  const auto params = init_params(2, 2, 1);
  const double with_const = criterion_score(ctx, params, make_combination({1, 2}, 4));
  const double without = criterion_score(ctx, params, make_combination({1, 4}, 4));
  EXPECT_NEAR(with_const, ctx.entropies[0] / 2, 1e-12);
  EXPECT_LT(with_const, without);
}

TEST(Criteria, PcaScoresDuplicateChannelsAsDegenerate) {
  const auto ds = crafted_dataset();
  RunConfig cfg = tiny_run();
  cfg.criterion = Criterion::Pca;
  const auto ctx = make_criterion_context(ds, cfg, 1);
  const auto params = init_params(2, 2, 1);
  EXPECT_EQ(criterion_score(ctx, params, make_combination({1, 3}, 4)), -std::numeric_limits<double>::infinity());
  EXPECT_EQ(criterion_score(ctx, params, make_combination({1, 2}, 4)), -std::numeric_limits<double>::infinity());
  const double independent = criterion_score(ctx, params, make_combination({1, 4}, 4));
  EXPECT_TRUE(std::isfinite(independent));
  EXPECT_LE(independent, 0.0); // det of a correlation matrix is at most 1
}

TEST(Criteria, TrainAccProbeIsFixedSubtrainSubset) {
  std::vector<std::size_t> subtrain = {0, 2, 4, 6, 8, 10};
  const auto a = probe_samples(subtrain, 3, 7);
  EXPECT_EQ(a, probe_samples(subtrain, 3, 7));
  ASSERT_EQ(a.size(), 3u);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  for (auto i : a) EXPECT_NE(std::find(subtrain.begin(), subtrain.end(), i), subtrain.end());
  EXPECT_EQ(probe_samples(subtrain, 50, 7), subtrain);
}

namespace {

SupernetState state_with(int n, int k) {
  SupernetState st;
  st.remaining = enumerate_combinations(n, k);
  return st;
}

} // namespace

TEST(PruneStep, RemovesArgmin) {
  auto st = state_with(4, 2);
  const auto e = prune_step(st, {50, 40, 70, 10, 60, 80}, 1);
  EXPECT_EQ(e.index, 4u);
  EXPECT_EQ(e.score, 10);
  EXPECT_EQ(e.pause, 1);
  ASSERT_EQ(st.remaining.size(), 5u);
  for (const auto& ic : st.remaining) EXPECT_NE(ic.index, 4u);
  EXPECT_EQ(st.eliminated, (std::vector<Elimination>{e}));
}

TEST(PruneStep, TieRemovesLargerIndex) {
  auto st = state_with(4, 2);
  const auto e = prune_step(st, {30, 10, 50, 10, 60, 10}, 1);
  EXPECT_EQ(e.index, 6u);
}

TEST(PruneStep, ConvergesAfterNMinusOneSteps) {
  auto st = state_with(5, 2);
  const std::size_t n0 = st.remaining.size();
  for (std::size_t j = 1; j < n0; ++j) {
    std::vector<double> scores;
    for (const auto& ic : st.remaining) scores.push_back(static_cast<double>(ic.index % 4));
    prune_step(st, scores, static_cast<int>(j));
  }
  ASSERT_EQ(st.remaining.size(), 1u);
  EXPECT_EQ(st.eliminated.size(), n0 - 1);
  EXPECT_THROW(prune_step(st, {1.0}, 99), InvalidState);
  EXPECT_THROW(prune_step(*std::make_unique<SupernetState>(state_with(4, 2)), {1.0}, 1), std::invalid_argument);
}

TEST(RunOsta, ProgressiveLogAndResult) {
  const auto ds = tiny_dataset();
  const auto cfg = tiny_run();
  std::vector<std::string> lines;
  const auto r = run_osta(ds, cfg, 21, [&](const std::string& l) { lines.push_back(l); });
  EXPECT_EQ(r.eliminated.size(), 5u);
  for (std::size_t j = 0; j < r.eliminated.size(); ++j) EXPECT_EQ(r.eliminated[j].pause, static_cast<int>(j) + 1);
  EXPECT_EQ(lines, r.log);
  ASSERT_EQ(lines.size(), 6u);
  EXPECT_EQ(lines[0].rfind("pause=1 removed=", 0), 0u);
  EXPECT_EQ(lines.back().rfind("scc=", 0), 0u);
  // the SCC is the one IC never eliminated
  std::set<std::uint64_t> seen = {r.scc.index};
  for (const auto& e : r.eliminated) seen.insert(e.index);
  EXPECT_EQ(seen.size(), 6u);
  ASSERT_TRUE(r.supernet_checkpoint.has_value());
  EXPECT_EQ(r.supernet_checkpoint->iteration, 9u);
  EXPECT_EQ(r.supernet_checkpoint->remaining.size(), 6u);
  EXPECT_GT(r.peak_bytes.at("pruning_eval"), 0);
  EXPECT_EQ(elimination_csv(r.eliminated).substr(0, 18), "pause,index,score\n");
}

TEST(RunOsta, Deterministic) {
  const auto ds = tiny_dataset();
  const auto cfg = tiny_run();
  const auto a = run_osta(ds, cfg, 8);
  const auto b = run_osta(ds, cfg, 8);
  EXPECT_EQ(a.scc, b.scc);
  EXPECT_EQ(a.eliminated, b.eliminated);
  EXPECT_EQ(encode_checkpoint(a.checkpoint(8, 60)), encode_checkpoint(b.checkpoint(8, 60)));
  EXPECT_EQ(a.test_confusion, b.test_confusion);
}

TEST(RunOsta, StrategyNoneMatchesPlainTraining) {
  const auto ds = tiny_dataset();
  auto cfg = tiny_run();
  cfg.strategy = Strategy::None;
  cfg.fixed_ic = make_combination({2, 3}, 4);
  const auto a = run_osta(ds, cfg, 13);
  const auto b = train_combination(ds, *cfg.fixed_ic, cfg.train, 13);
  EXPECT_EQ(a.final_loss, b.final_loss);
  EXPECT_EQ(value_hash(a.params), value_hash(b.params));
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.test_confusion, b.test_confusion);
  EXPECT_TRUE(a.eliminated.empty());
  EXPECT_FALSE(a.supernet_checkpoint.has_value());

  cfg.fixed_ic.reset();
  EXPECT_THROW(run_osta(ds, cfg, 13), std::invalid_argument);
}

TEST(RunOsta, RankOnceSelectsArgmax) {
  const auto ds = tiny_dataset();
  const auto r = run_rank_once(ds, tiny_run(), 5);
  ASSERT_EQ(r.selection.size(), 6u);
  EXPECT_TRUE(r.eliminated.empty());
  std::size_t best = 0;
  for (std::size_t i = 1; i < r.selection.size(); ++i)
    if (r.selection[i].score > r.selection[best].score) best = i;
  EXPECT_EQ(r.scc.index, r.selection[best].index);
  EXPECT_EQ(r.log.front().rfind("rank selected=" + std::to_string(r.scc.index) + " ", 0), 0u);
  EXPECT_GT(r.stage_seconds.at("finetune_train"), 0.0);
}

TEST(RunOsta, SupernetStageDisabledPrunesFromStart) {
  const auto ds = tiny_dataset();
  auto cfg = tiny_run();
  cfg.train.schedule.supernet_stage_enabled = false;
  const auto r = run_osta(ds, cfg, 2);
  EXPECT_FALSE(r.supernet_checkpoint.has_value());
  EXPECT_EQ(r.eliminated.size(), 5u);
  EXPECT_EQ(r.peak_bytes.count("supernet_train"), 0u);
}

TEST(RunOsta, WarmupDisabledStillConverges) {
  const auto ds = tiny_dataset();
  auto cfg = tiny_run();
  cfg.train.schedule.warmup_enabled = false;
  const auto r = run_osta(ds, cfg, 2);
  EXPECT_EQ(r.eliminated.size(), 5u);
  EXPECT_TRUE(std::isfinite(r.final_loss));
}

TEST(RunOsta, RequiresSubvalSplit) {
  auto ds = synthesize(tiny_spec(), 3);
  EXPECT_THROW(run_osta(ds, tiny_run(), 1), std::invalid_argument);
}

TEST(Finetune, ZeroRemainingIterationsKeepsCheckpoint) {
  const auto ds = tiny_dataset();
  const auto cfg = tiny_run();
  const auto r = run_osta(ds, cfg, 4);
  const auto ck = r.checkpoint(4, 60);
  const auto f = finetune_from_supernet(ds, ck, r.scc, cfg.train, 4);
  EXPECT_EQ(f.params, ck.params);
  EXPECT_EQ(f.test_confusion, r.test_confusion);
}

TEST(Finetune, DeterministicFromSupernet) {
  const auto ds = tiny_dataset();
  const auto cfg = tiny_run();
  const auto r = run_osta(ds, cfg, 4);
  ASSERT_TRUE(r.supernet_checkpoint);
  const auto comb = make_combination({1, 3}, 4);
  const auto a = finetune_from_supernet(ds, *r.supernet_checkpoint, comb, cfg.train, 4);
  const auto b = finetune_from_supernet(ds, *r.supernet_checkpoint, comb, cfg.train, 4);
  EXPECT_EQ(a.params, b.params);
  EXPECT_NE(a.params, r.supernet_checkpoint->params);
}

TEST(Finetune, ArchitectureMismatchRejected) {
  const auto ds = tiny_dataset();
  const auto cfg = tiny_run();
  Checkpoint ck{init_params(2, ds.n_classes(), 1), {}, 1, 10, {}, {}};
  ck.optimizer = make_optimizer(ck.params);
  EXPECT_THROW(finetune_from_supernet(ds, ck, make_combination({1, 2, 3}, 4), cfg.train, 1), FormatError);
}
