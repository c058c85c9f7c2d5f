#pragma once

#include "combinatorics.hpp"
#include "statistics.hpp"
#include "trainer.hpp"

#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace osta {

enum class Strategy { Progressive, RankOnce, None };
enum class Criterion { ValAcc, TrainAcc, Entropy, Pca };

inline std::string to_string(Strategy s) {
  switch (s) {
  case Strategy::Progressive: return "progressive";
  case Strategy::RankOnce: return "rank_once";
  case Strategy::None: return "none";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "progressive") return Strategy::Progressive;
  if (s == "rank_once") return Strategy::RankOnce;
  if (s == "none") return Strategy::None;
  throw std::invalid_argument("unknown pruning strategy '" + s + "'");
}

inline std::string to_string(Criterion c) {
  switch (c) {
  case Criterion::ValAcc: return "val_acc";
  case Criterion::TrainAcc: return "train_acc";
  case Criterion::Entropy: return "entropy";
  case Criterion::Pca: return "pca";
  }
  return "?";
}

inline Criterion parse_criterion(const std::string& s) {
  if (s == "val_acc") return Criterion::ValAcc;
  if (s == "train_acc") return Criterion::TrainAcc;
  if (s == "entropy") return Criterion::Entropy;
  if (s == "pca") return Criterion::Pca;
  throw std::invalid_argument("unknown pruning criterion '" + s + "'");
}

struct RunConfig {
  int k = 3;
  TrainConfig train;
  Strategy strategy = Strategy::Progressive;
  Criterion criterion = Criterion::ValAcc;
  std::optional<std::filesystem::path> init_checkpoint; // warm start instead of random init
  std::optional<ChannelCombination> fixed_ic;            // required for strategy none

  void validate(int n_channels) const {
    train.validate();
    if (k < 1 || k > n_channels) throw std::invalid_argument("k must lie in [1, n_channels]");
    if (strategy == Strategy::None && !fixed_ic) throw std::invalid_argument("strategy none needs a fixed IC");
    if (fixed_ic && (fixed_ic->size() != k || fixed_ic->universe != n_channels)) {
      throw std::invalid_argument("fixed IC does not match k and the channel count");
    }
  }
};

struct SupernetState {
  ModelParams<float> params;
  OptimizerState optimizer;
  std::vector<ChannelCombination> remaining; // ascending by index
  std::vector<Elimination> eliminated;
  std::uint64_t seed = 0;
  std::int64_t iteration = 0;

  Checkpoint checkpoint() const {
    Checkpoint c{params, optimizer, seed, static_cast<std::uint64_t>(iteration), {}, eliminated};
    for (const auto& ic : remaining) c.remaining.push_back(ic.index);
    return c;
  }
};

struct SelectionScore {
  std::uint64_t index = 0;
  double score = 0.0;
};

struct OstaResult {
  ChannelCombination scc;
  ModelParams<float> params;
  OptimizerState optimizer;
  std::vector<Elimination> eliminated;
  std::vector<SelectionScore> selection; // rank_once: every IC's score
  std::map<std::string, double> stage_seconds;
  std::map<std::string, std::int64_t> peak_bytes;
  double final_loss = 0.0;
  double train_seconds = 0.0;
  ConfusionMatrix test_confusion;
  double test_accuracy = 0.0;
  std::optional<Checkpoint> supernet_checkpoint; // end of stage 1
  std::vector<std::string> log;

  Checkpoint checkpoint(std::uint64_t seed, std::int64_t iteration) const {
    return Checkpoint{params, optimizer, seed, static_cast<std::uint64_t>(iteration), {scc.index}, eliminated};
  }
};

/// Elimination log as CSV `pause,index,score`.
inline std::string elimination_csv(const std::vector<Elimination>& log) {
  std::string out = "pause,index,score\n";
  char buf[96];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%d,%llu,%.17g\n", e.pause, static_cast<unsigned long long>(e.index), e.score);
    out += buf;
  }
  return out;
}

inline std::string pause_line(const Elimination& e, std::size_t remaining) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "pause=%d removed=%llu score=%.6f remaining=%zu", e.pause,
                static_cast<unsigned long long>(e.index), e.score, remaining);
  return buf;
}

/// Uniform draw over the remaining ICs.
inline const ChannelCombination& sample_ic(const std::vector<ChannelCombination>& remaining, RandomStream& rng) {
  if (remaining.empty()) throw InvalidState("no remaining ICs to sample from");
  return remaining[rng.below(remaining.size())];
}

/// Forward-only accuracy of the shared params on one IC.
inline double evaluate_ic(const ModelParams<float>& params, const ChannelCombination& ic, const EvalSet& set,
                          Metric metric, int batch_size, AllocationMeter* meter = nullptr) {
  return score(confusion_on(params, ic.channels, set, batch_size, meter), metric);
}

/// Data a pruning criterion may consult; built once per run.
struct CriterionContext {
  Criterion criterion = Criterion::ValAcc;
  Metric metric = Metric::MIoU;
  int batch_size = 8;
  EvalSet eval; // subval (val_acc) or the frozen subtrain probe (train_acc)
  std::vector<double> entropies;
  Eigen::MatrixXd correlation;
};

/// Probe for train_acc: |subval| subtrain samples drawn once from stream (seed, "osta.probe").
inline std::vector<std::size_t> probe_samples(const std::vector<std::size_t>& subtrain, std::size_t count,
                                              std::uint64_t seed) {
  std::vector<std::size_t> pool = subtrain;
  count = std::min(count, pool.size());
  RandomStream rng(seed, "osta.probe", 0);
  for (std::size_t i = 0; i < count; ++i) {
    std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
  }
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

inline CriterionContext make_criterion_context(const Dataset& ds, const RunConfig& cfg, std::uint64_t seed) {
  CriterionContext ctx;
  ctx.criterion = cfg.criterion;
  ctx.metric = cfg.train.metric;
  ctx.batch_size = cfg.train.batch_size;
  const auto subval = ds.indices({Split::SubVal});
  switch (cfg.criterion) {
  case Criterion::ValAcc:
    ctx.eval = make_eval_set(ds, subval, cfg.train.patch_h, cfg.train.patch_w);
    break;
  case Criterion::TrainAcc:
    ctx.eval = make_eval_set(ds, probe_samples(ds.indices({Split::SubTrain}), subval.size(), seed),
                             cfg.train.patch_h, cfg.train.patch_w);
    break;
  case Criterion::Entropy: ctx.entropies = channel_entropies(ds); break;
  case Criterion::Pca: ctx.correlation = channel_correlation(ds); break;
  }
  return ctx;
}

/// Criterion score of one IC; higher means keep.
inline double criterion_score(const CriterionContext& ctx, const ModelParams<float>& params,
                              const ChannelCombination& ic, AllocationMeter* meter = nullptr) {
  switch (ctx.criterion) {
  case Criterion::ValAcc:
  case Criterion::TrainAcc:
    return evaluate_ic(params, ic, ctx.eval, ctx.metric, ctx.batch_size, meter);
  case Criterion::Entropy: {
    double sum = 0.0;
    for (int c : ic.channels) sum += ctx.entropies.at(static_cast<std::size_t>(c - 1));
    return sum / static_cast<double>(ic.channels.size());
  }
  case Criterion::Pca: return correlation_log_det(ctx.correlation, ic.channels);
  }
  throw std::invalid_argument("unknown criterion");
}

/// Removes the IC with the minimum score; ties remove the largest index.
/// `scores[i]` belongs to `state.remaining[i]`.
inline Elimination prune_step(SupernetState& state, const std::vector<double>& scores, int pause) {
  if (state.remaining.size() < 2) throw InvalidState("pruning needs at least two remaining ICs");
  if (scores.size() != state.remaining.size()) throw std::invalid_argument("one score per remaining IC required");
  std::size_t worst = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] < scores[worst] || (scores[i] == scores[worst] && state.remaining[i].index > state.remaining[worst].index)) {
      worst = i;
    }
  }
  Elimination e{pause, state.remaining[worst].index, scores[worst]};
  state.remaining.erase(state.remaining.begin() + static_cast<std::ptrdiff_t>(worst));
  state.eliminated.push_back(e);
  return e;
}

using LogSink = std::function<void(const std::string&)>;

namespace detail {

inline ModelParams<float> initial_params(const RunConfig& cfg, int n_classes, std::uint64_t seed) {
  if (!cfg.init_checkpoint) return init_params(cfg.k, n_classes, seed);
  auto ck = load_checkpoint(*cfg.init_checkpoint);
  if (ck.params.k_in != cfg.k || ck.params.n_classes != n_classes) {
    throw FormatError("initial checkpoint architecture does not match the run", 0);
  }
  return std::move(ck.params);
}

inline std::vector<double> score_all(const CriterionContext& ctx, const SupernetState& state, AllocationMeter& meter) {
  std::vector<double> scores;
  scores.reserve(state.remaining.size());
  for (const auto& ic : state.remaining) scores.push_back(criterion_score(ctx, state.params, ic, &meter));
  return scores;
}

inline const char* train_phase(Stage stage) {
  switch (stage) {
  case Stage::SupernetTraining: return "supernet_train";
  case Stage::Pruning: return "pruning_train";
  case Stage::FineTuning: return "finetune_train";
  }
  return "train";
}

} // namespace detail

/// The full one-shot pipeline. With strategy none the loop trains the fixed IC
/// alone with the same seeds as the single-combination trainer.
inline OstaResult run_osta(const Dataset& ds, const RunConfig& cfg, std::uint64_t seed, const LogSink& sink = {}) {
  cfg.validate(ds.n_channels());
  const auto& sched = cfg.train.schedule;
  const std::int64_t T = sched.total_iters;
  AllocationMeter meter;
  OstaResult r;
  auto emit = [&](const std::string& line) {
    r.log.push_back(line);
    if (sink) sink(line);
  };

  SupernetState st;
  st.seed = seed;
  std::uint64_t data_seed = seed;
  std::vector<std::size_t> pool_before, pool_after;
  if (cfg.strategy == Strategy::None) {
    const auto seeds = combination_seeds(seed, *cfg.fixed_ic);
    data_seed = seeds.data;
    st.remaining = {*cfg.fixed_ic};
    pool_before = pool_after = ds.training_indices();
  } else {
    st.remaining = enumerate_combinations(ds.n_channels(), cfg.k);
    pool_before = ds.indices({Split::SubTrain});
    pool_after = ds.indices({Split::SubTrain, Split::SubVal});
    if (pool_before.empty() || ds.indices({Split::SubVal}).empty()) {
      throw std::invalid_argument("OSTA needs subtrain and subval splits; run the split step first");
    }
  }
  st.params = detail::initial_params(cfg, ds.n_classes(), seed);
  st.optimizer = make_optimizer(st.params);

  std::optional<CriterionContext> ctx;
  if (cfg.strategy != Strategy::None && st.remaining.size() > 1) ctx = make_criterion_context(ds, cfg, seed);

  std::vector<std::int64_t> pauses;
  if (cfg.strategy == Strategy::Progressive && st.remaining.size() > 1) {
    pauses = pause_schedule(sched, static_cast<int>(st.remaining.size())).pauses;
  }
  // Fine-tuning on the merged pool starts at the end of pruning, or right after
  // the single ranking for rank_once.
  const std::int64_t merge_at = cfg.strategy == Strategy::RankOnce ? sched.warmup_end() : sched.pruning_end();
  const bool save_stage1 = cfg.strategy != Strategy::None && sched.supernet_stage_enabled;

  std::size_t next_pause = 0;
  Stopwatch total;
  for (std::int64_t it = 0; it <= T; ++it) {
    st.iteration = it;
    if (save_stage1 && it == sched.warmup_end()) r.supernet_checkpoint = st.checkpoint();

    if (cfg.strategy == Strategy::RankOnce && ctx && it == sched.warmup_end()) {
      Stopwatch clock;
      meter.begin_phase("pruning_eval");
      const auto scores = detail::score_all(*ctx, st, meter);
      std::size_t best = 0;
      for (std::size_t i = 0; i < scores.size(); ++i) {
        r.selection.push_back({st.remaining[i].index, scores[i]});
        if (scores[i] > scores[best]) best = i;
      }
      st.remaining = {st.remaining[best]};
      char buf[96];
      std::snprintf(buf, sizeof buf, "rank selected=%llu score=%.6f",
                    static_cast<unsigned long long>(st.remaining[0].index), scores[best]);
      emit(buf);
      r.stage_seconds["pruning_eval"] += clock.seconds();
    }
    while (next_pause < pauses.size() && pauses[next_pause] == it) {
      Stopwatch clock;
      meter.begin_phase("pruning_eval");
      const auto before = value_hash(st.params);
      const auto scores = detail::score_all(*ctx, st, meter);
      if (value_hash(st.params) != before) throw InvalidState("parameters changed during a pruning sweep");
      const auto e = prune_step(st, scores, static_cast<int>(next_pause) + 1);
      emit(pause_line(e, st.remaining.size()));
      ++next_pause;
      r.stage_seconds["pruning_eval"] += clock.seconds();
    }
    if (it == T) break;

    Stopwatch clock;
    const Stage stage = stage_of(it, sched);
    const char* phase = cfg.strategy == Strategy::None                               ? "train"
                        : cfg.strategy == Strategy::RankOnce && it >= sched.warmup_end() ? "finetune_train"
                                                                                          : detail::train_phase(stage);
    meter.begin_phase(phase);
    const auto& ic = st.remaining.size() == 1 ? st.remaining.front() : [&]() -> const ChannelCombination& {
      RandomStream rng(seed, "osta.ic", static_cast<std::uint64_t>(it));
      return sample_ic(st.remaining, rng);
    }();
    const auto& pool = it < merge_at ? pool_before : pool_after;
    const auto windows = sample_windows(ds, pool, cfg.train, data_seed, it);
    const auto batch = gather_batch(ds, windows, cfg.train.patch_h, cfg.train.patch_w, ic.channels);
    r.final_loss = train_step(st.params, st.optimizer, batch, lr_at(it, sched), &meter);
    r.stage_seconds[phase] += clock.seconds();
  }
  r.train_seconds = total.seconds();
  if (st.remaining.size() != 1) throw InvalidState("pruning did not converge to a single IC");

  r.scc = st.remaining.front();
  meter.begin_phase("eval");
  const auto test = make_eval_set(ds, ds.indices({Split::Test}), cfg.train.patch_h, cfg.train.patch_w);
  r.test_confusion = confusion_on(st.params, r.scc.channels, test, cfg.train.batch_size, &meter);
  r.test_accuracy = score(r.test_confusion, cfg.train.metric);
  r.params = std::move(st.params);
  r.optimizer = std::move(st.optimizer);
  r.eliminated = std::move(st.eliminated);
  r.peak_bytes = meter.peaks();
  char buf[160];
  std::snprintf(buf, sizeof buf, "scc=%llu accuracy=%.4f final_loss=%.6f seconds=%.2f",
                static_cast<unsigned long long>(r.scc.index), r.test_accuracy, r.final_loss, r.train_seconds);
  emit(buf);
  return r;
}

/// Ranking ablation: one sweep over all ICs at the end of stage 1, then fine-tune the best.
inline OstaResult run_rank_once(const Dataset& ds, RunConfig cfg, std::uint64_t seed, const LogSink& sink = {}) {
  cfg.strategy = Strategy::RankOnce;
  return run_osta(ds, cfg, seed, sink);
}

/// Fine-tunes `comb` from a supernet checkpoint for the remaining iteration budget.
inline OstaResult finetune_from_supernet(const Dataset& ds, const Checkpoint& ck, const ChannelCombination& comb,
                                         const TrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (ck.params.k_in != comb.size() || ck.params.n_classes != ds.n_classes()) {
    throw FormatError("supernet checkpoint architecture does not match the combination", 0);
  }
  AllocationMeter meter;
  OstaResult r;
  r.scc = comb;
  r.params = ck.params;
  r.optimizer = ck.optimizer;
  const auto pool = ds.training_indices();
  const auto data_seed = derive_seed(seed, "finetune", comb.index);
  Stopwatch clock;
  meter.begin_phase("finetune_train");
  for (auto it = static_cast<std::int64_t>(ck.iteration); it < cfg.schedule.total_iters; ++it) {
    const auto windows = sample_windows(ds, pool, cfg, data_seed, it);
    const auto batch = gather_batch(ds, windows, cfg.patch_h, cfg.patch_w, comb.channels);
    r.final_loss = train_step(r.params, r.optimizer, batch, lr_at(it, cfg.schedule), &meter);
  }
  r.train_seconds = clock.seconds();
  r.stage_seconds["finetune_train"] = r.train_seconds;
  meter.begin_phase("eval");
  const auto test = make_eval_set(ds, ds.indices({Split::Test}), cfg.patch_h, cfg.patch_w);
  r.test_confusion = confusion_on(r.params, comb.channels, test, cfg.batch_size, &meter);
  r.test_accuracy = score(r.test_confusion, cfg.metric);
  r.peak_bytes = meter.peaks();
  return r;
}

} // namespace osta
