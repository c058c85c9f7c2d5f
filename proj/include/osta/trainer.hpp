#pragma once

#include "checkpoint.hpp"
#include "dataset.hpp"
#include "memory.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "optimizer.hpp"
#include "rng.hpp"
#include "schedule.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace osta {

/// Settings shared by every trainer.
struct TrainConfig {
  ScheduleConfig schedule;
  int batch_size = 8;
  int patch_h = 64;
  int patch_w = 64;
  Metric metric = Metric::MIoU;

  void validate() const {
    schedule.validate();
    if (batch_size < 1 || patch_h < 1 || patch_w < 1) throw std::invalid_argument("batch and patch sizes must be >= 1");
  }
};

/// Top-left corner of a patch window inside a sample.
struct Window {
  std::size_t sample = 0;
  int top = 0;
  int left = 0;
};

/// Gathers a patch restricted to `channels` straight from the sample.
inline void gather_patch(const McSample& s, const Window& w, int ph, int pw, std::span<const int> channels,
                         float* values, std::uint8_t* labels) {
  const std::size_t plane = static_cast<std::size_t>(ph) * pw;
  for (std::size_t j = 0; j < channels.size(); ++j) {
    const int c = channels[j];
    if (c < 1 || c > s.channels) throw std::invalid_argument("channel ordinal out of range");
    const float* src = s.values.data() + (c - 1) * s.plane_size();
    for (int y = 0; y < ph; ++y) {
      std::copy_n(src + static_cast<std::size_t>(w.top + y) * s.width + w.left, pw, values + j * plane + y * pw);
    }
  }
  for (int y = 0; y < ph; ++y) {
    std::copy_n(s.labels.data() + static_cast<std::size_t>(w.top + y) * s.width + w.left, pw, labels + y * pw);
  }
}

inline Batch gather_batch(const Dataset& ds, const std::vector<Window>& windows, int ph, int pw,
                          std::span<const int> channels) {
  Batch b;
  b.n = static_cast<int>(windows.size());
  b.channels = static_cast<int>(channels.size());
  b.height = ph;
  b.width = pw;
  const std::size_t plane = static_cast<std::size_t>(ph) * pw;
  b.values.resize(plane * b.channels * b.n);
  b.labels.resize(plane * b.n);
  for (int i = 0; i < b.n; ++i) {
    gather_patch(ds.samples[windows[i].sample], windows[i], ph, pw, channels,
                 b.values.data() + plane * b.channels * i, b.labels.data() + plane * i);
  }
  return b;
}

/// Random training windows for one iteration, drawn from stream (seed, "batch", iter).
inline std::vector<Window> sample_windows(const Dataset& ds, const std::vector<std::size_t>& pool,
                                          const TrainConfig& cfg, std::uint64_t data_seed, std::int64_t iter) {
  if (pool.empty()) throw std::invalid_argument("empty training pool");
  RandomStream rng(data_seed, "batch", static_cast<std::uint64_t>(iter));
  std::vector<Window> out(static_cast<std::size_t>(cfg.batch_size));
  for (auto& w : out) {
    w.sample = pool[rng.below(pool.size())];
    const auto& s = ds.samples[w.sample];
    if (s.height < cfg.patch_h || s.width < cfg.patch_w) throw std::invalid_argument("sample smaller than patch");
    w.top = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.height - cfg.patch_h + 1)));
    w.left = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.width - cfg.patch_w + 1)));
  }
  return out;
}

/// Non-overlapping patch grid over a fixed set of samples (validation, probe or test).
struct EvalSet {
  const Dataset* dataset = nullptr;
  std::vector<Window> windows;
  int patch_h = 0;
  int patch_w = 0;

  bool empty() const noexcept { return windows.empty(); }
};

inline EvalSet make_eval_set(const Dataset& ds, const std::vector<std::size_t>& samples, int ph, int pw) {
  EvalSet e{&ds, {}, ph, pw};
  for (std::size_t i : samples) {
    const auto& s = ds.samples[i];
    if (s.height < ph || s.width < pw) throw std::invalid_argument("evaluation sample smaller than patch");
    for (int top = 0; top + ph <= s.height; top += ph)
      for (int left = 0; left + pw <= s.width; left += pw) e.windows.push_back({i, top, left});
  }
  return e;
}

/// Forward-only confusion matrix of `params` on `channels` over the whole set.
inline ConfusionMatrix confusion_on(const ModelParams<float>& params, std::span<const int> channels, const EvalSet& set,
                                    int batch_size, AllocationMeter* meter = nullptr) {
  if (set.empty()) throw std::invalid_argument("empty evaluation set");
  ConfusionMatrix conf(params.n_classes);
  for (std::size_t start = 0; start < set.windows.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(set.windows.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<Window> chunk(set.windows.begin() + static_cast<std::ptrdiff_t>(start),
                              set.windows.begin() + static_cast<std::ptrdiff_t>(end));
    const auto batch = gather_batch(*set.dataset, chunk, set.patch_h, set.patch_w, channels);
    const auto pred = predict(params, batch, meter);
    conf.accumulate(pred, batch.labels);
  }
  return conf;
}

/// One optimizer step on one batch; returns the batch loss.
inline double train_step(ModelParams<float>& params, OptimizerState& opt, const Batch& batch, double lr,
                         AllocationMeter* meter) {
  auto g = backward(params, batch, meter);
  if (!std::isfinite(g.loss)) throw NonFiniteError("non-finite training loss " + std::to_string(g.loss));
  sgd_step(params, g.grads, static_cast<float>(lr), opt);
  return g.loss;
}

/// Seeds of a single-combination run: initialization from the run seed,
/// batch order from a stream keyed by the combination index.
struct RunSeeds {
  std::uint64_t init = 0;
  std::uint64_t data = 0;
};

inline RunSeeds combination_seeds(std::uint64_t seed, const ChannelCombination& comb) {
  return {seed, derive_seed(seed, "combination", comb.index)};
}

class Stopwatch {
public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

private:
  std::chrono::steady_clock::time_point start_;
};

/// Outcome of training one fixed combination (one SGS member, DF, PCA, ...).
struct UnitResult {
  ChannelCombination comb;
  ModelParams<float> params;
  OptimizerState optimizer;
  double final_loss = 0.0;
  ConfusionMatrix test_confusion;
  double test_accuracy = 0.0;
  double train_seconds = 0.0;
  std::map<std::string, std::int64_t> peak_bytes;
};

struct UnitOptions {
  std::optional<Checkpoint> resume;            // continue from this state
  std::optional<std::int64_t> stop_at;         // stop before this iteration (no test evaluation)
  std::optional<ModelParams<float>> warm_start; // initial weights instead of random init
  bool evaluate = true;
};

/// Plain training of one channel combination on the whole training split with
/// the configured learning-rate law, followed by test evaluation.
inline UnitResult train_combination(const Dataset& ds, const ChannelCombination& comb, const TrainConfig& cfg,
                                    std::uint64_t seed, const UnitOptions& opts = {}) {
  cfg.validate();
  const auto seeds = combination_seeds(seed, comb);
  AllocationMeter meter;
  UnitResult r;
  r.comb = comb;
  std::int64_t start = 0;
  if (opts.resume) {
    if (opts.resume->params.k_in != comb.size() || opts.resume->params.n_classes != ds.n_classes()) {
      throw FormatError("checkpoint architecture does not match the combination", 0);
    }
    r.params = opts.resume->params;
    r.optimizer = opts.resume->optimizer;
    start = static_cast<std::int64_t>(opts.resume->iteration);
  } else {
    r.params = opts.warm_start ? *opts.warm_start : init_params(comb.size(), ds.n_classes(), seeds.init);
    r.optimizer = make_optimizer(r.params);
  }
  const auto pool = ds.training_indices();
  const std::int64_t end = std::min(cfg.schedule.total_iters, opts.stop_at.value_or(cfg.schedule.total_iters));
  Stopwatch clock;
  meter.begin_phase("train");
  for (std::int64_t it = start; it < end; ++it) {
    const auto windows = sample_windows(ds, pool, cfg, seeds.data, it);
    const auto batch = gather_batch(ds, windows, cfg.patch_h, cfg.patch_w, comb.channels);
    r.final_loss = train_step(r.params, r.optimizer, batch, lr_at(it, cfg.schedule), &meter);
  }
  r.train_seconds = clock.seconds();
  if (opts.evaluate && end == cfg.schedule.total_iters) {
    meter.begin_phase("eval");
    const auto test = make_eval_set(ds, ds.indices({Split::Test}), cfg.patch_h, cfg.patch_w);
    r.test_confusion = confusion_on(r.params, comb.channels, test, cfg.batch_size, &meter);
    r.test_accuracy = score(r.test_confusion, cfg.metric);
  }
  r.peak_bytes = meter.peaks();
  return r;
}

/// Snapshot of a single-combination run for resumption.
inline Checkpoint unit_checkpoint(const UnitResult& r, std::uint64_t seed, std::int64_t iteration) {
  return Checkpoint{r.params, r.optimizer, seed, static_cast<std::uint64_t>(iteration), {}, {}};
}

} // namespace osta
