#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace osta {

enum class Stage { SupernetTraining, Pruning, FineTuning };

inline std::string to_string(Stage s) {
  switch (s) {
  case Stage::SupernetTraining: return "supernet";
  case Stage::Pruning: return "pruning";
  case Stage::FineTuning: return "finetune";
  }
  return "?";
}

struct ScheduleConfig {
  std::int64_t total_iters = 2000;
  double supernet_fraction = 0.15;
  double pruning_fraction = 0.35;
  double finetune_fraction = 0.50;
  double base_lr = 0.01;
  double poly_power = 0.9;
  bool warmup_enabled = true;
  bool supernet_stage_enabled = true;

  void validate() const {
    if (total_iters < 20) throw std::invalid_argument("total iterations must be >= 20");
    if (supernet_fraction < 0 || pruning_fraction < 0 || finetune_fraction < 0 ||
        std::abs(supernet_fraction + pruning_fraction + finetune_fraction - 1.0) > 1e-9) {
      throw std::invalid_argument("stage fractions must be non-negative and sum to 1");
    }
    if (!(base_lr > 0)) throw std::invalid_argument("base learning rate must be > 0");
    if (!(poly_power > 0)) throw std::invalid_argument("poly power must be > 0");
  }

  /// floor(f1 * T): end of the warmup segment (and of stage 1 when enabled).
  std::int64_t warmup_end() const { return floor_iters(supernet_fraction); }

  /// First pruning-stage iteration.
  std::int64_t pruning_begin() const { return supernet_stage_enabled ? warmup_end() : 0; }

  /// floor((f1 + f2) * T): first fine-tuning iteration.
  std::int64_t pruning_end() const { return floor_iters(supernet_fraction + pruning_fraction); }

private:
  // The epsilon absorbs representation error, e.g. 0.15 * 2000 = 299.99999999999997.
  std::int64_t floor_iters(double f) const {
    return static_cast<std::int64_t>(std::floor(f * static_cast<double>(total_iters) + 1e-9));
  }
};

inline Stage stage_of(std::int64_t iter, const ScheduleConfig& cfg) {
  if (iter < 0 || iter >= cfg.total_iters) {
    throw std::invalid_argument("iteration " + std::to_string(iter) + " outside [0, " +
                                std::to_string(cfg.total_iters) + ")");
  }
  if (iter < cfg.pruning_begin()) return Stage::SupernetTraining;
  if (iter < cfg.pruning_end()) return Stage::Pruning;
  return Stage::FineTuning;
}

/// Linear warmup from zero over [0, floor(f1*T)), then poly decay to zero at T.
/// With warmup disabled the poly law covers the whole run.
inline double lr_at(std::int64_t iter, const ScheduleConfig& cfg) {
  if (iter < 0 || iter > cfg.total_iters) {
    throw std::invalid_argument("iteration outside [0, T]");
  }
  const double T = static_cast<double>(cfg.total_iters);
  const std::int64_t w = cfg.warmup_enabled ? cfg.warmup_end() : 0;
  if (iter < w) return cfg.base_lr * static_cast<double>(iter) / static_cast<double>(w);
  const double progress = static_cast<double>(iter - w) / (T - static_cast<double>(w));
  return cfg.base_lr * std::pow(1.0 - progress, cfg.poly_power);
}

/// Uniform pruning pauses: n = n0 - 1 pauses at s + ceil(j * P / n), j = 1..n,
/// with s the first pruning iteration and P the pruning-stage length. Pause j
/// evaluates n0 - j + 1 remaining ICs.
struct PruningPlan {
  int initial_ics = 0;
  std::vector<std::int64_t> pauses;

  int n_pauses() const noexcept { return static_cast<int>(pauses.size()); }
  int evaluations_at(int j) const noexcept { return initial_ics - j + 1; }
  std::int64_t total_evaluations() const noexcept {
    std::int64_t n = 0;
    for (int j = 1; j <= n_pauses(); ++j) n += evaluations_at(j);
    return n;
  }
};

inline PruningPlan pause_schedule(const ScheduleConfig& cfg, int n0) {
  if (n0 < 2) throw std::invalid_argument("pruning needs at least 2 initial ICs");
  const std::int64_t s = cfg.pruning_begin();
  const std::int64_t P = cfg.pruning_end() - s;
  const std::int64_t n = n0 - 1;
  if (P < n) {
    throw std::invalid_argument("pruning stage of " + std::to_string(P) + " iterations cannot host " +
                                std::to_string(n) + " distinct pauses");
  }
  PruningPlan plan{n0, {}};
  for (std::int64_t j = 1; j <= n; ++j) plan.pauses.push_back(s + (j * P + n - 1) / n);
  return plan;
}

} // namespace osta
