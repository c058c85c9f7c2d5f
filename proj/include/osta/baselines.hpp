#pragma once

#include "combinatorics.hpp"
#include "statistics.hpp"
#include "trainer.hpp"

#include <Eigen/Eigenvalues>

#include <atomic>
#include <exception>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

namespace osta {

struct SgsOptions {
  int workers = 1;
  std::vector<std::size_t> order;                        // execution order over enumeration positions; empty = ascending
  std::function<void(const UnitResult&)> on_member;      // called once per finished member (any thread, serialized)
};

struct SgsFailure {
  std::uint64_t index = 0;
  std::string message;
};

struct SgsResult {
  SgsTable table;
  std::vector<UnitResult> members; // ascending index; failed members hold only `comb`
  std::vector<SgsFailure> failures;
};

/// Exhaustive grid search: one full training per k-subset, each seeded from
/// (base_seed, index). Results are placed by index, so the execution order and
/// worker count do not affect the table.
inline SgsResult run_sgs(const Dataset& ds, int k, const TrainConfig& cfg, std::uint64_t base_seed,
                         const SgsOptions& opts = {}) {
  cfg.validate();
  const auto combos = enumerate_combinations(ds.n_channels(), k);
  std::vector<std::size_t> order = opts.order;
  if (order.empty()) {
    order.resize(combos.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
  }
  {
    auto sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      if (sorted.size() != combos.size() || sorted[i] != i) throw std::invalid_argument("SGS order must be a permutation");
    }
  }

  SgsResult out;
  out.members.resize(combos.size());
  std::vector<std::string> errors(combos.size());
  std::atomic<std::size_t> next{0};
  std::mutex callback_mutex;
  auto work = [&] {
    for (std::size_t slot; (slot = next.fetch_add(1)) < order.size();) {
      const std::size_t i = order[slot];
      try {
        out.members[i] = train_combination(ds, combos[i], cfg, base_seed);
        if (opts.on_member) {
          std::lock_guard lock(callback_mutex);
          opts.on_member(out.members[i]);
        }
      } catch (const std::exception& e) {
        out.members[i].comb = combos[i];
        errors[i] = e.what();
      }
    }
  };
  const int workers = std::max(1, std::min<int>(opts.workers, static_cast<int>(combos.size())));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  out.table.base_seed = base_seed;
  for (std::size_t i = 0; i < combos.size(); ++i) {
    if (!errors[i].empty()) {
      out.table.partial = true;
      out.failures.push_back({combos[i].index, errors[i]});
      continue;
    }
    out.table.rows.push_back({combos[i].index, out.members[i].test_accuracy});
  }
  return out;
}

/// Direct feeding: all channels as network input.
inline UnitResult run_df(const Dataset& ds, const TrainConfig& cfg, std::uint64_t seed) {
  return train_combination(ds, all_channels(ds.n_channels()), cfg, seed);
}

struct PcaModel {
  Eigen::VectorXd mean;       // per input channel
  Eigen::MatrixXd components; // C x m, column j = component j
  Eigen::VectorXd variances;  // eigenvalue of each kept component
  Eigen::VectorXd all_variances;
  bool rank_deficient = false;
  int informative = 0;
};

/// Principal components of the training pixels. Components are ordered by
/// decreasing variance; each is signed so its largest-magnitude coefficient is
/// positive. Components beyond the covariance rank are zero and flagged.
inline PcaModel fit_pca(const Dataset& ds, int m, std::size_t max_pixels = kMaxStatPixels) {
  const int C = ds.n_channels();
  if (m < 1 || m > C) throw std::invalid_argument("PCA component count must lie in [1, C]");
  const auto X = training_pixels(ds, max_pixels);
  if (X.rows() < 10 * C) throw std::invalid_argument("PCA needs at least 10*C training pixels");
  const auto cov = covariance(X);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw std::runtime_error("covariance eigen-decomposition failed");

  PcaModel model;
  model.mean = X.colwise().mean().transpose();
  model.all_variances = eig.eigenvalues().reverse();
  model.components = Eigen::MatrixXd::Zero(C, m);
  model.variances = Eigen::VectorXd::Zero(m);
  const double top = std::max(model.all_variances(0), 0.0);
  const double tol = std::max(top, 1e-300) * 1e-9;
  for (int j = 0; j < m; ++j) {
    const double lambda = model.all_variances(j);
    if (!(lambda > tol)) {
      model.rank_deficient = true;
      continue;
    }
    Eigen::VectorXd v = eig.eigenvectors().col(C - 1 - j);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    model.components.col(j) = v;
    model.variances(j) = lambda;
    ++model.informative;
  }
  return model;
}

/// Projects every sample onto the PCA components.
inline Dataset pca_transform(const Dataset& ds, const PcaModel& model) {
  const int m = static_cast<int>(model.components.cols());
  Dataset out;
  out.manifest = ds.manifest;
  out.manifest.n_channels = m;
  out.manifest.channel_names.clear();
  out.manifest.normalization.clear();
  for (int j = 1; j <= m; ++j) out.manifest.channel_names.push_back("PC" + std::to_string(j));
  const Eigen::MatrixXf Q = model.components.cast<float>();
  const Eigen::VectorXf mu = model.mean.cast<float>();
  for (const auto& s : ds.samples) {
    McSample t;
    t.height = s.height;
    t.width = s.width;
    t.channels = m;
    t.labels = s.labels;
    t.values.assign(s.plane_size() * m, 0.0f);
    const auto n = static_cast<Eigen::Index>(s.plane_size());
    Eigen::Map<const Eigen::MatrixXf> in(s.values.data(), n, s.channels);
    Eigen::Map<Eigen::MatrixXf> proj(t.values.data(), n, m);
    proj.noalias() = (in.rowwise() - mu.transpose()) * Q;
    out.samples.push_back(std::move(t));
  }
  return out;
}

struct PcaResult {
  PcaModel model;
  Dataset data;
};

inline PcaResult pca_extract(const Dataset& ds, int m = 3) {
  PcaResult r{fit_pca(ds, m), {}};
  r.data = pca_transform(ds, r.model);
  return r;
}

/// Top-m channels by marginal training-split entropy; ties keep the lower ordinal.
inline ChannelCombination entropy_select(const Dataset& ds, int m = 3) {
  if (m < 1 || m > ds.n_channels()) throw std::invalid_argument("entropy selection size must lie in [1, C]");
  const auto h = channel_entropies(ds);
  std::vector<int> order(h.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return h[a] > h[b]; });
  std::vector<int> chosen;
  for (int i = 0; i < m; ++i) chosen.push_back(order[i] + 1);
  std::sort(chosen.begin(), chosen.end());
  return make_combination(chosen, ds.n_channels());
}

} // namespace osta
