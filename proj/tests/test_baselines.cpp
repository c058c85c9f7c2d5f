#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace osta;
using namespace osta::testing;

namespace {

TrainConfig small_train(std::int64_t iters = 40) {
  auto cfg = tiny_run(iters).train;
  return cfg;
}

/// 4 channels from the tiny generator, reduced to n of them.
Dataset first_channels(int n) {
  auto ds = tiny_dataset();
  std::vector<int> keep;
  for (int c = 1; c <= n; ++c) keep.push_back(c);
  return select_channels(ds, make_combination(keep, ds.n_channels()));
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix, descending.
std::vector<double> jacobi_eigenvalues(std::vector<std::vector<double>> a) {
  const std::size_t n = a.size();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a[i][j] * a[i][j];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev;
  for (std::size_t i = 0; i < n; ++i) ev.push_back(a[i][i]);
  std::sort(ev.rbegin(), ev.rend());
  return ev;
}

/// Samples whose channels are scaled copies of one latent plus `noise`.
Dataset rank_one_dataset(const std::vector<double>& loadings, double noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  const int C = static_cast<int>(loadings.size());
  std::vector<McSample> samples;
  for (int i = 0; i < 4; ++i) {
    McSample s;
    s.height = s.width = 12;
    s.channels = C;
    s.values.resize(144u * C);
    s.labels.assign(144, 0);
    for (int px = 0; px < 144; ++px) {
      const double t = nd(rng);
      for (int c = 0; c < C; ++c) s.values[c * 144 + px] = static_cast<float>(loadings[c] * t + noise * nd(rng) + c);
    }
    samples.push_back(std::move(s));
  }
  return make_dataset(std::move(samples), {Split::Train, Split::Train, Split::Train, Split::Test}, 1);
}

} // namespace

TEST(Sgs, OneRowPerCombination) {
  const auto ds = tiny_dataset();
  std::vector<std::uint64_t> seen;
  SgsOptions opts;
  opts.on_member = [&](const UnitResult& r) { seen.push_back(r.comb.index); };
  const auto r = run_sgs(ds, 3, small_train(), 7, opts);
  ASSERT_EQ(r.table.rows.size(), 4u);
  EXPECT_FALSE(r.table.partial);
  EXPECT_TRUE(r.failures.empty());
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(r.table.rows[i].index, i + 1);
    EXPECT_EQ(r.table.rows[i].accuracy, r.members[i].test_accuracy);
    EXPECT_EQ(r.members[i].comb, combination_from_index(4, 3, i + 1));
  }
  EXPECT_EQ(seen.size(), 4u);
}

TEST(Sgs, MembersEqualStandaloneTraining) {
  const auto ds = tiny_dataset();
  const auto r = run_sgs(ds, 3, small_train(), 7);
  const auto solo = train_combination(ds, combination_from_index(4, 3, 2), small_train(), 7);
  EXPECT_EQ(r.members[1].params, solo.params);
  EXPECT_EQ(r.table.rows[1].accuracy, solo.test_accuracy);
}

TEST(Sgs, IndependentOfOrderAndWorkers) {
  const auto ds = tiny_dataset();
  const auto a = run_sgs(ds, 3, small_train(), 7);
  SgsOptions opts;
  opts.order = {3, 1, 0, 2};
  opts.workers = 3;
  const auto b = run_sgs(ds, 3, small_train(), 7, opts);
  EXPECT_EQ(a.table, b.table);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(a.members[i].params, b.members[i].params);
}

TEST(Sgs, RejectsNonPermutationOrder) {
  const auto ds = tiny_dataset();
  SgsOptions opts;
  opts.order = {0, 0, 1, 2};
  EXPECT_THROW(run_sgs(ds, 3, small_train(), 7, opts), std::invalid_argument);
}

TEST(Sgs, FailedMemberMarksTablePartial) {
  const auto ds = tiny_dataset();
  auto cfg = small_train();
  cfg.schedule.base_lr = 1e30; // diverges to a non-finite loss
  const auto r = run_sgs(ds, 3, cfg, 7);
  EXPECT_TRUE(r.table.partial);
  EXPECT_EQ(r.failures.size(), 4u);
  EXPECT_TRUE(r.table.rows.empty());
}

TEST(DirectFeeding, AllChannelsEqualsFullCombination) {
  const auto ds = first_channels(3);
  const auto df = run_df(ds, small_train(), 5);
  const auto full = train_combination(ds, make_combination({1, 2, 3}, 3), small_train(), 5);
  EXPECT_EQ(df.comb.channels, (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(df.params, full.params);
  EXPECT_EQ(df.test_confusion, full.test_confusion);
  const auto sgs = run_sgs(ds, 3, small_train(), 5);
  ASSERT_EQ(sgs.table.rows.size(), 1u);
  EXPECT_EQ(sgs.table.rows[0].accuracy, df.test_accuracy);
}

TEST(Pca, RankOneDataConcentratesVariance) {
  const auto ds = rank_one_dataset({1.0, -2.0, 0.5, 3.0}, 1e-3, 1);
  const auto model = fit_pca(ds, 3);
  const double total = model.all_variances.sum();
  EXPECT_GE(model.all_variances(0) / total, 0.999);

  // independent eigenvalues of the same covariance
  const auto cov = covariance(training_pixels(ds));
  std::vector<std::vector<double>> a(4, std::vector<double>(4));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) a[i][j] = cov(i, j);
  const auto ev = jacobi_eigenvalues(a);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(model.all_variances(i), ev[i], 1e-9 * ev[0]);

  // leading direction follows the loadings (sign rule: largest coefficient positive)
  const Eigen::Vector4d l = Eigen::Vector4d(1.0, -2.0, 0.5, 3.0).normalized();
  EXPECT_NEAR(model.components.col(0).dot(l), 1.0, 1e-4);
}

TEST(Pca, ComponentsOrthonormal) {
  const auto ds = tiny_dataset();
  const auto model = fit_pca(ds, 4);
  const Eigen::MatrixXd qtq = model.components.transpose() * model.components;
  EXPECT_TRUE(qtq.isApprox(Eigen::MatrixXd::Identity(4, 4), 1e-10));
  for (int j = 1; j < 4; ++j) EXPECT_GE(model.variances(j - 1), model.variances(j));
}

TEST(Pca, FullRankProjectionReconstructsAndKeepsVariance) {
  const auto ds = tiny_dataset();
  const auto r = pca_extract(ds, 4);
  ASSERT_EQ(r.data.n_channels(), 4);
  EXPECT_EQ(r.data.manifest.channel_names, (std::vector<std::string>{"PC1", "PC2", "PC3", "PC4"}));
  const auto X = training_pixels(ds);
  const auto Y = training_pixels(r.data);
  const Eigen::MatrixXd back = (Y * r.model.components.transpose()).rowwise() + r.model.mean.transpose();
  EXPECT_LE((back - X).cwiseAbs().maxCoeff(), 1e-4);
  EXPECT_NEAR(covariance(Y).trace(), covariance(X).trace(), 1e-4 * covariance(X).trace());
  EXPECT_EQ(r.data.samples[0].labels, ds.samples[0].labels);
}

TEST(Pca, RankDeficiencyFlagged) {
  const auto ds = rank_one_dataset({1.0, 2.0, 3.0}, 0.0, 2);
  const auto model = fit_pca(ds, 3);
  EXPECT_TRUE(model.rank_deficient);
  EXPECT_EQ(model.informative, 1);
  EXPECT_TRUE(model.components.col(2).isZero());
}

TEST(Pca, RejectsBadArguments) {
  const auto ds = tiny_dataset();
  EXPECT_THROW(fit_pca(ds, 0), std::invalid_argument);
  EXPECT_THROW(fit_pca(ds, 5), std::invalid_argument);
}

namespace {

Dataset entropy_dataset() {
  std::mt19937_64 rng(3);
  std::vector<McSample> samples;
  for (int i = 0; i < 3; ++i) {
    auto s = random_sample(rng, 16, 16, 4, 2);
    std::uniform_int_distribution<int> byte(0, 255), bit(0, 1);
    for (auto& v : s.plane(0)) v = static_cast<float>(bit(rng));  // 1 bit
    for (auto& v : s.plane(1)) v = 4.0f;                          // constant
    for (auto& v : s.plane(2)) v = static_cast<float>(byte(rng)); // ~8 bits
    for (auto& v : s.plane(3)) v = static_cast<float>(byte(rng) % 16); // ~4 bits
    samples.push_back(std::move(s));
  }
  return make_dataset(std::move(samples), {Split::Train, Split::Train, Split::Test}, 2);
}

} // namespace

TEST(EntropySelect, PrefersHighEntropyChannels) {
  const auto ds = entropy_dataset();
  const auto h = channel_entropies(ds);
  EXPECT_EQ(h[1], 0.0);
  EXPECT_NEAR(h[0], 1.0, 0.01);
  EXPECT_GT(h[2], h[3]);
  EXPECT_EQ(entropy_select(ds, 1).channels, (std::vector<int>{3}));
  EXPECT_EQ(entropy_select(ds, 2).channels, (std::vector<int>{3, 4}));
  EXPECT_EQ(entropy_select(ds, 3).channels, (std::vector<int>{1, 3, 4}));
}

TEST(EntropySelect, FullSizeIsIdentity) {
  const auto ds = entropy_dataset();
  EXPECT_EQ(entropy_select(ds, 4), all_channels(4));
  EXPECT_THROW(entropy_select(ds, 5), std::invalid_argument);
}
