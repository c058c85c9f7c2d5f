#pragma once

#include "dataset.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace osta {

inline constexpr int kEntropyBins = 256;
inline constexpr std::size_t kMaxStatPixels = 1'000'000;

/// Shannon entropy in bits of `values` histogrammed into `bins` equal-width
/// bins over [lo, hi]. A degenerate range yields 0.
inline double histogram_entropy(std::span<const float> values, double lo, double hi, int bins = kEntropyBins) {
  if (bins < 1) throw std::invalid_argument("histogram needs at least one bin");
  if (values.empty() || !(hi > lo)) return 0.0;
  std::vector<std::uint64_t> counts(static_cast<std::size_t>(bins), 0);
  const double scale = bins / (hi - lo);
  for (float v : values) {
    auto b = static_cast<std::int64_t>(std::floor((static_cast<double>(v) - lo) * scale));
    b = std::clamp<std::int64_t>(b, 0, bins - 1);
    ++counts[static_cast<std::size_t>(b)];
  }
  const double n = static_cast<double>(values.size());
  double h = 0.0;
  for (auto c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log2(p);
  }
  return h;
}

/// All training-split values of channel `c` (1-based), concatenated in sample order.
inline std::vector<float> training_values(const Dataset& ds, int c) {
  if (c < 1 || c > ds.n_channels()) throw std::invalid_argument("channel ordinal out of range");
  std::vector<float> out;
  for (std::size_t i : ds.training_indices()) {
    const auto p = ds.samples[i].plane(c - 1);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

/// Marginal entropy of every channel over the training splits, 256 bins on
/// each channel's own training range.
inline std::vector<double> channel_entropies(const Dataset& ds, int bins = kEntropyBins) {
  std::vector<double> out;
  for (int c = 1; c <= ds.n_channels(); ++c) {
    const auto v = training_values(ds, c);
    if (v.empty()) throw std::invalid_argument("training split is empty");
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    out.push_back(histogram_entropy(v, *lo, *hi, bins));
  }
  return out;
}

/// Training pixels as rows of a (pixels x channels) matrix, stride-subsampled
/// so at most `max_pixels` rows are kept.
inline Eigen::MatrixXd training_pixels(const Dataset& ds, std::size_t max_pixels = kMaxStatPixels) {
  const auto train = ds.training_indices();
  std::size_t total = 0;
  for (std::size_t i : train) total += ds.samples[i].plane_size();
  if (total == 0) throw std::invalid_argument("training split is empty");
  const std::size_t stride = (total + max_pixels - 1) / max_pixels;
  const std::size_t rows = (total + stride - 1) / stride;
  const int C = ds.n_channels();
  Eigen::MatrixXd X(static_cast<Eigen::Index>(rows), C);
  std::size_t global = 0, row = 0;
  for (std::size_t i : train) {
    const auto& s = ds.samples[i];
    const std::size_t n = s.plane_size();
    // first pixel of this sample that lands on the global stride grid
    std::size_t p = (stride - global % stride) % stride;
    for (; p < n; p += stride, ++row) {
      for (int c = 0; c < C; ++c) X(static_cast<Eigen::Index>(row), c) = s.values[c * n + p];
    }
    global += n;
  }
  return X;
}

inline Eigen::MatrixXd covariance(const Eigen::MatrixXd& X) {
  if (X.rows() < 2) throw std::invalid_argument("covariance needs at least two rows");
  const Eigen::RowVectorXd mean = X.colwise().mean();
  const Eigen::MatrixXd centered = X.rowwise() - mean;
  return (centered.transpose() * centered) / static_cast<double>(X.rows() - 1);
}

/// Pearson correlation matrix. Rows and columns of zero-variance channels are
/// zero, which makes every submatrix containing them singular.
inline Eigen::MatrixXd correlation(const Eigen::MatrixXd& cov) {
  const Eigen::Index C = cov.rows();
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(C, C);
  for (Eigen::Index i = 0; i < C; ++i) {
    for (Eigen::Index j = 0; j < C; ++j) {
      const double d = std::sqrt(cov(i, i) * cov(j, j));
      if (d > 0) r(i, j) = cov(i, j) / d;
    }
  }
  return r;
}

inline Eigen::MatrixXd channel_correlation(const Dataset& ds) { return correlation(covariance(training_pixels(ds))); }

/// log det of the correlation submatrix over `channels` (1-based); -inf when
/// the determinant is at most 1e-10.
inline double correlation_log_det(const Eigen::MatrixXd& corr, std::span<const int> channels) {
  const auto k = static_cast<Eigen::Index>(channels.size());
  Eigen::MatrixXd sub(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j) sub(i, j) = corr(channels[i] - 1, channels[j] - 1);
  const double det = sub.determinant();
  if (!(det > 1e-10)) return -std::numeric_limits<double>::infinity();
  return std::log(det);
}

} // namespace osta
