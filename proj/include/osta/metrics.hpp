#pragma once

#include "error.hpp"
#include "mci.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace osta {

enum class Metric { MIoU, MA };

inline std::string to_string(Metric m) { return m == Metric::MIoU ? "mIoU" : "mA"; }

inline Metric parse_metric(const std::string& s) {
  if (s == "mIoU" || s == "miou") return Metric::MIoU;
  if (s == "mA" || s == "ma") return Metric::MA;
  throw std::invalid_argument("unknown metric '" + s + "'");
}

/// counts[actual][predicted].
class ConfusionMatrix {
public:
  explicit ConfusionMatrix(int n_classes = 0)
      : n_(n_classes), counts_(static_cast<std::size_t>(n_classes) * n_classes, 0) {}

  int n_classes() const noexcept { return n_; }
  std::uint64_t at(int actual, int predicted) const { return counts_.at(static_cast<std::size_t>(actual) * n_ + predicted); }
  std::uint64_t& at(int actual, int predicted) { return counts_.at(static_cast<std::size_t>(actual) * n_ + predicted); }

  std::uint64_t total() const noexcept {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }

  /// Adds one prediction/label map pair; ignore-label pixels are skipped.
  void accumulate(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> labels) {
    if (predicted.size() != labels.size()) throw std::invalid_argument("prediction and label maps differ in size");
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const auto a = labels[i];
      if (a == kIgnoreLabel) continue;
      const auto p = predicted[i];
      if (a >= n_ || p >= n_) throw std::invalid_argument("class id out of range in accumulate");
      ++counts_[static_cast<std::size_t>(a) * n_ + p];
    }
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    if (o.n_ != n_) throw std::invalid_argument("confusion matrices differ in class count");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
    return *this;
  }

  static ConfusionMatrix from_rows(const std::vector<std::vector<std::uint64_t>>& rows) {
    ConfusionMatrix m(static_cast<int>(rows.size()));
    for (std::size_t a = 0; a < rows.size(); ++a) {
      if (rows[a].size() != rows.size()) throw std::invalid_argument("confusion matrix must be square");
      for (std::size_t p = 0; p < rows.size(); ++p) m.at(static_cast<int>(a), static_cast<int>(p)) = rows[a][p];
    }
    return m;
  }

  std::vector<std::vector<std::uint64_t>> rows() const {
    std::vector<std::vector<std::uint64_t>> r(static_cast<std::size_t>(n_), std::vector<std::uint64_t>(n_));
    for (int a = 0; a < n_; ++a)
      for (int p = 0; p < n_; ++p) r[a][p] = at(a, p);
    return r;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

private:
  int n_;
  std::vector<std::uint64_t> counts_;
};

/// Mean over classes of TP / actual pixels, in percent. Classes absent from the
/// labels are left out of the mean.
inline double mean_accuracy(const ConfusionMatrix& m) {
  double sum = 0.0;
  int used = 0;
  for (int c = 0; c < m.n_classes(); ++c) {
    std::uint64_t actual = 0;
    for (int p = 0; p < m.n_classes(); ++p) actual += m.at(c, p);
    if (actual == 0) continue;
    sum += static_cast<double>(m.at(c, c)) / static_cast<double>(actual);
    ++used;
  }
  if (used == 0) throw UndefinedMetric("mean accuracy undefined: no labeled pixels");
  return 100.0 * sum / used;
}

/// Mean over classes of TP / (TP + FP + FN), in percent. Classes with
/// TP + FP + FN = 0 are left out.
inline double mean_iou(const ConfusionMatrix& m) {
  double sum = 0.0;
  int used = 0;
  for (int c = 0; c < m.n_classes(); ++c) {
    const std::uint64_t tp = m.at(c, c);
    std::uint64_t fp = 0, fn = 0;
    for (int o = 0; o < m.n_classes(); ++o) {
      if (o == c) continue;
      fp += m.at(o, c);
      fn += m.at(c, o);
    }
    const std::uint64_t denom = tp + fp + fn;
    if (denom == 0) continue;
    sum += static_cast<double>(tp) / static_cast<double>(denom);
    ++used;
  }
  if (used == 0) throw UndefinedMetric("mean IoU undefined: every class is empty");
  return 100.0 * sum / used;
}

inline double score(const ConfusionMatrix& m, Metric metric) {
  return metric == Metric::MIoU ? mean_iou(m) : mean_accuracy(m);
}

// ---------------------------------------------------------------------------
// SGS table and the accuracy-percentile metrics built on it
// ---------------------------------------------------------------------------

struct SgsRow {
  std::uint64_t index = 0;
  double accuracy = 0.0; // percent

  friend bool operator==(const SgsRow&, const SgsRow&) = default;
};

struct SgsTable {
  std::vector<SgsRow> rows; // ascending index
  std::uint64_t base_seed = 0;
  bool partial = false;

  std::optional<double> accuracy_of(std::uint64_t index) const {
    for (const auto& r : rows)
      if (r.index == index) return r.accuracy;
    return std::nullopt;
  }

  std::vector<double> accuracies() const {
    std::vector<double> a;
    for (const auto& r : rows) a.push_back(r.accuracy);
    return a;
  }

  friend bool operator==(const SgsTable&, const SgsTable&) = default;
};

/// `index,accuracy` with a header line; accuracies printed round-trip exact.
inline std::string sgs_to_csv(const SgsTable& t) {
  std::ostringstream os;
  os << "index,accuracy\n";
  for (const auto& r : t.rows) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", r.accuracy);
    os << r.index << ',' << buf << '\n';
  }
  return os.str();
}

inline SgsTable sgs_from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  SgsTable t;
  if (!std::getline(is, line) || line != "index,accuracy") throw std::invalid_argument("SGS CSV: missing header");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw std::invalid_argument("SGS CSV: malformed row '" + line + "'");
    t.rows.push_back({std::stoull(line.substr(0, comma)), std::stod(line.substr(comma + 1))});
  }
  return t;
}

/// Percentile of `accuracy` within the SGS accuracies, in percent.
///
/// At an SGS value v the percentile is 100 * #{SGS <= v} / N. Between two
/// neighbouring distinct SGS values it is interpolated linearly; at or above
/// the maximum it is 100 and strictly below the minimum it is 0.
inline double cap(double accuracy, const std::vector<double>& sgs) {
  if (sgs.empty()) throw std::invalid_argument("CAP needs a non-empty SGS table");
  std::vector<double> v = sgs;
  std::sort(v.begin(), v.end());
  const double N = static_cast<double>(v.size());
  if (accuracy >= v.back()) return 100.0;
  if (accuracy < v.front()) return 0.0;
  auto cap_at = [&](double x) {
    return 100.0 * static_cast<double>(std::upper_bound(v.begin(), v.end(), x) - v.begin()) / N;
  };
  const auto hi = std::upper_bound(v.begin(), v.end(), accuracy); // first value > accuracy
  const double hi_v = *hi;
  const double lo_v = *(hi - 1);                                   // largest value <= accuracy
  if (lo_v == accuracy) return cap_at(lo_v);
  const double t = (accuracy - lo_v) / (hi_v - lo_v);
  return cap_at(lo_v) + t * (cap_at(hi_v) - cap_at(lo_v));
}

inline double cap(double accuracy, const SgsTable& t) { return cap(accuracy, t.accuracies()); }

/// Difference in combination accuracy, percentage points.
inline double dca(double osta_accuracy, double sgs_accuracy) { return osta_accuracy - sgs_accuracy; }

/// DCA against the SGS row of the same combination.
inline double dca(double osta_accuracy, std::uint64_t osta_index, const SgsRow& sgs_row) {
  if (osta_index != sgs_row.index) {
    throw std::invalid_argument("DCA compares different combinations (" + std::to_string(osta_index) + " vs " +
                                std::to_string(sgs_row.index) + ")");
  }
  return dca(osta_accuracy, sgs_row.accuracy);
}

inline double dca(double osta_accuracy, std::uint64_t osta_index, const SgsTable& t) {
  for (const auto& r : t.rows)
    if (r.index == osta_index) return dca(osta_accuracy, osta_index, r);
  throw std::invalid_argument("combination " + std::to_string(osta_index) + " not in SGS table");
}

// ---------------------------------------------------------------------------
// Efficiency arithmetic
// ---------------------------------------------------------------------------

/// Sub-validation epochs spent during pruning: n0 + (n0-1) + ... + 2.
inline std::int64_t pruning_epoch_total(std::int64_t n0) {
  if (n0 < 2) throw std::invalid_argument("pruning needs at least 2 initial ICs");
  return n0 * (n0 + 1) / 2 - 1;
}

/// Estimated ratio of additional time, percent. `time_ratio` is the measured
/// cost of a pruning iteration relative to a training iteration (0.209 = 20.9%).
inline double estimate_rat(double patches_per_epoch, double epoch_total, double batch_size, double train_iters,
                           double time_ratio) {
  const double equivalent = patches_per_epoch * epoch_total / batch_size;
  return 100.0 * equivalent / train_iters * time_ratio;
}

namespace detail {
inline double round_to(double v, double step) { return std::round(v / step) * step; }
} // namespace detail

/// Measured ratio of additional time, percent, rounded to 0.1 pp.
inline double measure_rat(double osta_seconds, double direct_seconds) {
  if (!(osta_seconds > 0) || !(direct_seconds > 0)) throw InvalidState("RAT needs timings of both runs");
  return detail::round_to(100.0 * (osta_seconds / direct_seconds - 1.0), 0.1);
}

/// Measured ratio of additional memory, percent, rounded to 0.1 pp.
inline double measure_ram(std::int64_t osta_peak_bytes, std::int64_t direct_peak_bytes) {
  if (osta_peak_bytes <= 0 || direct_peak_bytes <= 0) throw InvalidState("RAM needs allocation peaks of both runs");
  return detail::round_to(
      100.0 * (static_cast<double>(osta_peak_bytes) / static_cast<double>(direct_peak_bytes) - 1.0), 0.1);
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

/// Mean and (n-1)-denominator standard deviation, single pass (Welford).
inline MeanStd mrc_summary(const std::vector<double>& caps) {
  if (caps.size() < 2) throw std::invalid_argument("MRC summary needs at least 2 runs");
  double mean = 0.0, m2 = 0.0;
  std::size_t n = 0;
  for (double x : caps) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  return {mean, std::sqrt(m2 / static_cast<double>(n - 1))};
}

} // namespace osta
