#pragma once

#include "mci.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace osta {

enum class Split { Train, SubTrain, SubVal, Test };

inline std::string to_string(Split s) {
  switch (s) {
  case Split::Train: return "train";
  case Split::SubTrain: return "subtrain";
  case Split::SubVal: return "subval";
  case Split::Test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "subtrain") return Split::SubTrain;
  if (s == "subval") return Split::SubVal;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split tag '" + s + "'");
}

/// True for every split that belongs to the original training set.
inline bool is_training_split(Split s) { return s != Split::Test; }

struct ChannelStats {
  double mean = 0.0;
  double std = 1.0;
};

struct SampleEntry {
  std::string path; // relative to the manifest directory
  Split split = Split::Train;
};

struct DatasetManifest {
  int n_channels = 0;
  int n_classes = 0;
  std::vector<std::string> channel_names;
  std::vector<std::string> class_names;
  std::vector<SampleEntry> samples;
  std::vector<ChannelStats> normalization; // empty until standardized
  std::uint64_t seed = 0;

  void validate() const {
    if (n_channels <= 0 || n_classes <= 0 || n_classes > 255) {
      throw std::invalid_argument("manifest: bad channel/class counts");
    }
    if (static_cast<int>(channel_names.size()) != n_channels) {
      throw std::invalid_argument("manifest: channel_names length != n_channels");
    }
    if (static_cast<int>(class_names.size()) != n_classes) {
      throw std::invalid_argument("manifest: class_names length != n_classes");
    }
    if (!normalization.empty() && static_cast<int>(normalization.size()) != n_channels) {
      throw std::invalid_argument("manifest: normalization length != n_channels");
    }
  }
};

inline nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["n_channels"] = m.n_channels;
  j["n_classes"] = m.n_classes;
  j["channel_names"] = m.channel_names;
  j["class_names"] = m.class_names;
  j["samples"] = nlohmann::json::array();
  for (const auto& s : m.samples) {
    j["samples"].push_back({{"path", s.path}, {"split", to_string(s.split)}});
  }
  j["normalization"] = nlohmann::json::array();
  for (const auto& n : m.normalization) {
    j["normalization"].push_back({{"mean", n.mean}, {"std", n.std}});
  }
  j["seed"] = m.seed;
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.n_channels = j.at("n_channels").get<int>();
  m.n_classes = j.at("n_classes").get<int>();
  m.channel_names = j.at("channel_names").get<std::vector<std::string>>();
  m.class_names = j.at("class_names").get<std::vector<std::string>>();
  for (const auto& s : j.at("samples")) {
    m.samples.push_back({s.at("path").get<std::string>(), parse_split(s.at("split").get<std::string>())});
  }
  for (const auto& n : j.at("normalization")) {
    m.normalization.push_back({n.at("mean").get<double>(), n.at("std").get<double>()});
  }
  m.seed = j.at("seed").get<std::uint64_t>();
  m.validate();
  return m;
}

inline void save_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::trunc);
  out << to_json(m).dump(2) << '\n';
  if (!out) {
    throw std::runtime_error("cannot write manifest " + path.string());
  }
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open manifest " + path.string());
  }
  return manifest_from_json(nlohmann::json::parse(in));
}

/// Manifest plus decoded samples held in memory. Samples are immutable once loaded.
struct Dataset {
  DatasetManifest manifest;
  std::vector<McSample> samples;

  int n_channels() const noexcept { return manifest.n_channels; }
  int n_classes() const noexcept { return manifest.n_classes; }

  /// Indices of samples whose tag is one of `splits`, in manifest order.
  std::vector<std::size_t> indices(std::initializer_list<Split> splits) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
      if (std::find(splits.begin(), splits.end(), manifest.samples[i].split) != splits.end()) {
        out.push_back(i);
      }
    }
    return out;
  }

  std::vector<std::size_t> training_indices() const {
    return indices({Split::Train, Split::SubTrain, Split::SubVal});
  }
};

/// Per-class labeled pixel counts of one sample.
inline std::vector<std::uint64_t> class_histogram(const McSample& s, int n_classes) {
  std::vector<std::uint64_t> h(static_cast<std::size_t>(n_classes), 0);
  for (std::uint8_t l : s.labels) {
    if (l != kIgnoreLabel && l < n_classes) {
      ++h[l];
    }
  }
  return h;
}

/// L1 distance between the class-proportion vectors of two histograms.
inline double proportion_l1(const std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b) {
  const double ta = static_cast<double>(std::accumulate(a.begin(), a.end(), std::uint64_t{0}));
  const double tb = static_cast<double>(std::accumulate(b.begin(), b.end(), std::uint64_t{0}));
  double d = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    const double pa = ta > 0 ? static_cast<double>(a[c]) / ta : 0.0;
    const double pb = tb > 0 ? static_cast<double>(b[c]) / tb : 0.0;
    d += std::abs(pa - pb);
  }
  return d;
}

struct SplitResult {
  std::vector<std::size_t> subtrain;
  std::vector<std::size_t> subval;
};

/// Greedy stratified split. Candidates are visited in order of descending
/// labeled-pixel count (ties by name); at each of round(fraction*N) steps the
/// candidate that brings the sub-validation class proportions closest (L1) to
/// the global proportions is moved. The procedure is deterministic; `seed` is
/// accepted so callers can record it alongside the result.
inline SplitResult stratified_split(const std::vector<std::vector<std::uint64_t>>& histograms,
                                    const std::vector<std::string>& names, double val_fraction,
                                    std::uint64_t /*seed*/ = 0) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw std::invalid_argument("validation fraction must lie in (0, 1)");
  }
  const std::size_t n = histograms.size();
  if (n < 2) {
    throw std::invalid_argument("stratified split needs at least 2 samples");
  }
  if (names.size() != n) {
    throw std::invalid_argument("one name per sample required");
  }
  const std::size_t n_classes = histograms.front().size();
  auto labeled = [&](std::size_t i) {
    return std::accumulate(histograms[i].begin(), histograms[i].end(), std::uint64_t{0});
  };
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto la = labeled(a), lb = labeled(b);
    if (la != lb) return la > lb;
    return names[a] < names[b];
  });

  std::vector<std::uint64_t> global(n_classes, 0);
  for (const auto& h : histograms) {
    for (std::size_t c = 0; c < n_classes; ++c) global[c] += h[c];
  }

  auto m = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
  m = std::clamp<std::size_t>(m, 1, n - 1);

  std::vector<bool> taken(n, false);
  std::vector<std::uint64_t> current(n_classes, 0);
  SplitResult out;
  for (std::size_t step = 0; step < m; ++step) {
    std::size_t best = n;
    double best_d = 0.0;
    for (std::size_t i : order) {
      if (taken[i]) continue;
      auto trial = current;
      for (std::size_t c = 0; c < n_classes; ++c) trial[c] += histograms[i][c];
      const double d = proportion_l1(trial, global);
      if (best == n || d < best_d - 1e-15) {
        best = i;
        best_d = d;
      }
    }
    taken[best] = true;
    for (std::size_t c = 0; c < n_classes; ++c) current[c] += histograms[best][c];
  }
  for (std::size_t i = 0; i < n; ++i) {
    (taken[i] ? out.subval : out.subtrain).push_back(i);
  }
  return out;
}

/// Retags the dataset's training samples as subtrain / subval.
inline SplitResult split_dataset(Dataset& ds, double val_fraction, std::uint64_t seed) {
  const auto train = ds.training_indices();
  std::vector<std::vector<std::uint64_t>> hist;
  std::vector<std::string> names;
  for (std::size_t i : train) {
    hist.push_back(class_histogram(ds.samples[i], ds.n_classes()));
    names.push_back(ds.manifest.samples[i].path);
  }
  auto local = stratified_split(hist, names, val_fraction, seed);
  SplitResult global;
  for (std::size_t i : local.subtrain) {
    ds.manifest.samples[train[i]].split = Split::SubTrain;
    global.subtrain.push_back(train[i]);
  }
  for (std::size_t i : local.subval) {
    ds.manifest.samples[train[i]].split = Split::SubVal;
    global.subval.push_back(train[i]);
  }
  return global;
}

/// Per-channel mean and population standard deviation over every pixel of the
/// training-split samples.
inline std::vector<ChannelStats> channel_statistics(const Dataset& ds) {
  const auto train = ds.training_indices();
  if (train.empty()) {
    throw std::invalid_argument("standardize: training split is empty");
  }
  std::vector<ChannelStats> stats(static_cast<std::size_t>(ds.n_channels()));
  for (int c = 0; c < ds.n_channels(); ++c) {
    double sum = 0.0;
    std::uint64_t count = 0;
    for (std::size_t i : train) {
      for (float v : ds.samples[i].plane(c)) sum += v;
      count += ds.samples[i].plane_size();
    }
    const double mean = sum / static_cast<double>(count);
    double sq = 0.0;
    for (std::size_t i : train) {
      for (float v : ds.samples[i].plane(c)) sq += (v - mean) * (v - mean);
    }
    stats[c] = {mean, std::sqrt(sq / static_cast<double>(count))};
  }
  return stats;
}

inline void apply_normalization(McSample& s, const std::vector<ChannelStats>& norm) {
  for (int c = 0; c < s.channels; ++c) {
    const double mean = norm[c].mean;
    const double inv = 1.0 / norm[c].std;
    for (float& v : s.plane(c)) {
      v = static_cast<float>((static_cast<double>(v) - mean) * inv);
    }
  }
}

struct StandardizeReport {
  std::vector<ChannelStats> stats;
  std::vector<int> zero_variance; // 1-based ordinals passed through with std forced to 1
};

/// Computes train-split statistics, stores them in the manifest, and
/// transforms every sample in place.
inline StandardizeReport standardize(Dataset& ds) {
  StandardizeReport rep;
  rep.stats = channel_statistics(ds);
  for (int c = 0; c < ds.n_channels(); ++c) {
    if (!(rep.stats[c].std > 0.0)) {
      rep.stats[c].std = 1.0;
      rep.zero_variance.push_back(c + 1);
    }
  }
  ds.manifest.normalization = rep.stats;
  for (auto& s : ds.samples) {
    apply_normalization(s, rep.stats);
  }
  return rep;
}

/// Reads every sample listed in the manifest. When the manifest carries
/// normalization statistics they are applied on load.
inline Dataset load_dataset(const std::filesystem::path& manifest_path, bool normalize = true) {
  Dataset ds;
  ds.manifest = load_manifest(manifest_path);
  const auto dir = manifest_path.parent_path();
  ds.samples.reserve(ds.manifest.samples.size());
  for (const auto& e : ds.manifest.samples) {
    auto s = read_sample(dir / e.path);
    if (s.channels != ds.manifest.n_channels) {
      throw std::invalid_argument("sample " + e.path + " has " + std::to_string(s.channels) +
                                  " channels, manifest says " + std::to_string(ds.manifest.n_channels));
    }
    check_labels(s, ds.manifest.n_classes);
    if (normalize && !ds.manifest.normalization.empty()) {
      apply_normalization(s, ds.manifest.normalization);
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

/// Writes raw samples and the manifest under `dir`.
inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    write_sample(dir / ds.manifest.samples[i].path, ds.samples[i]);
  }
  save_manifest(dir / "manifest.json", ds.manifest);
}

/// Copy of the dataset restricted to the channels of `comb`.
inline Dataset select_channels(const Dataset& ds, const ChannelCombination& comb) {
  Dataset out;
  out.manifest = ds.manifest;
  out.manifest.n_channels = comb.size();
  out.manifest.channel_names.clear();
  out.manifest.normalization.clear();
  for (int c : comb.channels) {
    out.manifest.channel_names.push_back(ds.manifest.channel_names.at(c - 1));
    if (!ds.manifest.normalization.empty()) {
      out.manifest.normalization.push_back(ds.manifest.normalization.at(c - 1));
    }
  }
  for (const auto& s : ds.samples) {
    out.samples.push_back(select_channels(s, comb));
  }
  return out;
}

} // namespace osta
