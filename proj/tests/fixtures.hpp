#pragma once

#include "osta/osta.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace osta::testing {

/// Small planted dataset: 4 channels, planted {1, 3}, 48x48 samples.
inline SyntheticSpec tiny_spec() {
  SyntheticSpec s;
  s.n_channels = 4;
  s.planted = {1, 3};
  s.n_redundant = 1;
  s.n_distractor = 1;
  s.n_classes = 4;
  s.height = 48;
  s.width = 48;
  s.n_train = 8;
  s.n_test = 2;
  return s;
}

inline Dataset tiny_dataset(std::uint64_t seed = 3) {
  auto ds = synthesize(tiny_spec(), seed);
  standardize(ds);
  split_dataset(ds, 0.25, seed);
  return ds;
}

inline RunConfig tiny_run(std::int64_t iters = 60) {
  RunConfig r;
  r.k = 2;
  r.train.schedule.total_iters = iters;
  r.train.schedule.base_lr = 0.05;
  r.train.batch_size = 2;
  r.train.patch_h = 16;
  r.train.patch_w = 16;
  return r;
}

inline McSample random_sample(std::mt19937_64& rng, int h, int w, int c, int n_classes) {
  McSample s;
  s.height = h;
  s.width = w;
  s.channels = c;
  std::normal_distribution<float> nd;
  std::uniform_int_distribution<int> ld(0, n_classes - 1);
  s.values.resize(static_cast<std::size_t>(h) * w * c);
  for (auto& v : s.values) v = nd(rng);
  s.labels.resize(static_cast<std::size_t>(h) * w);
  for (auto& l : s.labels) l = static_cast<std::uint8_t>(ld(rng));
  return s;
}

/// Dataset assembled from in-memory samples; `splits[i]` tags sample i.
inline Dataset make_dataset(std::vector<McSample> samples, const std::vector<Split>& splits, int n_classes) {
  Dataset ds;
  ds.manifest.n_channels = samples.at(0).channels;
  ds.manifest.n_classes = n_classes;
  for (int c = 1; c <= ds.manifest.n_channels; ++c) ds.manifest.channel_names.push_back("c" + std::to_string(c));
  for (int k = 0; k < n_classes; ++k) ds.manifest.class_names.push_back("k" + std::to_string(k));
  for (std::size_t i = 0; i < samples.size(); ++i) ds.manifest.samples.push_back({"s" + std::to_string(i) + ".mci", splits.at(i)});
  ds.samples = std::move(samples);
  return ds;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("osta_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

} // namespace osta::testing
