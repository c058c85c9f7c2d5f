#pragma once

#include "dataset.hpp"
#include "rng.hpp"

#include <cmath>
#include <numbers>
#include <set>
#include <string>
#include <vector>

namespace osta {

/// Generator parameters for a dataset with a known informative channel subset.
///
/// Channel roles: the planted ordinals carry class-conditional means; the
/// remaining ordinals, in ascending order, are first the redundant channels and
/// then the distractors.
struct SyntheticSpec {
  int n_channels = 6;
  std::vector<int> planted = {1, 3, 5};
  int n_redundant = 1;
  int n_distractor = 2;
  int n_classes = 8;
  int height = 128;
  int width = 128;
  int n_train = 12;
  int n_test = 6;
  double sigma = 0.5;             // per-pixel noise std on planted channels
  double noise_correlation = 0.5; // share of noise variance that is spatially smooth
  double redundant_noise = 0.3;   // extra white noise on redundant channels, in units of sigma
  std::uint64_t seed = 0;

  void validate() const {
    if (static_cast<int>(planted.size()) + n_redundant + n_distractor != n_channels) {
      throw std::invalid_argument("synthetic spec: planted + redundant + distractor != n_channels");
    }
    if (planted.empty() || n_redundant < 0 || n_distractor < 0) {
      throw std::invalid_argument("synthetic spec: negative channel counts or empty planted set");
    }
    detail::check_channels(planted, n_channels);
    if (n_classes < 2 || n_classes > 254) {
      throw std::invalid_argument("synthetic spec: n_classes must be in [2, 254]");
    }
    if (height < 8 || width < 8 || n_train < 2 || n_test < 1) {
      throw std::invalid_argument("synthetic spec: image size or sample counts too small");
    }
    if (!(sigma > 0.0) || noise_correlation < 0.0 || noise_correlation > 1.0 || redundant_noise < 0.0) {
      throw std::invalid_argument("synthetic spec: bad noise parameters");
    }
  }

  std::vector<int> redundant_channels() const { return role_channels().first; }
  std::vector<int> distractor_channels() const { return role_channels().second; }

private:
  std::pair<std::vector<int>, std::vector<int>> role_channels() const {
    std::set<int> p(planted.begin(), planted.end());
    std::vector<int> rest;
    for (int c = 1; c <= n_channels; ++c) {
      if (!p.count(c)) rest.push_back(c);
    }
    return {{rest.begin(), rest.begin() + n_redundant}, {rest.begin() + n_redundant, rest.end()}};
  }
};

inline nlohmann::json to_json(const SyntheticSpec& s) {
  return {{"n_channels", s.n_channels},   {"planted", s.planted},
          {"n_redundant", s.n_redundant}, {"n_distractor", s.n_distractor},
          {"n_classes", s.n_classes},     {"height", s.height},
          {"width", s.width},             {"n_train", s.n_train},
          {"n_test", s.n_test},           {"sigma", s.sigma},
          {"noise_correlation", s.noise_correlation},
          {"redundant_noise", s.redundant_noise},
          {"seed", s.seed}};
}

inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  s.n_channels = j.value("n_channels", s.n_channels);
  s.planted = j.value("planted", s.planted);
  s.n_redundant = j.value("n_redundant", s.n_redundant);
  s.n_distractor = j.value("n_distractor", s.n_distractor);
  s.n_classes = j.value("n_classes", s.n_classes);
  s.height = j.value("height", s.height);
  s.width = j.value("width", s.width);
  s.n_train = j.value("n_train", s.n_train);
  s.n_test = j.value("n_test", s.n_test);
  s.sigma = j.value("sigma", s.sigma);
  s.noise_correlation = j.value("noise_correlation", s.noise_correlation);
  s.redundant_noise = j.value("redundant_noise", s.redundant_noise);
  s.seed = j.value("seed", s.seed);
  s.validate();
  return s;
}

/// Class-conditional means of the planted channels: class c is written in
/// base L (L^|planted| >= n_classes) and digit j mod d sets planted channel j
/// to one of L evenly spaced levels in [-1, 1].
inline std::vector<std::vector<double>> planted_means(const SyntheticSpec& spec) {
  const int p = static_cast<int>(spec.planted.size());
  int levels = 2;
  while (std::pow(levels, p) < spec.n_classes) ++levels;
  int digits = 1;
  while (std::pow(levels, digits) < spec.n_classes) ++digits;
  std::vector<std::vector<double>> m(static_cast<std::size_t>(spec.n_classes), std::vector<double>(p));
  for (int c = 0; c < spec.n_classes; ++c) {
    for (int j = 0; j < p; ++j) {
      int v = c;
      for (int d = 0; d < j % digits; ++d) v /= levels;
      const int digit = v % levels;
      m[c][j] = -1.0 + 2.0 * digit / (levels - 1);
    }
  }
  return m;
}

namespace detail {

/// Zero-mean, unit-variance field built from `terms` random plane waves with
/// wavelengths in [min_wavelength, max_wavelength] pixels.
inline std::vector<float> smooth_field(RandomStream& rng, int h, int w, double min_wavelength,
                                       double max_wavelength, int terms = 12) {
  std::vector<double> acc(static_cast<std::size_t>(h) * w, 0.0);
  const double amp = std::sqrt(2.0 / terms);
  std::vector<double> col(static_cast<std::size_t>(w)), row(static_cast<std::size_t>(h));
  for (int t = 0; t < terms; ++t) {
    const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double lambda = rng.uniform(min_wavelength, max_wavelength);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double kx = 2.0 * std::numbers::pi * std::cos(theta) / lambda;
    const double ky = 2.0 * std::numbers::pi * std::sin(theta) / lambda;
    // cos(a + b) = cos a cos b - sin a sin b keeps this separable.
    std::vector<double> cx(static_cast<std::size_t>(w)), sx(static_cast<std::size_t>(w));
    for (int x = 0; x < w; ++x) {
      cx[x] = std::cos(kx * x + phase);
      sx[x] = std::sin(kx * x + phase);
    }
    for (int y = 0; y < h; ++y) {
      const double cy = std::cos(ky * y), sy = std::sin(ky * y);
      double* out = acc.data() + static_cast<std::size_t>(y) * w;
      for (int x = 0; x < w; ++x) out[x] += amp * (cx[x] * cy - sx[x] * sy);
    }
  }
  return {acc.begin(), acc.end()};
}

inline McSample synthesize_sample(const SyntheticSpec& spec, const std::vector<std::vector<double>>& means,
                                  std::uint64_t seed, std::uint64_t sample_id) {
  const int h = spec.height, w = spec.width;
  const std::size_t px = static_cast<std::size_t>(h) * w;
  McSample s;
  s.height = h;
  s.width = w;
  s.channels = spec.n_channels;
  s.values.assign(px * spec.n_channels, 0.0f);
  s.labels.assign(px, 0);

  RandomStream label_rng(seed, "synthetic.labels", sample_id);
  std::vector<float> best(px, -1e30f);
  for (int c = 0; c < spec.n_classes; ++c) {
    const auto f = smooth_field(label_rng, h, w, 24.0, 96.0);
    for (std::size_t i = 0; i < px; ++i) {
      if (f[i] > best[i]) {
        best[i] = f[i];
        s.labels[i] = static_cast<std::uint8_t>(c);
      }
    }
  }

  RandomStream noise_rng(seed, "synthetic.noise", sample_id);
  const double white_w = std::sqrt(1.0 - spec.noise_correlation);
  const double smooth_w = std::sqrt(spec.noise_correlation);
  for (std::size_t j = 0; j < spec.planted.size(); ++j) {
    const auto smooth = smooth_field(noise_rng, h, w, 8.0, 32.0);
    auto plane = s.plane(spec.planted[j] - 1);
    for (std::size_t i = 0; i < px; ++i) {
      const double noise = white_w * noise_rng.normal() + smooth_w * smooth[i];
      plane[i] = static_cast<float>(means[s.labels[i]][j] + spec.sigma * noise);
    }
  }

  const auto redundant = spec.redundant_channels();
  const std::size_t p = spec.planted.size();
  for (std::size_t r = 0; r < redundant.size(); ++r) {
    const auto a = s.plane(spec.planted[r % p] - 1);
    const auto b = s.plane(spec.planted[(r + 1) % p] - 1);
    const double wa = p > 1 ? 0.6 : 1.0;
    const double wb = p > 1 ? 0.8 : 0.0;
    auto plane = s.plane(redundant[r] - 1);
    for (std::size_t i = 0; i < px; ++i) {
      plane[i] = static_cast<float>(wa * a[i] + wb * b[i] + spec.redundant_noise * spec.sigma * noise_rng.normal());
    }
  }

  for (int d : spec.distractor_channels()) {
    const auto smooth = smooth_field(noise_rng, h, w, 8.0, 32.0);
    auto plane = s.plane(d - 1);
    for (std::size_t i = 0; i < px; ++i) {
      plane[i] = static_cast<float>(smooth[i] + 0.3 * noise_rng.normal());
    }
  }
  return s;
}

} // namespace detail

/// Builds the dataset in memory: n_train samples tagged train followed by
/// n_test samples tagged test. Bit-identical for equal (spec, seed).
inline Dataset synthesize(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  const auto means = planted_means(spec);
  Dataset ds;
  auto& m = ds.manifest;
  m.n_channels = spec.n_channels;
  m.n_classes = spec.n_classes;
  m.seed = seed;
  const auto redundant = spec.redundant_channels();
  std::vector<std::string> names(static_cast<std::size_t>(spec.n_channels));
  for (std::size_t j = 0; j < spec.planted.size(); ++j) names[spec.planted[j] - 1] = "P" + std::to_string(j + 1);
  for (std::size_t r = 0; r < redundant.size(); ++r) names[redundant[r] - 1] = "R" + std::to_string(r + 1);
  const auto distractors = spec.distractor_channels();
  for (std::size_t d = 0; d < distractors.size(); ++d) names[distractors[d] - 1] = "D" + std::to_string(d + 1);
  m.channel_names = names;
  for (int c = 0; c < spec.n_classes; ++c) m.class_names.push_back("class" + std::to_string(c));

  const int total = spec.n_train + spec.n_test;
  for (int i = 0; i < total; ++i) {
    const bool train = i < spec.n_train;
    char name[32];
    std::snprintf(name, sizeof(name), "%s_%04d.mci", train ? "train" : "test", train ? i : i - spec.n_train);
    m.samples.push_back({name, train ? Split::Train : Split::Test});
    ds.samples.push_back(detail::synthesize_sample(spec, means, seed, static_cast<std::uint64_t>(i)));
  }
  return ds;
}

/// Writes the generated dataset (raw values, manifest.json, synthetic.json) under `dir`.
inline Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed, const std::filesystem::path& dir) {
  auto ds = synthesize(spec, seed);
  save_dataset(dir, ds);
  auto stored = spec;
  stored.seed = seed;
  std::ofstream(dir / "synthetic.json") << to_json(stored).dump(2) << '\n';
  return ds;
}

} // namespace osta
