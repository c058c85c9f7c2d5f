#pragma once

// Independent references for the network: a direct-loop forward pass in double
// precision and a kink-aware central-difference gradient check.

#include "osta/osta.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace osta::testing {

inline Batch random_batch(std::mt19937_64& rng, int n, int k, int h, int w, int n_classes, double ignore_share = 0.1) {
  Batch b;
  b.n = n;
  b.channels = k;
  b.height = h;
  b.width = w;
  std::normal_distribution<float> nd;
  std::uniform_int_distribution<int> cls(0, n_classes - 1);
  std::uniform_real_distribution<double> u;
  b.values.resize(static_cast<std::size_t>(n) * k * h * w);
  for (auto& v : b.values) v = nd(rng);
  b.labels.resize(static_cast<std::size_t>(n) * h * w);
  for (auto& l : b.labels) l = u(rng) < ignore_share ? kIgnoreLabel : static_cast<std::uint8_t>(cls(rng));
  return b;
}

// Straight-line reference network: direct convolution loops, double precision.
struct ScalarOracle {
  const ModelParams<double>& p;
  mutable std::vector<char>* pattern = nullptr; // receives each ReLU's on/off state when set

  std::vector<double> conv3(const std::vector<double>& in, int cin, int cout, const Tensor<double>& W,
                            const Tensor<double>& B, int n, int h, int w) const {
    std::vector<double> out(static_cast<std::size_t>(n) * cout * h * w);
    for (int i = 0; i < n; ++i)
      for (int o = 0; o < cout; ++o)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            double acc = B.data[o];
            for (int c = 0; c < cin; ++c)
              for (int dy = 0; dy < 3; ++dy)
                for (int dx = 0; dx < 3; ++dx) {
                  const int yy = y + dy - 1, xx = x + dx - 1;
                  if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                  acc += W.data[((o * cin + c) * 3 + dy) * 3 + dx] * in[((i * cin + c) * h + yy) * w + xx];
                }
            out[((i * cout + o) * h + y) * w + x] = std::max(0.0, acc);
            if (pattern) pattern->push_back(acc > 0);
          }
    return out;
  }

  std::pair<std::vector<double>, double> run(const Batch& b) const {
    const int n = b.n, h = b.height, w = b.width, C = p.n_classes;
    std::vector<double> x(b.values.begin(), b.values.end());
    using S = ModelParams<double>::Slot;
    const auto a1 = conv3(x, p.k_in, kHidden, p[S::Conv1W], p[S::Conv1B], n, h, w);
    const auto a2 = conv3(a1, kHidden, kHidden, p[S::Conv2W], p[S::Conv2B], n, h, w);
    std::vector<double> logits(static_cast<std::size_t>(n) * C * h * w);
    double loss = 0;
    int valid = 0;
    for (int i = 0; i < n; ++i)
      for (int y = 0; y < h; ++y)
        for (int xq = 0; xq < w; ++xq) {
          std::vector<double> z(C);
          for (int c = 0; c < C; ++c) {
            double acc = p[S::HeadB].data[c];
            for (int j = 0; j < kHidden; ++j) acc += p[S::HeadW].data[c * kHidden + j] * a2[((i * kHidden + j) * h + y) * w + xq];
            z[c] = acc;
            logits[((i * C + c) * h + y) * w + xq] = acc;
          }
          const auto label = b.labels[(i * h + y) * w + xq];
          if (label == kIgnoreLabel) continue;
          double mx = *std::max_element(z.begin(), z.end()), s = 0;
          for (double v : z) s += std::exp(v - mx);
          loss += mx + std::log(s) - z[label];
          ++valid;
        }
    return {logits, valid ? loss / valid : 0.0};
  }
};

inline double loss_of(const ModelParams<double>& p, const Batch& b) { return forward(p, b).loss; }

inline std::vector<char> relu_pattern(const ModelParams<double>& p, const Batch& b) {
  std::vector<char> pattern;
  ScalarOracle o{p};
  o.pattern = &pattern;
  o.run(b);
  return pattern;
}


struct FdTensorReport {
  std::string name;
  std::size_t size = 0;
  std::size_t checked = 0;
  double worst = 0.0; // max relative error over the checked parameters
};

/// Central differences with step h on up to `per_tensor` random parameters of
/// every tensor. A parameter is skipped when its perturbation switches a ReLU:
/// the pre-activations are piecewise linear in one parameter, so equal on/off
/// patterns at both ends and the centre rule out a crossing.
inline std::vector<FdTensorReport> gradient_check(const ModelParams<double>& p, const Batch& b, double h,
                                                  std::size_t per_tensor, std::mt19937_64& rng) {
  const auto g = backward(p, b);
  const auto base_pattern = relu_pattern(p, b);
  std::vector<FdTensorReport> out;
  for (std::size_t ti = 0; ti < p.tensors.size(); ++ti) {
    FdTensorReport rep{p.tensors[ti].name, p.tensors[ti].size(), 0, 0.0};
    std::vector<std::size_t> order(rep.size);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (auto idx : order) {
      if (rep.checked == per_tensor) break;
      auto plus = p, minus = p;
      plus.tensors[ti].data[idx] += h;
      minus.tensors[ti].data[idx] -= h;
      if (relu_pattern(plus, b) != base_pattern || relu_pattern(minus, b) != base_pattern) continue;
      ++rep.checked;
      const double numeric = (loss_of(plus, b) - loss_of(minus, b)) / (2 * h);
      const double analytic = g.grads.tensors[ti].data[idx];
      const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      rep.worst = std::max(rep.worst, rel);
    }
    out.push_back(rep);
  }
  return out;
}

/// The standard gradient-check point: one small image (few ReLUs, so few
/// kink-straddling perturbations) and non-zero biases.
inline std::pair<ModelParams<double>, Batch> gradient_check_point(std::mt19937_64& rng) {
  auto b = random_batch(rng, 1, 3, 4, 4, 5);
  auto p = cast_params<double>(init_params(3, 5, 3));
  for (auto& t : p.tensors) {
    if (t.dims.size() != 1) continue;
    for (auto& v : t.data) v = std::normal_distribution<double>(0, 0.1)(rng);
  }
  return {std::move(p), std::move(b)};
}

} // namespace osta::testing
