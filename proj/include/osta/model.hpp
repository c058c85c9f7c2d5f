#pragma once

#include "memory.hpp"
#include "mci.hpp"
#include "rng.hpp"

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace osta {

/*
    Micro segmentation network:

        conv3x3(k_in -> 16) + ReLU -> conv3x3(16 -> 16) + ReLU -> conv1x1(16 -> n_classes)

    Zero padding 1, stride 1. Convolutions are lowered to im2col + GEMM over the
    whole batch; activations are held channel-major as a (pixels x channels)
    column-major matrix where pixels enumerate [image][row][col].
 */

inline constexpr int kHidden = 16;

template <typename T>
struct Tensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<T> data;

  std::size_t size() const noexcept { return data.size(); }
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

template <typename T>
struct ModelParams {
  int k_in = 0;
  int n_classes = 0;
  std::vector<Tensor<T>> tensors; // conv1.weight, conv1.bias, conv2.weight, conv2.bias, head.weight, head.bias

  enum Slot : std::size_t { Conv1W, Conv1B, Conv2W, Conv2B, HeadW, HeadB };

  Tensor<T>& operator[](Slot s) { return tensors[s]; }
  const Tensor<T>& operator[](Slot s) const { return tensors[s]; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Zero-filled parameters with the canonical names and shapes.
template <typename T>
ModelParams<T> zero_params(int k_in, int n_classes) {
  if (k_in < 1) throw std::invalid_argument("k_in must be >= 1");
  if (n_classes < 1) throw std::invalid_argument("n_classes must be >= 1");
  const auto k = static_cast<std::uint32_t>(k_in);
  const auto h = static_cast<std::uint32_t>(kHidden);
  const auto c = static_cast<std::uint32_t>(n_classes);
  ModelParams<T> p{k_in, n_classes, {}};
  auto add = [&](std::string name, std::vector<std::uint32_t> dims) {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    p.tensors.push_back({std::move(name), std::move(dims), std::vector<T>(n, T{})});
  };
  add("conv1.weight", {h, k, 3, 3});
  add("conv1.bias", {h});
  add("conv2.weight", {h, h, 3, 3});
  add("conv2.bias", {h});
  add("head.weight", {c, h});
  add("head.bias", {c});
  return p;
}

template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& p) {
  ModelParams<To> out{p.k_in, p.n_classes, {}};
  for (const auto& t : p.tensors) {
    out.tensors.push_back({t.name, t.dims, std::vector<To>(t.data.begin(), t.data.end())});
  }
  return out;
}

/// Fan-in of a weight tensor (product of all dims but the first).
inline std::uint32_t fan_in(const std::vector<std::uint32_t>& dims) {
  std::uint32_t f = 1;
  for (std::size_t i = 1; i < dims.size(); ++i) f *= dims[i];
  return f;
}

/// Bound of the uniform initializer for a weight tensor: sqrt(6 / fan_in).
inline double init_bound(const std::vector<std::uint32_t>& dims) { return std::sqrt(6.0 / fan_in(dims)); }

/// Weights uniform in [-sqrt(6/fan_in), sqrt(6/fan_in)], biases zero.
template <typename T = float>
ModelParams<T> init_params(int k_in, int n_classes, std::uint64_t seed) {
  auto p = zero_params<T>(k_in, n_classes);
  RandomStream rng(seed, "model.init");
  for (auto& t : p.tensors) {
    if (t.dims.size() < 2) continue;
    const double b = init_bound(t.dims);
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(-b, b));
  }
  return p;
}

/// FNV-1a over tensor names and shapes. Identifies the architecture, not the values.
template <typename T>
std::uint64_t arch_hash(const ModelParams<T>& p) {
  std::uint64_t h = fnv1a64("osta-micro-seg");
  auto mix = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xFF;
      h *= 0x100000001B3ULL;
    }
  };
  for (const auto& t : p.tensors) {
    mix(fnv1a64(t.name));
    mix(t.dims.size());
    for (auto d : t.dims) mix(d);
  }
  return h;
}

/// FNV-1a over the raw bytes of every parameter value.
template <typename T>
std::uint64_t value_hash(const ModelParams<T>& p) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& t : p.tensors) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data.data());
    for (std::size_t i = 0; i < t.data.size() * sizeof(T); ++i) {
      h ^= bytes[i];
      h *= 0x100000001B3ULL;
    }
  }
  return h;
}

template <typename T>
bool all_finite(const ModelParams<T>& p) {
  for (const auto& t : p.tensors)
    for (T v : t.data)
      if (!std::isfinite(v)) return false;
  return true;
}

/// A batch of equally sized patches, values [image][channel][row][col].
struct Batch {
  int n = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> values;
  std::vector<std::uint8_t> labels; // [image][row][col]

  std::size_t pixels() const noexcept { return static_cast<std::size_t>(n) * height * width; }
};

/// Packs patches (all the same shape) into a batch.
inline Batch make_batch(const std::vector<const McSample*>& patches) {
  if (patches.empty()) throw std::invalid_argument("empty batch");
  Batch b;
  b.n = static_cast<int>(patches.size());
  b.channels = patches[0]->channels;
  b.height = patches[0]->height;
  b.width = patches[0]->width;
  b.values.reserve(b.pixels() * b.channels);
  b.labels.reserve(b.pixels());
  for (const auto* p : patches) {
    if (p->channels != b.channels || p->height != b.height || p->width != b.width) {
      throw std::invalid_argument("batch patches differ in shape");
    }
    b.values.insert(b.values.end(), p->values.begin(), p->values.end());
    b.labels.insert(b.labels.end(), p->labels.begin(), p->labels.end());
  }
  return b;
}

inline Batch make_batch(const std::vector<McSample>& patches) {
  std::vector<const McSample*> ptrs;
  for (const auto& p : patches) ptrs.push_back(&p);
  return make_batch(ptrs);
}

template <typename T>
struct ForwardResult {
  std::vector<T> logits; // [image][class][row][col]
  double loss = 0.0;
  std::size_t valid_pixels = 0;
  bool all_ignored = false;
};

template <typename T>
struct BackwardResult {
  ModelParams<T> grads;
  double loss = 0.0;
  std::size_t valid_pixels = 0;
  bool all_ignored = false;
};

namespace detail {

template <typename T>
using ColMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Shape of a batch flattened to (pixels x channels).
struct Geometry {
  int n, h, w;
  Eigen::Index pixels() const { return static_cast<Eigen::Index>(n) * h * w; }
};

/// col[:, ci*9 + ky*3 + kx] = in[:, ci] shifted by (ky-1, kx-1) with zero padding.
template <typename T>
void im2col(const T* in, int channels, const Geometry& g, T* col) {
  const auto P = static_cast<std::size_t>(g.pixels());
  for (int ci = 0; ci < channels; ++ci) {
    const T* src = in + ci * P;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* dst = col + (static_cast<std::size_t>(ci) * 9 + ky * 3 + kx) * P;
        const int dy = ky - 1, dx = kx - 1;
        for (int n = 0; n < g.n; ++n) {
          for (int y = 0; y < g.h; ++y) {
            T* d = dst + (static_cast<std::size_t>(n) * g.h + y) * g.w;
            const int sy = y + dy;
            if (sy < 0 || sy >= g.h) {
              std::fill(d, d + g.w, T{});
              continue;
            }
            const T* s = src + (static_cast<std::size_t>(n) * g.h + sy) * g.w;
            const int x0 = std::max(0, -dx), x1 = std::min(g.w, g.w - dx);
            for (int x = 0; x < x0; ++x) d[x] = T{};
            std::copy(s + x0 + dx, s + x1 + dx, d + x0);
            for (int x = x1; x < g.w; ++x) d[x] = T{};
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters column gradients back onto the input planes.
template <typename T>
void col2im(const T* col, int channels, const Geometry& g, T* out) {
  const auto P = static_cast<std::size_t>(g.pixels());
  std::fill(out, out + P * channels, T{});
  for (int ci = 0; ci < channels; ++ci) {
    T* dst = out + ci * P;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T* src = col + (static_cast<std::size_t>(ci) * 9 + ky * 3 + kx) * P;
        const int dy = ky - 1, dx = kx - 1;
        for (int n = 0; n < g.n; ++n) {
          for (int y = 0; y < g.h; ++y) {
            const int sy = y + dy;
            if (sy < 0 || sy >= g.h) continue;
            const T* s = src + (static_cast<std::size_t>(n) * g.h + y) * g.w;
            T* d = dst + (static_cast<std::size_t>(n) * g.h + sy) * g.w;
            const int x0 = std::max(0, -dx), x1 = std::min(g.w, g.w - dx);
            for (int x = x0; x < x1; ++x) d[x + dx] += s[x];
          }
        }
      }
    }
  }
}

/// Activations kept from the forward pass for backpropagation.
template <typename T>
struct Activations {
  TrackedBuffer<T> col1, a1, col2, a2, logits;
};

template <typename T>
void check_batch(const ModelParams<T>& p, const Batch& b) {
  if (b.channels != p.k_in) {
    throw std::invalid_argument("batch has " + std::to_string(b.channels) + " channels, model expects " +
                                std::to_string(p.k_in));
  }
  if (b.n <= 0 || b.height <= 0 || b.width <= 0 || b.values.size() != b.pixels() * b.channels ||
      b.labels.size() != b.pixels()) {
    throw std::invalid_argument("malformed batch");
  }
}

/// Runs the network. With keep_for_backward=false the im2col buffers are
/// released as soon as each layer is done.
template <typename T>
Activations<T> run_forward(const ModelParams<T>& p, const Batch& b, AllocationMeter* meter, bool keep_for_backward) {
  check_batch(p, b);
  const Geometry g{b.n, b.height, b.width};
  const Eigen::Index P = g.pixels();
  const std::size_t plane = static_cast<std::size_t>(b.height) * b.width;
  const int k = p.k_in, C = p.n_classes;

  Activations<T> act;
  {
    TrackedBuffer<T> x(static_cast<std::size_t>(P) * k, meter, Fill::Uninitialized);
    for (int n = 0; n < b.n; ++n)
      for (int c = 0; c < k; ++c) {
        const float* src = b.values.data() + (static_cast<std::size_t>(n) * k + c) * plane;
        T* dst = x.data() + static_cast<std::size_t>(c) * P + n * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] = static_cast<T>(src[i]);
      }
    act.col1 = TrackedBuffer<T>(static_cast<std::size_t>(P) * 9 * k, meter, Fill::Uninitialized);
    im2col(x.data(), k, g, act.col1.data());
  }

  using CMap = Eigen::Map<const RowMat<T>>;
  auto conv = [&](const TrackedBuffer<T>& col, int cin, const Tensor<T>& w, const Tensor<T>& bias, int cout,
                  TrackedBuffer<T>& out, bool relu) {
    out = TrackedBuffer<T>(static_cast<std::size_t>(P) * cout, meter, Fill::Uninitialized);
    Eigen::Map<const ColMat<T>> X(col.data(), P, cin);
    CMap W(w.data.data(), cout, cin);
    Eigen::Map<ColMat<T>> Y(out.data(), P, cout);
    Y.noalias() = X * W.transpose();
    for (int c = 0; c < cout; ++c) {
      auto colv = Y.col(c);
      colv.array() += bias.data[c];
      if (relu) colv = colv.cwiseMax(T{});
    }
  };

  conv(act.col1, 9 * k, p[ModelParams<T>::Conv1W], p[ModelParams<T>::Conv1B], kHidden, act.a1, true);
  if (!keep_for_backward) act.col1.reset();
  act.col2 = TrackedBuffer<T>(static_cast<std::size_t>(P) * 9 * kHidden, meter, Fill::Uninitialized);
  im2col(act.a1.data(), kHidden, g, act.col2.data());
  conv(act.col2, 9 * kHidden, p[ModelParams<T>::Conv2W], p[ModelParams<T>::Conv2B], kHidden, act.a2, true);
  if (!keep_for_backward) {
    act.col2.reset();
    act.a1.reset();
  }
  conv(act.a2, kHidden, p[ModelParams<T>::HeadW], p[ModelParams<T>::HeadB], C, act.logits, false);
  if (!keep_for_backward) act.a2.reset();
  return act;
}

/// Mean softmax cross-entropy over non-ignore pixels. If `dlogits` is given it
/// receives d(loss)/d(logits) in the (pixels x classes) layout.
template <typename T>
double cross_entropy(const T* logits, const Batch& b, int C, std::size_t& valid, T* dlogits) {
  using Arr = Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic>;
  const auto P = static_cast<Eigen::Index>(b.pixels());
  valid = 0;
  for (auto l : b.labels) valid += (l != kIgnoreLabel);
  if (valid == 0) {
    if (dlogits) std::fill(dlogits, dlogits + P * C, T{});
    return 0.0;
  }
  Eigen::Map<const Arr> Z(logits, P, C);
  const Eigen::Array<T, Eigen::Dynamic, 1> mx = Z.rowwise().maxCoeff();
  Arr E = (Z.colwise() - mx).exp();
  const Eigen::Array<T, Eigen::Dynamic, 1> sum = E.rowwise().sum();
  const Eigen::Array<T, Eigen::Dynamic, 1> lse = mx + sum.log();
  double loss = 0.0;
  for (Eigen::Index i = 0; i < P; ++i) {
    const auto label = b.labels[static_cast<std::size_t>(i)];
    if (label == kIgnoreLabel) continue;
    loss += static_cast<double>(lse(i) - Z(i, label));
  }
  if (dlogits) {
    const T inv = T(1) / static_cast<T>(valid);
    Eigen::Map<Arr> D(dlogits, P, C);
    const Eigen::Array<T, Eigen::Dynamic, 1> scale = inv / sum;
    D = E.colwise() * scale;
    for (Eigen::Index i = 0; i < P; ++i) {
      const auto label = b.labels[static_cast<std::size_t>(i)];
      if (label == kIgnoreLabel) {
        D.row(i).setZero();
      } else {
        D(i, label) -= inv;
      }
    }
  }
  return loss / static_cast<double>(valid);
}

template <typename T>
std::vector<T> to_image_major(const T* logits, const Batch& b, int C) {
  const std::size_t plane = static_cast<std::size_t>(b.height) * b.width;
  const std::size_t P = b.pixels();
  std::vector<T> out(P * C);
  for (int n = 0; n < b.n; ++n)
    for (int c = 0; c < C; ++c)
      std::copy_n(logits + c * P + n * plane, plane, out.data() + (static_cast<std::size_t>(n) * C + c) * plane);
  return out;
}

} // namespace detail

/// Logits ([image][class][row][col]) and mean cross-entropy over non-ignore pixels.
/// A batch without any labeled pixel yields loss 0 and all_ignored = true.
template <typename T>
ForwardResult<T> forward(const ModelParams<T>& p, const Batch& b, AllocationMeter* meter = nullptr) {
  auto act = detail::run_forward(p, b, meter, false);
  ForwardResult<T> r;
  r.loss = detail::cross_entropy<T>(act.logits.data(), b, p.n_classes, r.valid_pixels, nullptr);
  r.all_ignored = r.valid_pixels == 0;
  r.logits = detail::to_image_major(act.logits.data(), b, p.n_classes);
  return r;
}

/// Per-pixel argmax class ([image][row][col]); forward-only.
template <typename T>
std::vector<std::uint8_t> predict(const ModelParams<T>& p, const Batch& b, AllocationMeter* meter = nullptr) {
  auto act = detail::run_forward(p, b, meter, false);
  const std::size_t P = b.pixels();
  const int C = p.n_classes;
  std::vector<std::uint8_t> out(P);
  const T* z = act.logits.data();
  for (std::size_t i = 0; i < P; ++i) {
    int best = 0;
    for (int c = 1; c < C; ++c)
      if (z[c * P + i] > z[best * P + i]) best = c;
    out[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

/// Gradients of the mean loss with respect to every parameter.
template <typename T>
BackwardResult<T> backward(const ModelParams<T>& p, const Batch& b, AllocationMeter* meter = nullptr) {
  using detail::ColMat;
  using detail::RowMat;
  using Slot = typename ModelParams<T>::Slot;
  auto act = detail::run_forward(p, b, meter, true);
  const detail::Geometry g{b.n, b.height, b.width};
  const Eigen::Index P = g.pixels();
  const int k = p.k_in, C = p.n_classes, H = kHidden;

  BackwardResult<T> r;
  r.grads = zero_params<T>(k, C);
  TrackedBuffer<T> dz(static_cast<std::size_t>(P) * C, meter, Fill::Uninitialized);
  r.loss = detail::cross_entropy<T>(act.logits.data(), b, C, r.valid_pixels, dz.data());
  r.all_ignored = r.valid_pixels == 0;
  if (r.all_ignored) return r;

  auto weight_grad = [&](Slot ws, Slot bs, const T* dy, int cout, const T* x, int cin) {
    Eigen::Map<const ColMat<T>> dY(dy, P, cout);
    Eigen::Map<const ColMat<T>> X(x, P, cin);
    Eigen::Map<RowMat<T>> dW(r.grads[ws].data.data(), cout, cin);
    dW.noalias() = dY.transpose() * X;
    // Plain loop: Eigen's vectorized reductions peel by pointer alignment,
    // which would make the summation order (and the bits) allocation-dependent.
    for (int c = 0; c < cout; ++c) {
      const T* col = dy + static_cast<std::size_t>(c) * P;
      T acc{};
      for (Eigen::Index i = 0; i < P; ++i) acc += col[i];
      r.grads[bs].data[c] = acc;
    }
  };
  auto input_grad = [&](Slot ws, const T* dy, int cout, int cin, TrackedBuffer<T>& out) {
    out = TrackedBuffer<T>(static_cast<std::size_t>(P) * cin, meter, Fill::Uninitialized);
    Eigen::Map<const ColMat<T>> dY(dy, P, cout);
    Eigen::Map<const RowMat<T>> W(p[ws].data.data(), cout, cin);
    Eigen::Map<ColMat<T>> dX(out.data(), P, cin);
    dX.noalias() = dY * W;
  };
  auto relu_mask = [&](TrackedBuffer<T>& grad, const TrackedBuffer<T>& act_out) {
    for (std::size_t i = 0; i < grad.size(); ++i)
      if (!(act_out[i] > T{})) grad[i] = T{};
  };

  weight_grad(Slot::HeadW, Slot::HeadB, dz.data(), C, act.a2.data(), H);
  TrackedBuffer<T> da2;
  input_grad(Slot::HeadW, dz.data(), C, H, da2);
  dz.reset();
  relu_mask(da2, act.a2);

  weight_grad(Slot::Conv2W, Slot::Conv2B, da2.data(), H, act.col2.data(), 9 * H);
  TrackedBuffer<T> dcol2;
  input_grad(Slot::Conv2W, da2.data(), H, 9 * H, dcol2);
  da2.reset();
  TrackedBuffer<T> da1(static_cast<std::size_t>(P) * H, meter, Fill::Uninitialized);
  detail::col2im(dcol2.data(), H, g, da1.data());
  dcol2.reset();
  relu_mask(da1, act.a1);

  weight_grad(Slot::Conv1W, Slot::Conv1B, da1.data(), H, act.col1.data(), 9 * k);
  return r;
}

} // namespace osta
