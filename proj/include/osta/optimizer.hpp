#pragma once

#include "error.hpp"
#include "model.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace osta {

/// Momentum buffers mirroring a ModelParams layout.
struct OptimizerState {
  float momentum = 0.9f;
  float weight_decay = 0.0f;
  std::vector<std::vector<float>> velocity;

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

inline OptimizerState make_optimizer(const ModelParams<float>& p, float momentum = 0.9f, float weight_decay = 0.0f) {
  OptimizerState s{momentum, weight_decay, {}};
  for (const auto& t : p.tensors) s.velocity.emplace_back(t.size(), 0.0f);
  return s;
}

/// v <- momentum * v + g (+ weight_decay * p);  p <- p - lr * v.
/// A non-finite gradient aborts the step before anything is modified.
inline void sgd_step(ModelParams<float>& params, const ModelParams<float>& grads, float lr, OptimizerState& state) {
  if (!(lr >= 0.0f)) throw std::invalid_argument("learning rate must be >= 0");
  if (state.velocity.size() != params.tensors.size() || grads.tensors.size() != params.tensors.size()) {
    throw std::invalid_argument("optimizer state does not match parameters");
  }
  for (std::size_t t = 0; t < grads.tensors.size(); ++t) {
    const auto& g = grads.tensors[t];
    if (g.size() != params.tensors[t].size() || state.velocity[t].size() != g.size()) {
      throw std::invalid_argument("shape mismatch in tensor " + g.name);
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g.data[i])) {
        throw NonFiniteError("non-finite gradient in " + g.name + "[" + std::to_string(i) +
                             "] = " + std::to_string(g.data[i]));
      }
    }
  }
  for (std::size_t t = 0; t < params.tensors.size(); ++t) {
    auto& p = params.tensors[t].data;
    auto& v = state.velocity[t];
    const auto& g = grads.tensors[t].data;
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = state.momentum * v[i] + g[i] + state.weight_decay * p[i];
      p[i] -= lr * v[i];
    }
  }
}

} // namespace osta
