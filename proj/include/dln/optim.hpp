#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "dln/param_store.hpp"

namespace dln {

struct OptimConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double decay_factor = 0.5;
  int decay_interval_epochs = 80;
  double clip_norm = 5.0;

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
    if (!(beta1 > 0 && beta1 < 1)) throw ConfigError("beta1 must lie in (0,1)");
    if (!(beta2 > 0 && beta2 < 1)) throw ConfigError("beta2 must lie in (0,1)");
    if (!(epsilon > 0)) throw ConfigError("epsilon must be positive");
    if (!(decay_factor > 0 && decay_factor <= 1)) throw ConfigError("decay_factor must lie in (0,1]");
    if (decay_interval_epochs <= 0) throw ConfigError("decay_interval_epochs must be positive");
    if (!(clip_norm > 0)) throw ConfigError("clip_norm must be positive");
  }
};

/// Step-decayed learning rate: lr * decay^floor(epoch / interval).
inline double effective_learning_rate(const OptimConfig& cfg, int epoch) {
  if (epoch < 0) throw ArgumentError("epoch must be non-negative");
  return cfg.learning_rate * std::pow(cfg.decay_factor, epoch / cfg.decay_interval_epochs);
}

/// First/second moments mirror the store entry-for-entry. New store entries
/// (e.g. after vocabulary expansion) get zero moments on the next step.
template <class T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::uint64_t t = 0;

  void sync(const ParamStore<T>& store) {
    if (m.size() > store.size()) throw StateError("adam state has more slots than the store");
    for (std::size_t i = 0; i < m.size(); ++i)
      if (m[i].size() != store[i].tensor.size())
        throw StateError("adam state shape mismatch for '" + store[i].name + "'");
    for (std::size_t i = m.size(); i < store.size(); ++i) {
      m.emplace_back(store[i].tensor.size(), T(0));
      v.emplace_back(store[i].tensor.size(), T(0));
    }
  }
};

/// Global L2-norm clipping over trainable entries. Returns the applied scale.
template <class T>
double clip_gradients(ParamStore<T>& store, double clip_norm) {
  double sq = 0.0;
  for (const auto& e : store) {
    if (!e.trainable) continue;
    if (!e.tensor.has_grad()) throw StateError("parameter '" + e.name + "' has no gradient");
    for (T g : e.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (!(norm > clip_norm)) return 1.0;
  const double scale = clip_norm / norm;
  for (auto& e : store) {
    if (!e.trainable) continue;
    for (T& g : e.tensor.grad()) g = static_cast<T>(g * scale);
  }
  return scale;
}

/// Bias-corrected Adam on trainable entries; zeroes every gradient afterwards.
template <class T>
void adam_step(ParamStore<T>& store, AdamState<T>& state, const OptimConfig& cfg, int epoch) {
  const double lr = effective_learning_rate(cfg, epoch);
  state.sync(store);
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& e = store[i];
    if (e.trainable) {
      auto vals = e.tensor.values();
      auto grad = e.tensor.grad();
      auto& m = state.m[i];
      auto& v = state.v[i];
      for (std::size_t k = 0; k < vals.size(); ++k) {
        const T g = grad[k];
        m[k] = b1 * m[k] + (T(1) - b1) * g;
        v[k] = b2 * v[k] + (T(1) - b2) * g * g;
        const double mhat = m[k] / bc1;
        const double vhat = v[k] / bc2;
        vals[k] = static_cast<T>(vals[k] - lr * mhat / (std::sqrt(vhat) + cfg.epsilon));
      }
    }
    e.tensor.zero_grad();
  }
}

}  // namespace dln
