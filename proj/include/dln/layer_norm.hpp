#pragma once

#include <cmath>
#include <cstddef>
#include <span>

#include "dln/tensor.hpp"

namespace dln {

inline constexpr double kLayerNormEps = 1e-5;

template <class T>
struct LayerNormStats {
  T mean = T(0);
  T sigma = T(0);  // population standard deviation
};

/// out = g / (sigma + eps) * (a - mean) + b. Writes the normalized term
/// (a - mean) / (sigma + eps) to `nhat`, which the backward pass needs.
template <class T>
LayerNormStats<T> layer_norm_forward(std::span<const T> a, std::span<const T> g, std::span<const T> b, T eps,
                                     std::span<T> out, std::span<T> nhat) {
  const std::size_t n = a.size();
  T mean = T(0);
  for (T v : a) mean += v;
  mean /= static_cast<T>(n);
  T var = T(0);
  for (T v : a) var += (v - mean) * (v - mean);
  var /= static_cast<T>(n);
  const T sigma = std::sqrt(var);
  const T inv = T(1) / (sigma + eps);
  for (std::size_t i = 0; i < n; ++i) {
    nhat[i] = (a[i] - mean) * inv;
    out[i] = g[i] * nhat[i] + b[i];
  }
  return {mean, sigma};
}

/// Accumulates dL/da into `da`, dL/dg into `dg`, dL/db into `db`.
template <class T>
void layer_norm_backward(std::span<const T> dout, std::span<const T> nhat, std::span<const T> g, T sigma, T eps,
                         std::span<T> da, std::span<T> dg, std::span<T> db) {
  const std::size_t n = dout.size();
  const T s = sigma + eps;
  // dL/dd_i = g_i dout_i / s - nhat_i * sum_j(g_j dout_j nhat_j) / (n sigma),  d = a - mean
  T dot = T(0);
  for (std::size_t i = 0; i < n; ++i) dot += g[i] * dout[i] * nhat[i];
  const T coef = sigma > T(0) ? dot / (static_cast<T>(n) * sigma) : T(0);
  T mean_dd = T(0);
  for (std::size_t i = 0; i < n; ++i) mean_dd += g[i] * dout[i] / s - nhat[i] * coef;
  mean_dd /= static_cast<T>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T dd = g[i] * dout[i] / s - nhat[i] * coef;
    da[i] += dd - mean_dd;
    dg[i] += dout[i] * nhat[i];
    db[i] += dout[i];
  }
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& a, const Tensor<T>& g, const Tensor<T>& b, double eps = kLayerNormEps) {
  if (a.size() == 0) throw ArgumentError("layer_norm: empty input");
  if (g.size() != a.size() || b.size() != a.size())
    throw ShapeError("layer_norm: input " + shape_str(a.shape()) + ", gain " + shape_str(g.shape()) +
                     ", shift " + shape_str(b.shape()));
  if (!(eps > 0)) throw ArgumentError("layer_norm: eps must be positive");
  Tensor<T> out(a.shape());
  std::vector<T> nhat(a.size());
  layer_norm_forward<T>(a.values(), g.values(), b.values(), static_cast<T>(eps), out.values(), nhat);
  return out;
}

}  // namespace dln
