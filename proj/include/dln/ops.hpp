#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "dln/tensor.hpp"

namespace dln {

// ---------------------------------------------------------------------------
// Span kernels. Matrices are row-major with `cols` columns.

/// y += M x. Eight interleaved partial sums so the reduction vectorizes;
/// the summation order is fixed, so results stay deterministic.
template <class T>
inline void gemv_acc(std::span<const T> m, std::size_t cols, std::span<const T> x, std::span<T> y) {
  const std::size_t rows = y.size();
  const std::size_t blocked = cols - cols % 8;
  const T* xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = m.data() + r * cols;
    T acc[8] = {};
    for (std::size_t c = 0; c < blocked; c += 8)
      for (std::size_t j = 0; j < 8; ++j) acc[j] += row[c + j] * xv[c + j];
    T tail = T(0);
    for (std::size_t c = blocked; c < cols; ++c) tail += row[c] * xv[c];
    y[r] += ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail;
  }
}

/// y += M^T x   (M is rows x cols, x has rows entries, y has cols entries)
template <class T>
inline void gemv_t_acc(std::span<const T> m, std::size_t cols, std::span<const T> x, std::span<T> y) {
  const std::size_t rows = x.size();
  for (std::size_t r = 0; r < rows; ++r) {
    const T xr = x[r];
    if (xr == T(0)) continue;
    const T* row = m.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) y[c] += row[c] * xr;
  }
}

/// M += a b^T
template <class T>
inline void outer_acc(std::span<const T> a, std::span<const T> b, std::span<T> m) {
  const std::size_t cols = b.size();
  for (std::size_t r = 0; r < a.size(); ++r) {
    const T ar = a[r];
    if (ar == T(0)) continue;
    T* row = m.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) row[c] += ar * b[c];
  }
}

template <class T>
inline T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

/// In-place numerically stable softmax; returns log of the partition sum
/// after max subtraction plus the max, i.e. logsumexp of the input.
template <class T>
inline T softmax_inplace(std::span<T> v) {
  const T mx = *std::max_element(v.begin(), v.end());
  T sum = T(0);
  for (T& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (T& x : v) x /= sum;
  return mx + std::log(sum);
}

// ---------------------------------------------------------------------------
// Tensor-level operations.

/// W x (+ b). W is m x n, x has n entries.
template <class T>
Tensor<T> affine(const Tensor<T>& x, const Tensor<T>& W, const Tensor<T>* b = nullptr) {
  if (W.rank() != 2 || x.rank() != 1 || W.cols() != x.size())
    throw ShapeError("affine: weight " + shape_str(W.shape()) + " incompatible with input " +
                     shape_str(x.shape()));
  if (b && (b->rank() != 1 || b->size() != W.rows()))
    throw ShapeError("affine: bias " + shape_str(b->shape()) + " incompatible with weight " +
                     shape_str(W.shape()));
  Tensor<T> y({W.rows()});
  if (b) std::copy(b->values().begin(), b->values().end(), y.values().begin());
  gemv_acc<T>(W.values(), W.cols(), x.values(), y.values());
  return y;
}

template <class T>
struct AffineGrads {
  Tensor<T> dx;
  Tensor<T> dW;
  Tensor<T> db;
};

/// Exact backward of affine() given the upstream gradient dy.
template <class T>
AffineGrads<T> affine_backward(const Tensor<T>& x, const Tensor<T>& W, const Tensor<T>& dy) {
  if (dy.size() != W.rows() || x.size() != W.cols())
    throw ShapeError("affine_backward: upstream " + shape_str(dy.shape()) + " vs weight " +
                     shape_str(W.shape()));
  AffineGrads<T> g{Tensor<T>({W.cols()}), Tensor<T>(W.shape()), Tensor<T>({W.rows()})};
  gemv_t_acc<T>(W.values(), W.cols(), dy.values(), g.dx.values());
  outer_acc<T>(dy.values(), x.values(), g.dW.values());
  std::copy(dy.values().begin(), dy.values().end(), g.db.values().begin());
  return g;
}

template <class T>
struct CrossEntropy {
  T loss;
  Tensor<T> grad_logits;
};

/// -log softmax(logits)[target] together with d loss / d logits.
template <class T>
CrossEntropy<T> softmax_cross_entropy(const Tensor<T>& logits, std::size_t target) {
  if (target >= logits.size())
    throw IndexError("target " + std::to_string(target) + " out of range for " +
                     std::to_string(logits.size()) + " logits");
  Tensor<T> p = logits;
  const T lse = softmax_inplace<T>(p.values());
  const T loss = lse - logits[target];
  p[target] -= T(1);
  return {loss, std::move(p)};
}

}  // namespace dln
