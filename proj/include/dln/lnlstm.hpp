#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dln/init.hpp"
#include "dln/layer_norm.hpp"
#include "dln/ops.hpp"
#include "dln/param_store.hpp"

namespace dln {

/// Gate order used everywhere: input, forget, output, cell candidate.
inline constexpr std::size_t kGates = 4;
inline constexpr std::array<std::string_view, kGates> kGateNames{"i", "f", "o", "u"};

/// Per-gate gain/shift vectors. Non-owning: the tensors live in a ParamStore.
template <class T>
struct LNParams {
  std::array<Tensor<T>*, kGates> gain{};
  std::array<Tensor<T>*, kGates> shift{};

  std::size_t hidden() const { return gain[0]->size(); }
};

/// Shared LSTM projections; no additive gate bias (the LN shift plays that role).
template <class T>
struct LSTMWeights {
  std::array<Tensor<T>*, kGates> input{};      // H x E
  std::array<Tensor<T>*, kGates> recurrent{};  // H x H

  std::size_t hidden() const { return input[0]->rows(); }
  std::size_t embed() const { return input[0]->cols(); }
};

template <class T>
struct CellState {
  Tensor<T> h;
  Tensor<T> c;

  static CellState zeros(std::size_t hidden) { return {Tensor<T>({hidden}), Tensor<T>({hidden})}; }
};

inline std::string ln_param_name(std::string_view domain, std::size_t gate, bool gain) {
  return "ln." + std::string(domain) + "." + std::string(kGateNames[gate]) + (gain ? ".g" : ".b");
}

inline std::string lstm_param_name(std::size_t gate, bool input) {
  return "lstm." + std::string(kGateNames[gate]) + (input ? ".ie" : ".ih");
}

template <class T>
LNParams<T> bind_ln_params(ParamStore<T>& store, std::string_view domain) {
  LNParams<T> ln;
  for (std::size_t g = 0; g < kGates; ++g) {
    ln.gain[g] = &store.get(ln_param_name(domain, g, true));
    ln.shift[g] = &store.get(ln_param_name(domain, g, false));
  }
  return ln;
}

template <class T>
LSTMWeights<T> bind_lstm_weights(ParamStore<T>& store) {
  LSTMWeights<T> w;
  for (std::size_t g = 0; g < kGates; ++g) {
    w.input[g] = &store.get(lstm_param_name(g, true));
    w.recurrent[g] = &store.get(lstm_param_name(g, false));
  }
  return w;
}

/// Registers a fresh LN set (g = 1, b = 0) for `domain`.
template <class T>
LNParams<T> add_ln_params(ParamStore<T>& store, std::string_view domain, std::size_t hidden) {
  for (std::size_t g = 0; g < kGates; ++g) {
    store.add(ln_param_name(domain, g, true), Tensor<T>({hidden}, T(1)));
    store.add(ln_param_name(domain, g, false), Tensor<T>({hidden}, T(0)));
  }
  return bind_ln_params(store, domain);
}

template <class T>
LSTMWeights<T> add_lstm_weights(ParamStore<T>& store, std::size_t hidden, std::size_t embed, double init_range,
                                Rng& rng) {
  for (std::size_t g = 0; g < kGates; ++g) {
    store.add(lstm_param_name(g, true), uniform_init<T>({hidden, embed}, init_range, rng));
    store.add(lstm_param_name(g, false), uniform_init<T>({hidden, hidden}, init_range, rng));
  }
  return bind_lstm_weights(store);
}

/// Activations of one step kept for the backward pass.
template <class T>
struct LSTMStepCache {
  std::vector<T> x, h_prev, c_prev;
  std::vector<T> nhat;   // 4H normalized pre-activations
  std::array<T, kGates> sigma{};
  std::vector<T> act;    // 4H: sigmoid(i,f,o), tanh(u)
  std::vector<T> c, tanh_c, h;
};

template <class T>
void check_cell_dims(const LSTMWeights<T>& w, const LNParams<T>& ln, std::size_t x_len, std::size_t h_len,
                     std::size_t c_len) {
  const std::size_t H = w.hidden(), E = w.embed();
  for (std::size_t g = 0; g < kGates; ++g) {
    if (w.input[g]->shape() != Shape{H, E} || w.recurrent[g]->shape() != Shape{H, H})
      throw ShapeError("lnlstm: inconsistent gate weight shapes");
    if (ln.gain[g]->size() != H || ln.shift[g]->size() != H)
      throw ShapeError("lnlstm: layer norm vectors must have length " + std::to_string(H));
  }
  if (x_len != E) throw ShapeError("lnlstm: input length " + std::to_string(x_len) + " != embed " + std::to_string(E));
  if (h_len != H || c_len != H) throw ShapeError("lnlstm: state length must be " + std::to_string(H));
}

/// One LN-LSTM step. Fills `cache` (whose h is the new hidden state, c the new cell).
template <class T>
void lnlstm_forward_step(std::span<const T> x, std::span<const T> h_prev, std::span<const T> c_prev,
                         const LSTMWeights<T>& w, const LNParams<T>& ln, T eps, LSTMStepCache<T>& cache) {
  const std::size_t H = w.hidden(), E = w.embed();
  cache.x.assign(x.begin(), x.end());
  cache.h_prev.assign(h_prev.begin(), h_prev.end());
  cache.c_prev.assign(c_prev.begin(), c_prev.end());
  cache.nhat.resize(kGates * H);
  cache.act.resize(kGates * H);
  cache.c.resize(H);
  cache.tanh_c.resize(H);
  cache.h.resize(H);

  std::vector<T> pre(H), normed(H);
  for (std::size_t g = 0; g < kGates; ++g) {
    std::fill(pre.begin(), pre.end(), T(0));
    gemv_acc<T>(w.input[g]->values(), E, x, pre);
    gemv_acc<T>(w.recurrent[g]->values(), H, h_prev, pre);
    std::span<T> nh(cache.nhat.data() + g * H, H);
    const auto st = layer_norm_forward<T>(pre, ln.gain[g]->values(), ln.shift[g]->values(), eps, normed, nh);
    cache.sigma[g] = st.sigma;
    T* act = cache.act.data() + g * H;
    if (g == 3) {
      for (std::size_t k = 0; k < H; ++k) act[k] = std::tanh(normed[k]);
    } else {
      for (std::size_t k = 0; k < H; ++k) act[k] = sigmoid(normed[k]);
    }
  }
  const T* ig = cache.act.data();
  const T* fg = ig + H;
  const T* og = fg + H;
  const T* ug = og + H;
  for (std::size_t k = 0; k < H; ++k) {
    cache.c[k] = fg[k] * c_prev[k] + ig[k] * ug[k];
    cache.tanh_c[k] = std::tanh(cache.c[k]);
    cache.h[k] = og[k] * cache.tanh_c[k];
  }
}

/// Backward of one step. `dh`, `dc` are upstream gradients w.r.t. the new
/// state; gradients w.r.t. x, h_prev, c_prev are accumulated into dx,
/// dh_prev, dc_prev, and parameter gradients into the tensors' grad buffers.
template <class T>
void lnlstm_backward_step(const LSTMStepCache<T>& cache, std::span<const T> dh, std::span<const T> dc,
                          const LSTMWeights<T>& w, const LNParams<T>& ln, T eps, std::span<T> dx,
                          std::span<T> dh_prev, std::span<T> dc_prev) {
  const std::size_t H = w.hidden(), E = w.embed();
  const T* ig = cache.act.data();
  const T* fg = ig + H;
  const T* og = fg + H;
  const T* ug = og + H;
  std::vector<T> dact(kGates * H);
  for (std::size_t k = 0; k < H; ++k) {
    const T tc = cache.tanh_c[k];
    const T dct = dc[k] + dh[k] * og[k] * (T(1) - tc * tc);
    const T d_o = dh[k] * tc;
    const T d_i = dct * ug[k];
    const T d_f = dct * cache.c_prev[k];
    const T d_u = dct * ig[k];
    dc_prev[k] += dct * fg[k];
    dact[k] = d_i * ig[k] * (T(1) - ig[k]);
    dact[H + k] = d_f * fg[k] * (T(1) - fg[k]);
    dact[2 * H + k] = d_o * og[k] * (T(1) - og[k]);
    dact[3 * H + k] = d_u * (T(1) - ug[k] * ug[k]);
  }
  std::vector<T> dpre(H);
  for (std::size_t g = 0; g < kGates; ++g) {
    std::fill(dpre.begin(), dpre.end(), T(0));
    layer_norm_backward<T>(std::span<const T>(dact.data() + g * H, H),
                           std::span<const T>(cache.nhat.data() + g * H, H), ln.gain[g]->values(), cache.sigma[g],
                           eps, dpre, ln.gain[g]->grad(), ln.shift[g]->grad());
    outer_acc<T>(dpre, cache.x, w.input[g]->grad());
    outer_acc<T>(dpre, cache.h_prev, w.recurrent[g]->grad());
    gemv_t_acc<T>(w.input[g]->values(), E, dpre, dx);
    gemv_t_acc<T>(w.recurrent[g]->values(), H, dpre, dh_prev);
  }
}

/// Tensor-level single step.
template <class T>
CellState<T> lnlstm_step(const Tensor<T>& e, const CellState<T>& state, const LSTMWeights<T>& w,
                         const LNParams<T>& ln, double eps = kLayerNormEps) {
  check_cell_dims(w, ln, e.size(), state.h.size(), state.c.size());
  LSTMStepCache<T> cache;
  lnlstm_forward_step<T>(e.values(), state.h.values(), state.c.values(), w, ln, static_cast<T>(eps), cache);
  return {Tensor<T>::vector(cache.h), Tensor<T>::vector(cache.c)};
}

/// Cached forward over a whole input sequence.
template <class T>
struct LSTMTrajectory {
  std::vector<LSTMStepCache<T>> steps;
};

template <class T>
LSTMTrajectory<T> lnlstm_forward(const std::vector<Tensor<T>>& inputs, const CellState<T>& init,
                                 const LSTMWeights<T>& w, const LNParams<T>& ln, double eps = kLayerNormEps) {
  LSTMTrajectory<T> traj;
  traj.steps.resize(inputs.size());
  std::vector<T> h(init.h.values().begin(), init.h.values().end());
  std::vector<T> c(init.c.values().begin(), init.c.values().end());
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    check_cell_dims(w, ln, inputs[t].size(), h.size(), c.size());
    lnlstm_forward_step<T>(inputs[t].values(), h, c, w, ln, static_cast<T>(eps), traj.steps[t]);
    h = traj.steps[t].h;
    c = traj.steps[t].c;
  }
  return traj;
}

template <class T>
struct LSTMSequenceGrads {
  std::vector<Tensor<T>> inputs;
  CellState<T> initial;
};

/// Backward through time. `grad_h` holds one upstream gradient per step;
/// parameter gradients accumulate into the weight and LN tensors.
template <class T>
LSTMSequenceGrads<T> lnlstm_backward(const LSTMTrajectory<T>& traj, const std::vector<Tensor<T>>& grad_h,
                                     const Tensor<T>& grad_c_final, const LSTMWeights<T>& w, const LNParams<T>& ln,
                                     double eps = kLayerNormEps) {
  if (grad_h.size() != traj.steps.size())
    throw StateError("lnlstm_backward: " + std::to_string(grad_h.size()) + " upstream gradients for " +
                     std::to_string(traj.steps.size()) + " steps");
  const std::size_t H = w.hidden(), E = w.embed();
  if (grad_c_final.size() != H) throw ShapeError("lnlstm_backward: final cell gradient has wrong length");
  LSTMSequenceGrads<T> out{std::vector<Tensor<T>>(traj.steps.size(), Tensor<T>({E})), CellState<T>::zeros(H)};
  std::vector<T> dh(H, T(0));
  std::vector<T> dc(grad_c_final.values().begin(), grad_c_final.values().end());
  for (std::size_t t = traj.steps.size(); t-- > 0;) {
    if (grad_h[t].size() != H) throw ShapeError("lnlstm_backward: hidden gradient has wrong length");
    for (std::size_t k = 0; k < H; ++k) dh[k] += grad_h[t][k];
    std::vector<T> dh_prev(H, T(0)), dc_prev(H, T(0));
    lnlstm_backward_step<T>(traj.steps[t], dh, dc, w, ln, static_cast<T>(eps), out.inputs[t].values(), dh_prev,
                            dc_prev);
    dh.swap(dh_prev);
    dc.swap(dc_prev);
  }
  std::copy(dh.begin(), dh.end(), out.initial.h.values().begin());
  std::copy(dc.begin(), dc.end(), out.initial.c.values().begin());
  return out;
}

}  // namespace dln
