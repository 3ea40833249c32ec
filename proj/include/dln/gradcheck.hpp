#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dln/param_store.hpp"

namespace dln {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t scalars_checked = 0;
  /// Max relative error per checked (trainable) entry, in store order.
  std::vector<std::pair<std::string, double>> per_param;
  bool passed = false;
};

/// Compares analytic gradients against central differences for every
/// trainable scalar. `loss_fn(true)` must accumulate gradients into the
/// store; `loss_fn(false)` must only evaluate the loss.
template <class T>
GradCheckReport finite_difference_check(const std::function<T(bool)>& loss_fn, ParamStore<T>& store,
                                        double h, double tol) {
  if (!(h > 0)) throw ArgumentError("finite_difference_check: h must be positive");
  const T f0 = loss_fn(false);
  if (loss_fn(false) != f0) throw ConsistencyError("loss function is not deterministic");

  store.zero_grad();
  loss_fn(true);
  std::vector<std::vector<T>> analytic;
  for (const auto& e : store) analytic.emplace_back(e.tensor.grad().begin(), e.tensor.grad().end());
  store.zero_grad();

  GradCheckReport rep;
  for (std::size_t p = 0; p < store.size(); ++p) {
    auto& e = store[p];
    if (!e.trainable) continue;
    double entry_max = 0.0;
    auto vals = e.tensor.values();
    for (std::size_t k = 0; k < vals.size(); ++k) {
      const T saved = vals[k];
      vals[k] = static_cast<T>(saved + h);
      const double fp = loss_fn(false);
      vals[k] = static_cast<T>(saved - h);
      const double fm = loss_fn(false);
      vals[k] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[p][k];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      entry_max = std::max(entry_max, rel);
      if (rel > rep.max_rel_error || rep.scalars_checked == 0) {
        rep.max_rel_error = rel;
        rep.worst_param = e.name;
        rep.worst_index = k;
        rep.worst_analytic = a;
        rep.worst_numeric = numeric;
      }
      ++rep.scalars_checked;
    }
    rep.per_param.emplace_back(e.name, entry_max);
  }
  if (loss_fn(false) != f0) throw ConsistencyError("loss changed after restoring parameters");
  rep.passed = rep.max_rel_error < tol;
  return rep;
}

}  // namespace dln
