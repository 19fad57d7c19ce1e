// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference oracle. Uses forward evaluation only, so it is
// independent of the autodiff path it checks.

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "naturalize/tensor.hpp"

namespace gradcheck {

// Perturbs one element of t and evaluates loss() twice.
template <class LossFn>
double central_diff(naturalize::Tensor<double>& t, std::size_t i, LossFn&& loss,
                    double h = 1e-5) {
  const double orig = t.data[i];
  t.data[i] = orig + h;
  const double fp = loss();
  t.data[i] = orig - h;
  const double fm = loss();
  t.data[i] = orig;
  return (fp - fm) / (2.0 * h);
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

struct Result {
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  bool ok(double tol) const { return max_rel_err < tol; }
};

// Compares autodiff grads (already populated in t.grad) against central
// differences of loss() for every element of t.
template <class LossFn>
Result check_tensor(naturalize::Tensor<double>& t, LossFn&& loss, double h = 1e-5) {
  Result r;
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const double fd = central_diff(t, i, loss, h);
    const double ad = t.grad.empty() ? 0.0 : t.grad[i];
    const double e = rel_err(ad, fd);
    if (e > r.max_rel_err) {
      r.max_rel_err = e;
      r.worst_index = i;
    }
  }
  return r;
}

}  // namespace gradcheck
