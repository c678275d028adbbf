#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <vector>

#include "vsanet/nn/tensor.hpp"

namespace vsanet::nn {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

/// Gradients smaller than this are compared in absolute terms.
inline constexpr double kGradCheckFloor = 1e-6;

/// rel = |a - n| / max(|a|, |n|, floor)
inline double grad_rel_error(double analytic, double numeric, double floor = kGradCheckFloor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares the reverse-mode gradient of `loss` with respect to `x` against
/// central finite differences. `indices` selects the checked elements (all
/// when empty). `loss` must rebuild its graph on every call and must not
/// depend on hidden state that changes between calls.
template <typename Real>
GradCheckResult finite_diff_check(const std::function<Tensor<Real>()>& loss, Tensor<Real> x,
                                  double step = 1e-5, std::vector<std::size_t> indices = {}) {
  const bool had_flag = x.requires_grad();
  x.set_requires_grad(true);
  x.zero_grad();
  loss().backward();
  const std::vector<Real> analytic(x.grad().begin(), x.grad().end());
  x.zero_grad();

  if (indices.empty()) {
    indices.resize(x.size());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
  }

  GradCheckResult result;
  NoGradGuard no_grad;
  auto data = x.data();
  for (std::size_t i : indices) {
    const Real saved = data[i];
    data[i] = static_cast<Real>(saved + step);
    const double plus = static_cast<double>(loss().item());
    data[i] = static_cast<Real>(saved - step);
    const double minus = static_cast<double>(loss().item());
    data[i] = saved;
    const double numeric = (plus - minus) / (2.0 * step);
    const double err = grad_rel_error(static_cast<double>(analytic[i]), numeric);
    ++result.checked;
    if (err >= result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
      result.analytic = static_cast<double>(analytic[i]);
      result.numeric = numeric;
    }
  }
  x.set_requires_grad(had_flag);
  return result;
}

}  // namespace vsanet::nn
