#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "vsanet/nn/rng.hpp"
#include "vsanet/nn/tensor.hpp"

namespace vsanet::testing {

inline std::vector<double> random_vector(nn::Rng& rng, std::size_t n, double lo = -1.0,
                                         double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

template <typename Real>
nn::Tensor<Real> random_tensor(nn::Rng& rng, nn::Shape shape, double lo = -1.0, double hi = 1.0) {
  nn::Tensor<Real> t(std::move(shape));
  for (auto& x : t.data()) x = static_cast<Real>(rng.uniform(lo, hi));
  return t;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <typename Real>
bool bit_equal(std::span<const Real> a, std::span<const Real> b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin());
}

}  // namespace vsanet::testing
