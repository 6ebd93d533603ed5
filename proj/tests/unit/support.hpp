// Shared helpers for the unit tests.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>

#include "promptvm/linalg.hpp"

namespace promptvm::test {

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline Vector uniform_vector(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Vector v(n);
  for (double& x : v) x = d(rng);
  return v;
}

inline Matrix uniform_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c, double lo, double hi) {
  Matrix m(r, c);
  std::uniform_real_distribution<double> d(lo, hi);
  for (double& x : m.data()) x = d(rng);
  return m;
}

}  // namespace promptvm::test
