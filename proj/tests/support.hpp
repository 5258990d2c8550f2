#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "fedspa/matrix.hpp"
#include "fedspa/rng.hpp"

namespace fedspa::test {

inline Matrix<double> random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Matrix<double> m(r, c);
  for (auto& v : m.values()) v = lo + (hi - lo) * uniform01(rng);
  return m;
}

// Central difference of f along coordinate `i` of `x`.
inline double central_diff(std::vector<double>& x, std::size_t i, const std::function<double()>& f, double h = 1e-4) {
  const double keep = x[i];
  x[i] = keep + h;
  const double up = f();
  x[i] = keep - h;
  const double down = f();
  x[i] = keep;
  return (up - down) / (2.0 * h);
}

inline double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

}  // namespace fedspa::test
