#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace fedspa::linalg {

// Symmetric matrix stored row-major, n x n.
struct SymMatrix {
  std::size_t n = 0;
  std::vector<double> a;
  double& operator()(std::size_t i, std::size_t j) { return a[i * n + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a[i * n + j]; }
};

struct EigenPair {
  double value = 0.0;
  std::vector<double> vector;
};

/// Leading `k` eigenpairs by power iteration with deflation. The start vector is
/// fixed, so results are deterministic; eigenvector signs are normalized so the
/// largest-magnitude entry is positive.
inline std::vector<EigenPair> top_eigenpairs(SymMatrix m, std::size_t k, int iterations = 1000) {
  std::vector<EigenPair> out;
  const std::size_t n = m.n;
  for (std::size_t e = 0; e < k && e < n; ++e) {
    std::vector<double> v(n), w(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 / static_cast<double>(i + 1) + 0.5 * std::sin(static_cast<double>(i + 1));
    double lambda = 0.0;
    for (int it = 0; it < iterations; ++it) {
      double norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
      if (norm == 0.0) break;
      for (auto& x : v) x /= norm;
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += m(i, j) * v[j];
        w[i] = s;
      }
      double next = 0.0;
      for (std::size_t i = 0; i < n; ++i) next += v[i] * w[i];
      double change = 0.0;
      double wn = 0.0;
      for (double x : w) wn += x * x;
      wn = std::sqrt(wn);
      if (wn == 0.0) {
        lambda = 0.0;
        break;
      }
      for (std::size_t i = 0; i < n; ++i) change = std::max(change, std::abs(w[i] / wn - v[i]));
      v = w;
      lambda = next;
      if (change < 1e-13) break;
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0.0)
      for (auto& x : v) x /= norm;
    std::size_t big = 0;
    for (std::size_t i = 1; i < n; ++i)
      if (std::abs(v[i]) > std::abs(v[big])) big = i;
    if (v[big] < 0.0)
      for (auto& x : v) x = -x;
    lambda = std::max(lambda, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) m(i, j) -= lambda * v[i] * v[j];
    out.push_back({lambda, std::move(v)});
  }
  return out;
}

}  // namespace fedspa::linalg
