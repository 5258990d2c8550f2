#pragma once

// Distances between embedding populations, each with analytic gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fedspa/error.hpp"
#include "fedspa/matrix.hpp"
#include "fedspa/rng.hpp"

namespace fedspa {

/// Rows are the members of the population, columns the embedding coordinates.
template <class Real>
using EmbeddingSet = Matrix<Real>;

template <class Real>
struct SliceBasis {
  Matrix<Real> directions;  // [S x d], unit rows
  std::uint64_t seed = 0;
};

/// Value of a distance plus its gradients with respect to both operands
/// (left empty when gradients were not requested).
template <class Real>
struct DistanceResult {
  Real value = Real(0);
  Matrix<Real> grad_a;
  Matrix<Real> grad_b;
};

template <class Real>
struct VectorDistanceResult {
  Real value = Real(0);
  std::vector<Real> grad_a;
  std::vector<Real> grad_b;
};

class DegenerateReferenceError : public NumericError {
 public:
  explicit DegenerateReferenceError(const std::string& what) : NumericError(what) {}
};

class InsufficientSampleError : public ArgumentError {
 public:
  explicit InsufficientSampleError(const std::string& what) : ArgumentError(what) {}
};

/// Directions drawn as normalized Gaussians, so they are uniform on the sphere.
template <class Real = float>
SliceBasis<Real> sample_slices(std::size_t d, std::size_t slices, Rng& rng) {
  if (d == 0 || slices == 0) throw ArgumentError("sample_slices needs d >= 1 and S >= 1");
  SliceBasis<Real> basis;
  basis.directions = Matrix<Real>(slices, d);
  std::vector<double> v(d);
  for (std::size_t s = 0; s < slices; ++s) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& x : v) {
        x = standard_normal(rng);
        norm += x * x;
      }
    } while (norm < 1e-24);
    norm = std::sqrt(norm);
    auto row = basis.directions.row(s);
    for (std::size_t i = 0; i < d; ++i) row[i] = static_cast<Real>(v[i] / norm);
  }
  return basis;
}

template <class Real = float>
SliceBasis<Real> sample_slices(std::size_t d, std::size_t slices, std::uint64_t seed) {
  Rng rng(derive_seed(seed, Stream::slices));
  auto b = sample_slices<Real>(d, slices, rng);
  b.seed = seed;
  return b;
}

/// Exact 1-D Wasserstein-1 between two empirical distributions, by integrating
/// |F_a - F_b| over the merged support.
inline double exact_w1_1d(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw ArgumentError("exact_w1_1d: empty input");
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  std::vector<double> support;
  support.reserve(sa.size() + sb.size());
  std::merge(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(support));
  const double na = static_cast<double>(sa.size());
  const double nb = static_cast<double>(sb.size());
  double total = 0.0;
  std::size_t ia = 0, ib = 0;
  for (std::size_t k = 0; k + 1 < support.size(); ++k) {
    const double x = support[k];
    while (ia < sa.size() && sa[ia] <= x) ++ia;
    while (ib < sb.size() && sb[ib] <= x) ++ib;
    total += std::abs(static_cast<double>(ia) / na - static_cast<double>(ib) / nb) * (support[k + 1] - x);
  }
  return total;
}

namespace detail {

// Stable argsort: equal values keep original index order.
inline std::vector<std::size_t> argsort(std::span<const double> v) {
  auto idx = iota_indices(v.size());
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  return idx;
}

// W1 between the empirical quantile functions of `pa` and `pb`. The quantile
// grid is the union of {i/n} and {j/m}; on each cell both quantile functions are
// constant, so the integral is exact. Equal sizes degenerate to sorted matching.
// Accumulates dW/dpa and dW/dpb into the given spans when non-empty.
inline double quantile_w1(std::span<const double> pa, std::span<const double> pb, std::span<double> ga,
                          std::span<double> gb) {
  const std::size_t n = pa.size();
  const std::size_t m = pb.size();
  auto oa = argsort(pa);
  auto ob = argsort(pb);
  const double denom = static_cast<double>(n) * static_cast<double>(m);
  std::uint64_t pos = 0;
  std::size_t ia = 0, ib = 0;
  double total = 0.0;
  while (ia < n && ib < m) {
    std::uint64_t next_a = static_cast<std::uint64_t>(ia + 1) * m;
    std::uint64_t next_b = static_cast<std::uint64_t>(ib + 1) * n;
    std::uint64_t next = std::min(next_a, next_b);
    double w = static_cast<double>(next - pos) / denom;
    double diff = pa[oa[ia]] - pb[ob[ib]];
    total += w * std::abs(diff);
    if (!ga.empty() && diff != 0.0) {
      double s = diff > 0.0 ? w : -w;
      ga[oa[ia]] += s;
      gb[ob[ib]] -= s;
    }
    pos = next;
    if (next_a == next) ++ia;
    if (next_b == next) ++ib;
  }
  return total;
}

template <class Real>
void project(const Matrix<Real>& x, std::span<const Real> dir, std::vector<double>& out) {
  out.resize(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) out[r] = dot<Real>(x.row(r), dir);
}

}  // namespace detail

/// Sliced-Wasserstein distance: sqrt of the mean over slices of the per-slice W1.
/// Gradients hold the sort permutation fixed; the gradient is defined as 0 when the distance is 0.
template <class Real>
DistanceResult<Real> sliced_wasserstein(const EmbeddingSet<Real>& a, const EmbeddingSet<Real>& b,
                                        const SliceBasis<Real>& basis, bool want_grads = false) {
  const std::size_t d = basis.directions.cols();
  if (a.rows() == 0 || b.rows() == 0) throw ArgumentError("sliced_wasserstein: empty embedding set");
  if (a.cols() != d || b.cols() != d)
    throw ArgumentError("sliced_wasserstein: dimension mismatch (" + std::to_string(a.cols()) + ", " +
                        std::to_string(b.cols()) + " vs basis " + std::to_string(d) + ")");
  const std::size_t slices = basis.directions.rows();
  std::vector<double> pa, pb;
  std::vector<double> ga, gb;
  // Per-slice sign weights, needed to chain through the outer square root afterwards.
  std::vector<std::vector<double>> slice_ga, slice_gb;
  if (want_grads) {
    slice_ga.resize(slices);
    slice_gb.resize(slices);
  }
  double mean = 0.0;
  for (std::size_t s = 0; s < slices; ++s) {
    auto dir = basis.directions.row(s);
    detail::project(a, dir, pa);
    detail::project(b, dir, pb);
    if (want_grads) {
      slice_ga[s].assign(a.rows(), 0.0);
      slice_gb[s].assign(b.rows(), 0.0);
      mean += detail::quantile_w1(pa, pb, slice_ga[s], slice_gb[s]);
    } else {
      mean += detail::quantile_w1(pa, pb, {}, {});
    }
  }
  mean /= static_cast<double>(slices);
  DistanceResult<Real> out;
  const double value = std::sqrt(std::max(mean, 0.0));
  out.value = static_cast<Real>(value);
  if (!want_grads) return out;

  out.grad_a = Matrix<Real>(a.rows(), d);
  out.grad_b = Matrix<Real>(b.rows(), d);
  if (value <= 0.0) return out;
  const double outer = 1.0 / (2.0 * value * static_cast<double>(slices));
  std::vector<double> acc_a(a.rows() * d, 0.0), acc_b(b.rows() * d, 0.0);
  for (std::size_t s = 0; s < slices; ++s) {
    auto dir = basis.directions.row(s);
    for (std::size_t r = 0; r < a.rows(); ++r) {
      double c = slice_ga[s][r];
      if (c == 0.0) continue;
      for (std::size_t k = 0; k < d; ++k) acc_a[r * d + k] += c * static_cast<double>(dir[k]);
    }
    for (std::size_t r = 0; r < b.rows(); ++r) {
      double c = slice_gb[s][r];
      if (c == 0.0) continue;
      for (std::size_t k = 0; k < d; ++k) acc_b[r * d + k] += c * static_cast<double>(dir[k]);
    }
  }
  for (std::size_t i = 0; i < acc_a.size(); ++i) out.grad_a.values()[i] = static_cast<Real>(acc_a[i] * outer);
  for (std::size_t i = 0; i < acc_b.size(); ++i) out.grad_b.values()[i] = static_cast<Real>(acc_b[i] * outer);
  return out;
}

/// Norm of the component of `a` orthogonal to `b`.
template <class Real>
VectorDistanceResult<Real> proj_distance(std::span<const Real> a, std::span<const Real> b, bool want_grads = false) {
  if (a.size() != b.size()) throw ArgumentError("proj_distance: dimension mismatch");
  const double bb = dot(b, b);
  if (std::sqrt(bb) <= 1e-12) throw DegenerateReferenceError("proj_distance: reference vector has ~zero norm");
  const double c = dot(a, b) / bb;
  std::vector<double> p(a.size());
  double pp = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    p[i] = static_cast<double>(a[i]) - c * static_cast<double>(b[i]);
    pp += p[i] * p[i];
  }
  const double value = std::sqrt(pp);
  VectorDistanceResult<Real> out;
  out.value = static_cast<Real>(value);
  if (!want_grads) return out;
  out.grad_a.assign(a.size(), Real(0));
  out.grad_b.assign(a.size(), Real(0));
  if (value <= 0.0) return out;
  // d|p|/da = p/|p|;  d|p|/db = -c p/|p|
  for (std::size_t i = 0; i < a.size(); ++i) {
    out.grad_a[i] = static_cast<Real>(p[i] / value);
    out.grad_b[i] = static_cast<Real>(-c * p[i] / value);
  }
  return out;
}

enum class AltMetric { l2, cosine, kl };

namespace detail {

template <class Real>
DistanceResult<Real> pairwise_l2(const Matrix<Real>& a, const Matrix<Real>& b, bool want) {
  const std::size_t n = a.rows(), m = b.rows(), d = a.cols();
  const double scale = 1.0 / (static_cast<double>(n) * static_cast<double>(m));
  DistanceResult<Real> out;
  if (want) {
    out.grad_a = Matrix<Real>(n, d);
    out.grad_b = Matrix<Real>(m, d);
  }
  double total = 0.0;
  std::vector<double> diff(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        diff[k] = static_cast<double>(a(i, k)) - static_cast<double>(b(j, k));
        s += diff[k] * diff[k];
      }
      double dist = std::sqrt(s);
      total += dist;
      if (want && dist > 0.0) {
        for (std::size_t k = 0; k < d; ++k) {
          auto g = static_cast<Real>(scale * diff[k] / dist);
          out.grad_a(i, k) += g;
          out.grad_b(j, k) -= g;
        }
      }
    }
  }
  out.value = static_cast<Real>(total * scale);
  return out;
}

template <class Real>
DistanceResult<Real> pairwise_cosine(const Matrix<Real>& a, const Matrix<Real>& b, bool want) {
  const std::size_t n = a.rows(), m = b.rows(), d = a.cols();
  const double scale = 1.0 / (static_cast<double>(n) * static_cast<double>(m));
  DistanceResult<Real> out;
  if (want) {
    out.grad_a = Matrix<Real>(n, d);
    out.grad_b = Matrix<Real>(m, d);
  }
  std::vector<double> na(n), nb(m);
  for (std::size_t i = 0; i < n; ++i) na[i] = l2_norm<Real>(a.row(i));
  for (std::size_t j = 0; j < m; ++j) nb[j] = l2_norm<Real>(b.row(j));
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (na[i] <= 0.0 || nb[j] <= 0.0) {
        total += 1.0;  // cosine of a zero vector taken as 0
        continue;
      }
      double ab = dot<Real>(a.row(i), b.row(j));
      double cs = ab / (na[i] * nb[j]);
      total += 1.0 - cs;
      if (!want) continue;
      for (std::size_t k = 0; k < d; ++k) {
        double dcs_da = static_cast<double>(b(j, k)) / (na[i] * nb[j]) - cs * static_cast<double>(a(i, k)) / (na[i] * na[i]);
        double dcs_db = static_cast<double>(a(i, k)) / (na[i] * nb[j]) - cs * static_cast<double>(b(j, k)) / (nb[j] * nb[j]);
        out.grad_a(i, k) -= static_cast<Real>(scale * dcs_da);
        out.grad_b(j, k) -= static_cast<Real>(scale * dcs_db);
      }
    }
  }
  out.value = static_cast<Real>(total * scale);
  return out;
}

constexpr double kVarianceFloor = 1e-6;

template <class Real>
void diag_moments(const Matrix<Real>& x, std::vector<double>& mu, std::vector<double>& var, std::vector<bool>& floored) {
  const std::size_t n = x.rows(), d = x.cols();
  mu.assign(d, 0.0);
  var.assign(d, 0.0);
  floored.assign(d, false);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) mu[k] += static_cast<double>(x(i, k));
  for (auto& v : mu) v /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      double c = static_cast<double>(x(i, k)) - mu[k];
      var[k] += c * c;
    }
  for (std::size_t k = 0; k < d; ++k) {
    var[k] /= static_cast<double>(n - 1);
    if (var[k] < kVarianceFloor) {
      var[k] = kVarianceFloor;
      floored[k] = true;
    }
  }
}

// KL(N_a || N_b) between diagonal Gaussians fitted (unbiased variance) to each set.
template <class Real>
DistanceResult<Real> gaussian_kl(const Matrix<Real>& a, const Matrix<Real>& b, bool want) {
  if (a.rows() < 2 || b.rows() < 2) throw InsufficientSampleError("kl distance needs at least 2 rows per set");
  const std::size_t d = a.cols();
  std::vector<double> ma, va, mb, vb;
  std::vector<bool> fa, fb;
  diag_moments(a, ma, va, fa);
  diag_moments(b, mb, vb, fb);
  double total = 0.0;
  std::vector<double> dma(d), dva(d), dmb(d), dvb(d);
  for (std::size_t k = 0; k < d; ++k) {
    double dm = ma[k] - mb[k];
    total += 0.5 * (std::log(vb[k] / va[k]) + (va[k] + dm * dm) / vb[k] - 1.0);
    dma[k] = dm / vb[k];
    dmb[k] = -dm / vb[k];
    dva[k] = fa[k] ? 0.0 : 0.5 * (1.0 / vb[k] - 1.0 / va[k]);
    dvb[k] = fb[k] ? 0.0 : 0.5 * (1.0 / vb[k] - (va[k] + dm * dm) / (vb[k] * vb[k]));
  }
  DistanceResult<Real> out;
  out.value = static_cast<Real>(total);
  if (!want) return out;
  auto chain = [d](const Matrix<Real>& x, const std::vector<double>& mu, const std::vector<double>& dmu,
                   const std::vector<double>& dvar) {
    const double n = static_cast<double>(x.rows());
    Matrix<Real> g(x.rows(), d);
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t k = 0; k < d; ++k)
        g(i, k) = static_cast<Real>(dmu[k] / n + dvar[k] * 2.0 * (static_cast<double>(x(i, k)) - mu[k]) / (n - 1.0));
    return g;
  };
  out.grad_a = chain(a, ma, dma, dva);
  out.grad_b = chain(b, mb, dmb, dvb);
  return out;
}

}  // namespace detail

/// Ablation distances: all-pairs mean L2, all-pairs mean (1 - cosine), diagonal-Gaussian KL(A || B).
template <class Real>
DistanceResult<Real> alt_distance(AltMetric metric, const EmbeddingSet<Real>& a, const EmbeddingSet<Real>& b,
                                  bool want_grads = false) {
  if (a.rows() == 0 || b.rows() == 0) throw ArgumentError("alt_distance: empty embedding set");
  if (a.cols() != b.cols()) throw ArgumentError("alt_distance: dimension mismatch");
  switch (metric) {
    case AltMetric::l2:
      return detail::pairwise_l2(a, b, want_grads);
    case AltMetric::cosine:
      return detail::pairwise_cosine(a, b, want_grads);
    case AltMetric::kl:
      return detail::gaussian_kl(a, b, want_grads);
  }
  throw ArgumentError("alt_distance: unknown metric");
}

}  // namespace fedspa
