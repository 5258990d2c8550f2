#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "fedspa/attacks.hpp"
#include "fedspa/data.hpp"
#include "fedspa/diffnet.hpp"
#include "fedspa/error.hpp"
#include "fedspa/linalg.hpp"

namespace fedspa {

struct MetricsSnapshot {
  int round = -1;
  double acc = 0.0;
  double asr = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> per_class_recall;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

/// Argmax with ties to the lowest class index.
inline std::vector<int> predict(const NetworkSpec& spec, const ParamVector& params, const Matrix<float>& inputs) {
  auto logits = forward(spec, params, inputs);
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto z = logits.row(r);
    std::size_t best = 0;
    for (std::size_t k = 1; k < z.size(); ++k)
      if (z[k] > z[best]) best = k;
    out[r] = static_cast<int>(best);
  }
  return out;
}

inline MetricsSnapshot accuracy(const NetworkSpec& spec, const ParamVector& params, const Dataset& test) {
  if (test.size() == 0) throw ArgumentError("accuracy: empty test set");
  const auto c = static_cast<std::size_t>(spec.num_classes);
  MetricsSnapshot m;
  m.confusion.assign(c, std::vector<std::size_t>(c, 0));
  auto pred = predict(spec, params, test.inputs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    ++m.confusion[static_cast<std::size_t>(test.labels[i])][static_cast<std::size_t>(pred[i])];
    correct += pred[i] == test.labels[i];
  }
  m.acc = static_cast<double>(correct) / static_cast<double>(test.size());
  m.per_class_recall.assign(c, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    std::size_t row = 0;
    for (auto v : m.confusion[k]) row += v;
    m.per_class_recall[k] = row ? static_cast<double>(m.confusion[k][k]) / static_cast<double>(row) : 0.0;
  }
  return m;
}

/// Fraction of triggered non-target test samples classified as `target`.
inline double asr(const NetworkSpec& spec, const ParamVector& params, const Dataset& test, const TriggerSpec& trig,
                  int target) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < test.size(); ++i)
    if (test.labels[i] != target) idx.push_back(i);
  if (idx.empty()) throw UndefinedMetricError("asr: test set holds only target-class samples");
  auto pred = predict(spec, params, apply_trigger(test.inputs.select_rows(idx), trig));
  auto hits = std::count(pred.begin(), pred.end(), target);
  return static_cast<double>(hits) / static_cast<double>(idx.size());
}

struct PersistencePoint {
  int rounds_after = 0;
  double asr = 0.0;
};

struct PersistenceCurve {
  std::vector<PersistencePoint> series;
  double peak = 0.0;
  // First elapsed round with ASR < peak/2; infinity if never.
  double half_life = std::numeric_limits<double>::infinity();
};

/// `asr_by_round` maps round -> ASR for evaluated rounds.
inline PersistenceCurve persistence_curve(const std::map<int, double>& asr_by_round, int window_end) {
  PersistenceCurve c;
  for (auto [round, a] : asr_by_round)
    if (round >= window_end && std::isfinite(a)) c.series.push_back({round - window_end, a});
  for (auto& p : c.series) c.peak = std::max(c.peak, p.asr);
  for (auto& p : c.series)
    if (p.asr < 0.5 * c.peak) {
      c.half_life = p.rounds_after;
      break;
    }
  return c;
}

struct Projection {
  std::vector<std::array<double, 2>> coords;
  double variance_explained = 0.0;
};

class DegenerateProjectionError : public NumericError {
 public:
  explicit DegenerateProjectionError(const std::string& what) : NumericError(what) {}
};

/// PCA of a set of rows (centered, top-2 components by power iteration on the covariance).
inline Projection pca_2d(const Matrix<float>& x) {
  const std::size_t n = x.rows(), d = x.cols();
  if (n < 3) throw ArgumentError("feature projection needs at least 3 samples");
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) mean[k] += x(i, k);
  for (auto& m : mean) m /= static_cast<double>(n);
  linalg::SymMatrix cov{d, std::vector<double>(d * d, 0.0)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < d; ++a) {
      double ca = x(i, a) - mean[a];
      for (std::size_t b = a; b < d; ++b) cov(a, b) += ca * (x(i, b) - mean[b]);
    }
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = 0; b < a; ++b) cov(a, b) = cov(b, a);
  double trace = 0.0;
  for (std::size_t a = 0; a < d; ++a) trace += cov(a, a);
  if (trace <= 1e-20) throw DegenerateProjectionError("feature projection: embeddings have zero variance");
  auto eig = linalg::top_eigenpairs(cov, std::min<std::size_t>(2, d));
  Projection p;
  p.coords.assign(n, {0.0, 0.0});
  double explained = 0.0;
  for (std::size_t c = 0; c < eig.size(); ++c) {
    explained += eig[c].value;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += (x(i, k) - mean[k]) * eig[c].vector[k];
      p.coords[i][c] = s;
    }
  }
  p.variance_explained = std::min(1.0, explained / trace);
  return p;
}

inline Projection feature_projection(const NetworkSpec& spec, const ParamVector& params, const Matrix<float>& samples) {
  return pca_2d(embed(spec, params, samples));
}

/// Writes `sample_id,label,poisoned,pc1,pc2`.
inline void write_projection_csv(std::ostream& os, const Projection& p, std::span<const int> labels,
                                 const std::vector<bool>& poisoned) {
  os << "sample_id,label,poisoned,pc1,pc2\n";
  char buf[64];
  for (std::size_t i = 0; i < p.coords.size(); ++i) {
    os << i << ',' << labels[i] << ',' << (poisoned[i] ? 1 : 0);
    std::snprintf(buf, sizeof buf, ",%.9g,%.9g\n", p.coords[i][0], p.coords[i][1]);
    os << buf;
  }
}

/// Mean distance of poisoned embeddings to the target-class centroid divided by
/// their mean distance to the nearest non-target centroid. Below 1: the trigger
/// lands inside the target cluster.
inline double cluster_alignment_score(const NetworkSpec& spec, const ParamVector& params,
                                      const Matrix<float>& poisoned_inputs,
                                      const std::vector<Matrix<float>>& clean_inputs_by_class, int target) {
  if (target < 0 || static_cast<std::size_t>(target) >= clean_inputs_by_class.size())
    throw ArgumentError("cluster_alignment_score: target class out of range");
  if (poisoned_inputs.rows() == 0) throw ArgumentError("cluster_alignment_score: no poisoned inputs");
  std::vector<std::vector<double>> centroids;
  for (std::size_t c = 0; c < clean_inputs_by_class.size(); ++c) {
    if (clean_inputs_by_class[c].rows() == 0)
      throw ArgumentError("cluster_alignment_score: class " + std::to_string(c) + " has no clean sample");
    auto e = embed(spec, params, clean_inputs_by_class[c]);
    std::vector<double> mu(e.cols(), 0.0);
    for (std::size_t i = 0; i < e.rows(); ++i)
      for (std::size_t k = 0; k < e.cols(); ++k) mu[k] += e(i, k);
    for (auto& v : mu) v /= static_cast<double>(e.rows());
    centroids.push_back(std::move(mu));
  }
  auto ep = embed(spec, params, poisoned_inputs);
  auto dist = [&](std::size_t i, const std::vector<double>& c) {
    double s = 0.0;
    for (std::size_t k = 0; k < c.size(); ++k) {
      double d = ep(i, k) - c[k];
      s += d * d;
    }
    return std::sqrt(s);
  };
  double to_target = 0.0, to_other = 0.0;
  for (std::size_t i = 0; i < ep.rows(); ++i) {
    to_target += dist(i, centroids[static_cast<std::size_t>(target)]);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.size(); ++c)
      if (static_cast<int>(c) != target) best = std::min(best, dist(i, centroids[c]));
    to_other += best;
  }
  if (to_other <= 0.0) return to_target <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  return to_target / to_other;
}

/// Clean test inputs grouped by label.
inline std::vector<Matrix<float>> inputs_by_class(const Dataset& ds) {
  std::vector<Matrix<float>> out;
  for (int c = 0; c < ds.class_count; ++c) {
    auto idx = ds.indices_of(c);
    out.push_back(ds.inputs.select_rows(idx));
  }
  return out;
}

}  // namespace fedspa
