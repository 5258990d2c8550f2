#pragma once

// Server-side robust aggregation rules. All of them work on deltas (w_k - w^t)
// and never modify the updates they are given.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedspa/client.hpp"
#include "fedspa/error.hpp"
#include "fedspa/linalg.hpp"
#include "fedspa/rng.hpp"

namespace fedspa {

struct DefenseDecision {
  std::vector<int> kept_ids;      // ascending
  std::vector<int> excluded_ids;  // ascending
  std::vector<double> weights;    // parallel to kept_ids, sums to 1
  double noise_sigma = 0.0;
  std::string notes;
};

/// Client histories for Foolsgold: cumulative deltas keyed by client id.
struct ClientHistory {
  int client_id = -1;
  std::vector<float> cumulative;
};

namespace detail {

inline double squared_distance(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s;
}

inline std::vector<std::vector<double>> deltas(std::span<const ClientUpdate> updates, const ParamVector& global) {
  std::vector<std::vector<double>> out;
  out.reserve(updates.size());
  for (const auto& u : updates) {
    if (u.params.size() != global.size()) throw ArgumentError("update layout does not match the global model");
    std::vector<double> d(global.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<double>(u.params[i]) - static_cast<double>(global[i]);
    out.push_back(std::move(d));
  }
  return out;
}

inline double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s / (na * nb);
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Fills the kept/excluded lists from a keep mask, uniform weights over kept.
inline DefenseDecision decision_from_mask(std::span<const int> ids, const std::vector<bool>& keep) {
  DefenseDecision d;
  std::vector<std::size_t> order = iota_indices(ids.size());
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return ids[a] < ids[b]; });
  for (auto i : order) (keep[i] ? d.kept_ids : d.excluded_ids).push_back(ids[i]);
  d.weights.assign(d.kept_ids.size(), d.kept_ids.empty() ? 0.0 : 1.0 / static_cast<double>(d.kept_ids.size()));
  return d;
}

inline std::vector<int> ids_of(std::span<const ClientUpdate> updates) {
  std::vector<int> ids;
  for (const auto& u : updates) ids.push_back(u.client_id);
  return ids;
}

}  // namespace detail

/// Multi-Krum scores: for each update, the sum of squared distances to its
/// n - f - 2 nearest other updates.
inline std::vector<double> krum_scores(std::span<const ClientUpdate> updates, int f) {
  const std::size_t n = updates.size();
  if (f < 0 || n < static_cast<std::size_t>(f) + 3)
    throw DefenseConfigError("multikrum needs n >= f + 3 (n=" + std::to_string(n) + ", f=" + std::to_string(f) + ")");
  const std::size_t neighbours = n - static_cast<std::size_t>(f) - 2;
  std::vector<std::vector<double>> d2(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      d2[i][j] = d2[j][i] = detail::squared_distance(updates[i].params, updates[j].params);
  std::vector<double> scores(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> others;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) others.push_back(d2[i][j]);
    std::partial_sort(others.begin(), others.begin() + static_cast<std::ptrdiff_t>(neighbours), others.end());
    scores[i] = std::accumulate(others.begin(), others.begin() + static_cast<std::ptrdiff_t>(neighbours), 0.0);
  }
  return scores;
}

/// Keeps the n - f - 2 lowest-scoring updates (ties to the lower client id), uniform weights.
inline DefenseDecision multikrum(std::span<const ClientUpdate> updates, int f) {
  auto scores = krum_scores(updates, f);
  const std::size_t n = updates.size();
  const std::size_t keep_count = n - static_cast<std::size_t>(f) - 2;
  auto order = iota_indices(n);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] < scores[b];
    return updates[a].client_id < updates[b].client_id;
  });
  std::vector<bool> keep(n, false);
  for (std::size_t k = 0; k < keep_count; ++k) keep[order[k]] = true;
  auto ids = detail::ids_of(updates);
  auto d = detail::decision_from_mask(ids, keep);
  d.notes = "multikrum f=" + std::to_string(f);
  return d;
}

/// Foolsgold weighting from cumulative client histories.
inline DefenseDecision foolsgold(std::span<const ClientHistory> histories) {
  const std::size_t n = histories.size();
  DefenseDecision d;
  if (n == 0) return d;
  std::vector<std::vector<double>> h;
  std::vector<bool> zero(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    h.emplace_back(histories[i].cumulative.begin(), histories[i].cumulative.end());
    zero[i] = detail::norm(h.back()) == 0.0;
  }
  std::vector<double> wv(n, 1.0);
  if (n >= 2) {
    std::vector<std::vector<double>> cs(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (!zero[i] && !zero[j]) cs[i][j] = cs[j][i] = detail::cosine(h[i], h[j]);
    std::vector<double> maxcs(n, -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) maxcs[i] = std::max(maxcs[i], cs[i][j]);
    // Pardoning: honest clients that merely resemble a sybil get their similarity scaled down.
    auto pardoned = cs;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j && maxcs[j] > 0.0 && maxcs[i] < maxcs[j]) pardoned[i][j] = cs[i][j] * maxcs[i] / maxcs[j];
    for (std::size_t i = 0; i < n; ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) m = std::max(m, pardoned[i][j]);
      wv[i] = std::clamp(1.0 - m, 0.0, 1.0);
    }
    for (std::size_t i = 0; i < n; ++i)
      if (zero[i]) wv[i] = 1.0;
    double top = *std::max_element(wv.begin(), wv.end());
    if (top > 0.0)
      for (auto& w : wv) w /= top;
    // Logit sharpening.
    for (auto& w : wv) {
      if (w >= 1.0) w = 0.99;
      double l = w <= 0.0 ? -std::numeric_limits<double>::infinity() : std::log(w / (1.0 - w)) + 0.5;
      w = std::clamp(l, 0.0, 1.0);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    d.kept_ids.push_back(histories[i].client_id);
    d.weights.push_back(wv[i]);
  }
  std::vector<std::size_t> order = iota_indices(n);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return d.kept_ids[a] < d.kept_ids[b]; });
  DefenseDecision sorted;
  for (auto i : order) {
    sorted.kept_ids.push_back(d.kept_ids[i]);
    sorted.weights.push_back(d.weights[i]);
  }
  double sum = std::accumulate(sorted.weights.begin(), sorted.weights.end(), 0.0);
  if (sum > 0.0) {
    for (auto& w : sorted.weights) w /= sum;
  } else {
    for (auto& w : sorted.weights) w = 1.0 / static_cast<double>(n);
    sorted.notes = "all foolsgold weights zero; fell back to uniform";
  }
  // Participants whose weight ends at zero are reported as excluded.
  DefenseDecision out;
  for (std::size_t i = 0; i < n; ++i) {
    if (sorted.weights[i] > 0.0) {
      out.kept_ids.push_back(sorted.kept_ids[i]);
      out.weights.push_back(sorted.weights[i]);
    } else {
      out.excluded_ids.push_back(sorted.kept_ids[i]);
    }
  }
  out.notes = sorted.notes;
  for (std::size_t i = 0; i < n; ++i)
    if (zero[i]) out.notes += (out.notes.empty() ? "" : "; ") + std::string("zero history for client ") +
                              std::to_string(histories[i].client_id) + " treated as weight-1 contributor";
  return out;
}

struct FlameResult {
  ParamVector aggregated;
  DefenseDecision decision;
};

/// FLAME-lite: 2-way average-linkage clustering on cosine distance (majority kept),
/// median-norm clipping, averaging, Gaussian noise scaled by `noise_lambda` x median norm.
inline FlameResult flame_lite(std::span<const ClientUpdate> updates, const ParamVector& global, double noise_lambda,
                              Rng& noise_rng) {
  const std::size_t n = updates.size();
  if (n < 2) throw DefenseConfigError("flame needs at least 2 updates");
  auto dl = detail::deltas(updates, global);
  auto ids = detail::ids_of(updates);

  std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) dist[i][j] = dist[j][i] = 1.0 - detail::cosine(dl[i], dl[j]);

  std::vector<std::vector<std::size_t>> clusters;
  for (std::size_t i = 0; i < n; ++i) clusters.push_back({i});
  auto linkage = [&](const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    double s = 0.0;
    for (auto i : a)
      for (auto j : b) s += dist[i][j];
    return s / static_cast<double>(a.size() * b.size());
  };
  while (clusters.size() > 2) {
    std::size_t bi = 0, bj = 1;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < clusters.size(); ++i)
      for (std::size_t j = i + 1; j < clusters.size(); ++j) {
        double l = linkage(clusters[i], clusters[j]);
        if (l < best) {
          best = l;
          bi = i;
          bj = j;
        }
      }
    clusters[bi].insert(clusters[bi].end(), clusters[bj].begin(), clusters[bj].end());
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bj));
  }

  std::vector<bool> keep(n, true);
  std::string notes;
  const double split = linkage(clusters[0], clusters[1]);
  if (split > 1e-6) {
    auto min_id = [&](const std::vector<std::size_t>& c) {
      int m = std::numeric_limits<int>::max();
      for (auto i : c) m = std::min(m, ids[i]);
      return m;
    };
    std::size_t major = 0;
    if (clusters[1].size() > clusters[0].size() ||
        (clusters[1].size() == clusters[0].size() && min_id(clusters[1]) < min_id(clusters[0])))
      major = 1;
    for (auto i : clusters[1 - major]) keep[i] = false;
  } else {
    notes = "no cluster structure; all kept";
  }

  std::vector<double> kept_norms;
  for (std::size_t i = 0; i < n; ++i)
    if (keep[i]) kept_norms.push_back(detail::norm(dl[i]));
  const double med = detail::median(kept_norms);

  std::vector<double> avg(global.size(), 0.0);
  std::size_t kept = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!keep[i]) continue;
    ++kept;
    double nrm = detail::norm(dl[i]);
    double s = nrm > med && nrm > 0.0 ? med / nrm : 1.0;
    for (std::size_t k = 0; k < avg.size(); ++k) avg[k] += s * dl[i][k];
  }
  const double sigma = noise_lambda * med;
  FlameResult r;
  r.aggregated.resize(global.size());
  for (std::size_t k = 0; k < avg.size(); ++k) {
    double v = static_cast<double>(global[k]) + avg[k] / static_cast<double>(kept);
    if (sigma > 0.0) v += sigma * standard_normal(noise_rng);
    r.aggregated[k] = static_cast<float>(v);
  }
  r.decision = detail::decision_from_mask(ids, keep);
  r.decision.noise_sigma = sigma;
  r.decision.notes = notes.empty() ? "flame-lite" : notes;
  return r;
}

/// Lloyd k-means on 2-D points with `restarts` seeded initializations; returns labels of the best run.
inline std::vector<std::size_t> kmeans_2d(const std::vector<std::array<double, 2>>& pts, std::size_t k, int restarts,
                                          Rng& rng) {
  const std::size_t n = pts.size();
  std::vector<std::size_t> best_labels(n, 0);
  double best_inertia = std::numeric_limits<double>::infinity();
  for (int rs = 0; rs < restarts; ++rs) {
    auto idx = iota_indices(n);
    for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + uniform_index(rng, n - i)]);
    std::vector<std::array<double, 2>> c(k);
    for (std::size_t i = 0; i < k; ++i) c[i] = pts[idx[i]];
    std::vector<std::size_t> labels(n, 0);
    for (int it = 0; it < 100; ++it) {
      bool changed = it == 0;
      for (std::size_t p = 0; p < n; ++p) {
        std::size_t arg = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < k; ++j) {
          double dx = pts[p][0] - c[j][0], dy = pts[p][1] - c[j][1];
          double dd = dx * dx + dy * dy;
          if (dd < bd) {
            bd = dd;
            arg = j;
          }
        }
        if (labels[p] != arg) changed = true;
        labels[p] = arg;
      }
      if (!changed) break;
      for (std::size_t j = 0; j < k; ++j) {
        double sx = 0, sy = 0;
        std::size_t cnt = 0;
        for (std::size_t p = 0; p < n; ++p)
          if (labels[p] == j) {
            sx += pts[p][0];
            sy += pts[p][1];
            ++cnt;
          }
        if (cnt) c[j] = {sx / static_cast<double>(cnt), sy / static_cast<double>(cnt)};
      }
    }
    double inertia = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      double dx = pts[p][0] - c[labels[p]][0], dy = pts[p][1] - c[labels[p]][1];
      inertia += dx * dx + dy * dy;
    }
    if (inertia < best_inertia) {
      best_inertia = inertia;
      best_labels = labels;
    }
  }
  return best_labels;
}

/// Centers the delta stack and projects it onto its top-2 principal components.
/// Returns an empty vector when the stack has no variance.
inline std::vector<std::array<double, 2>> project_top2(const std::vector<std::vector<double>>& rows) {
  const std::size_t n = rows.size();
  const std::size_t p = rows.empty() ? 0 : rows[0].size();
  std::vector<double> mean(p, 0.0);
  for (const auto& r : rows)
    for (std::size_t k = 0; k < p; ++k) mean[k] += r[k];
  for (auto& m : mean) m /= static_cast<double>(n);
  linalg::SymMatrix g{n, std::vector<double>(n * n, 0.0)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < p; ++k) s += (rows[i][k] - mean[k]) * (rows[j][k] - mean[k]);
      g(i, j) = g(j, i) = s;
    }
  double trace = 0.0;
  for (std::size_t i = 0; i < n; ++i) trace += g(i, i);
  if (trace <= 1e-24) return {};
  auto eig = linalg::top_eigenpairs(g, 2);
  std::vector<std::array<double, 2>> pts(n, {0.0, 0.0});
  for (std::size_t c = 0; c < eig.size(); ++c) {
    if (eig[c].value <= 1e-12 * trace) continue;
    double s = std::sqrt(eig[c].value);
    for (std::size_t i = 0; i < n; ++i) pts[i][c] = s * eig[c].vector[i];
  }
  return pts;
}

/// RFLBAT-lite on already-projected points: k-means, then keep the most compact
/// cluster (smallest mean pairwise distance; singletons only if every cluster is one).
inline std::vector<bool> rflbat_keep_mask(const std::vector<std::array<double, 2>>& pts, std::size_t k, Rng& rng) {
  const std::size_t n = pts.size();
  auto labels = kmeans_2d(pts, k, 10, rng);
  std::size_t best = k;
  double best_spread = std::numeric_limits<double>::infinity();
  bool any_multi = false;
  for (std::size_t j = 0; j < k; ++j)
    any_multi |= std::count(labels.begin(), labels.end(), j) >= 2;
  for (std::size_t j = 0; j < k; ++j) {
    std::vector<std::size_t> members;
    for (std::size_t p = 0; p < n; ++p)
      if (labels[p] == j) members.push_back(p);
    if (members.empty() || (any_multi && members.size() < 2)) continue;
    double s = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < members.size(); ++a)
      for (std::size_t b = a + 1; b < members.size(); ++b) {
        double dx = pts[members[a]][0] - pts[members[b]][0], dy = pts[members[a]][1] - pts[members[b]][1];
        s += std::sqrt(dx * dx + dy * dy);
        ++pairs;
      }
    double spread = pairs ? s / static_cast<double>(pairs) : 0.0;
    if (spread < best_spread) {
      best_spread = spread;
      best = j;
    }
  }
  std::vector<bool> keep(n, false);
  for (std::size_t p = 0; p < n; ++p) keep[p] = labels[p] == best;
  return keep;
}

inline DefenseDecision rflbat_lite(std::span<const ClientUpdate> updates, const ParamVector& global,
                                   std::size_t k_clusters, std::uint64_t seed) {
  const std::size_t n = updates.size();
  if (k_clusters == 0 || k_clusters > n)
    throw DefenseConfigError("rflbat needs 1 <= k <= number of updates (k=" + std::to_string(k_clusters) +
                             ", n=" + std::to_string(n) + ")");
  auto ids = detail::ids_of(updates);
  auto pts = project_top2(detail::deltas(updates, global));
  if (pts.empty()) {
    auto d = detail::decision_from_mask(ids, std::vector<bool>(n, true));
    d.notes = "rank-deficient delta stack; all kept";
    return d;
  }
  Rng rng(derive_seed(seed, Stream::kmeans));
  auto d = detail::decision_from_mask(ids, rflbat_keep_mask(pts, k_clusters, rng));
  d.notes = "rflbat-lite k=" + std::to_string(k_clusters);
  return d;
}

/// Rescales every delta whose norm exceeds `bound` down to norm `bound`.
inline std::vector<ClientUpdate> clip_updates(std::span<const ClientUpdate> updates, const ParamVector& global,
                                              double bound) {
  if (!(bound > 0.0)) throw DefenseConfigError("clip bound must be positive");
  std::vector<ClientUpdate> out(updates.begin(), updates.end());
  if (std::isinf(bound)) return out;
  for (auto& u : out) {
    double n2 = detail::squared_distance(u.params, global);
    double n = std::sqrt(n2);
    if (n <= bound) continue;
    double s = bound / n;
    for (std::size_t i = 0; i < u.params.size(); ++i)
      u.params[i] = global[i] + static_cast<float>(s * (static_cast<double>(u.params[i]) - static_cast<double>(global[i])));
  }
  return out;
}

}  // namespace fedspa
