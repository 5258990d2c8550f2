#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "fedspa/defenses.hpp"

using namespace fedspa;

namespace {

ClientUpdate update(int id, ParamVector p, std::size_t n = 10) { return {id, std::move(p), n}; }

double sq(const ParamVector& a, const ParamVector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (double(a[i]) - b[i]) * (double(a[i]) - b[i]);
  return s;
}

// Brute force: minimum over every (n-f-2)-subset of the other updates.
std::vector<double> brute_scores(const std::vector<ClientUpdate>& u, int f) {
  const std::size_t n = u.size(), k = n - std::size_t(f) - 2;
  std::vector<double> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> others;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) others.push_back(j);
    double best = std::numeric_limits<double>::infinity();
    for (unsigned mask = 0; mask < (1u << others.size()); ++mask) {
      if (std::size_t(__builtin_popcount(mask)) != k) continue;
      double s = 0.0;
      for (std::size_t b = 0; b < others.size(); ++b)
        if (mask & (1u << b)) s += sq(u[i].params, u[others[b]].params);
      best = std::min(best, s);
    }
    out.push_back(best);
  }
  return out;
}

std::vector<int> brute_kept(const std::vector<ClientUpdate>& u, int f) {
  auto s = brute_scores(u, f);
  std::vector<std::size_t> order(u.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) {
    return s[a] != s[b] ? s[a] < s[b] : u[a].client_id < u[b].client_id;
  });
  std::vector<int> kept;
  for (std::size_t k = 0; k < u.size() - std::size_t(f) - 2; ++k) kept.push_back(u[order[k]].client_id);
  std::sort(kept.begin(), kept.end());
  return kept;
}

void expect_consistent(const DefenseDecision& d, std::vector<int> ids) {
  std::vector<int> all = d.kept_ids;
  all.insert(all.end(), d.excluded_ids.begin(), d.excluded_ids.end());
  std::sort(all.begin(), all.end());
  std::sort(ids.begin(), ids.end());
  EXPECT_EQ(all, ids);
  ASSERT_EQ(d.weights.size(), d.kept_ids.size());
  double sum = 0.0;
  for (double w : d.weights) {
    EXPECT_GE(w, 0.0);
    sum += w;
  }
  if (!d.kept_ids.empty()) {
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

}  // namespace

TEST(Multikrum, AgreesWithBruteForceOracle) {
  Rng rng(77);
  int fixtures = 0;
  for (std::size_t n = 3; n <= 8; ++n)
    for (int f = 0; std::size_t(f) + 3 <= n; ++f)
      for (int trial = 0; trial < 20; ++trial) {
        // Small integer coordinates make every squared distance exact, and produce ties.
        std::vector<ClientUpdate> u;
        std::vector<int> ids(n);
        std::iota(ids.begin(), ids.end(), 0);
        shuffle_in_place(ids, rng);
        for (std::size_t i = 0; i < n; ++i) {
          ParamVector p(3);
          for (auto& v : p) v = float(int(uniform_index(rng, 4)) - 1);
          u.push_back(update(ids[i], p));
        }
        auto scores = krum_scores(u, f);
        EXPECT_EQ(scores, brute_scores(u, f));
        auto d = multikrum(u, f);
        EXPECT_EQ(d.kept_ids, brute_kept(u, f));
        expect_consistent(d, ids);
        ++fixtures;
      }
  EXPECT_GT(fixtures, 300);
}

TEST(Multikrum, Examples) {
  std::vector<ClientUpdate> u;
  for (int i = 0; i < 4; ++i) u.push_back(update(i, {1.0f, 1.0f}));
  u.push_back(update(4, {50.0f, -50.0f}));
  auto d = multikrum(u, 1);
  EXPECT_EQ(d.kept_ids, (std::vector<int>{0, 1}));
  EXPECT_EQ(std::count(d.excluded_ids.begin(), d.excluded_ids.end(), 4), 1);

  std::vector<ClientUpdate> same;
  for (int i : {5, 3, 9, 1, 7}) same.push_back(update(i, {2.0f}));
  EXPECT_EQ(multikrum(same, 1).kept_ids, (std::vector<int>{1, 3}));
  EXPECT_EQ(multikrum(same, 2).kept_ids.size(), 1u);
  EXPECT_THROW(multikrum(same, 3), DefenseConfigError);
}

TEST(Foolsgold, IdenticalPairIsDownweighted) {
  std::vector<ClientHistory> h{{0, {1, 0, 0, 0}}, {1, {0, 1, 0.2f, 0}}, {2, {0.3f, 0, 1, 0}},
                               {3, {0, 0, 0.1f, 1}}, {4, {5, 5, 5, 5}}, {5, {5, 5, 5, 5}}};
  auto d = foolsgold(h);
  expect_consistent(d, {0, 1, 2, 3, 4, 5});
  auto weight = [&](int id) {
    auto it = std::find(d.kept_ids.begin(), d.kept_ids.end(), id);
    return it == d.kept_ids.end() ? 0.0 : d.weights[std::size_t(it - d.kept_ids.begin())];
  };
  for (int sybil : {4, 5})
    for (int honest : {0, 1, 2, 3}) EXPECT_LT(weight(sybil), weight(honest));
}

TEST(Foolsgold, OrthogonalHistoriesAreUniform) {
  std::vector<ClientHistory> h{{0, {1, 0, 0}}, {1, {0, 2, 0}}, {2, {0, 0, 3}}};
  auto d = foolsgold(h);
  ASSERT_EQ(d.weights.size(), 3u);
  for (double w : d.weights) EXPECT_NEAR(w, 1.0 / 3.0, 1e-12);
}

TEST(Foolsgold, SingleAndZeroHistories) {
  std::vector<ClientHistory> one{{4, {1, 2}}};
  auto d = foolsgold(one);
  EXPECT_EQ(d.kept_ids, std::vector<int>{4});
  EXPECT_EQ(d.weights, std::vector<double>{1.0});

  std::vector<ClientHistory> z{{0, {0, 0}}, {1, {1, 0}}, {2, {0, 1}}};
  auto dz = foolsgold(z);
  expect_consistent(dz, {0, 1, 2});
  EXPECT_NE(dz.notes.find("zero history"), std::string::npos);
}

TEST(Flame, ExcludesMinorityDirectionAndAddsNoise) {
  ParamVector global(4, 0.0f);
  std::vector<ClientUpdate> u{update(0, {1, 1, 0, 0}), update(1, {1.1f, 0.9f, 0, 0}), update(2, {0.9f, 1.1f, 0, 0}),
                              update(3, {0, 0, -4, 4})};
  Rng rng(1);
  auto r = flame_lite(u, global, 0.0, rng);
  EXPECT_EQ(r.decision.excluded_ids, std::vector<int>{3});
  expect_consistent(r.decision, {0, 1, 2, 3});
  EXPECT_EQ(r.decision.noise_sigma, 0.0);
  EXPECT_NEAR(r.aggregated[2], 0.0f, 1e-6);

  Rng a(5), b(5);
  auto n1 = flame_lite(u, global, 0.01, a), n2 = flame_lite(u, global, 0.01, b);
  EXPECT_GT(n1.decision.noise_sigma, 0.0);
  EXPECT_EQ(n1.aggregated, n2.aggregated);
}

TEST(Flame, IdenticalUpdatesKeepAll) {
  std::vector<ClientUpdate> u{update(0, {1, 2}), update(1, {1, 2}), update(2, {1, 2})};
  Rng rng(0);
  auto r = flame_lite(u, ParamVector{0, 0}, 0.0, rng);
  EXPECT_TRUE(r.decision.excluded_ids.empty());
  EXPECT_EQ(r.aggregated, (ParamVector{1, 2}));
}

TEST(Rflbat, IsolatesOutlier) {
  ParamVector global(3, 0.0f);
  std::vector<ClientUpdate> u;
  Rng rng(3);
  for (int i = 0; i < 5; ++i)
    u.push_back(update(i, {float(1 + 0.05 * standard_normal(rng)), float(0.05 * standard_normal(rng)),
                           float(0.05 * standard_normal(rng))}));
  u.push_back(update(5, {-3, 6, 2}));
  auto d = rflbat_lite(u, global, 2, 11);
  EXPECT_EQ(d.excluded_ids, std::vector<int>{5});
  expect_consistent(d, {0, 1, 2, 3, 4, 5});
  EXPECT_EQ(rflbat_lite(u, global, 2, 11).kept_ids, d.kept_ids);
  EXPECT_THROW(rflbat_lite(u, global, 7, 0), DefenseConfigError);
}

TEST(Clip, BoundsDeltaNorms) {
  ParamVector global{1, 1};
  std::vector<ClientUpdate> u{update(0, {4, 5}), update(1, {1.5f, 1})};
  auto c = clip_updates(u, global, 1.0);
  EXPECT_NEAR(std::sqrt(sq(c[0].params, global)), 1.0, 1e-6);
  EXPECT_NEAR(c[0].params[0], 1.6f, 1e-6);
  EXPECT_EQ(c[1].params, u[1].params);
  EXPECT_EQ(clip_updates(u, global, std::numeric_limits<double>::infinity())[0].params, u[0].params);
  EXPECT_THROW(clip_updates(u, global, 0.0), DefenseConfigError);
}
