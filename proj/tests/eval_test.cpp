#include <gtest/gtest.h>

#include <sstream>

#include "fedspa/attacks.hpp"
#include "fedspa/eval.hpp"

using namespace fedspa;

namespace {

// d -> d -> d network whose hidden layer and head are identities, so embeddings
// equal (non-negative) inputs and the argmax is the largest input coordinate.
NetworkSpec identity_spec(std::size_t d) { return NetworkSpec{d, {d}, d, -1}; }

ParamVector identity_params(const NetworkSpec& spec) {
  ParamVector p(spec.param_count(), 0.0f);
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    auto s = spec.layer(l);
    for (std::size_t i = 0; i < s.out; ++i) p[s.weight_offset + i * s.in + i] = 1.0f;
  }
  return p;
}

Dataset one_hot_set(std::size_t d, std::size_t copies) {
  Dataset ds;
  ds.class_count = int(d);
  ds.inputs = Matrix<float>(d * copies, d);
  for (std::size_t c = 0; c < copies; ++c)
    for (std::size_t k = 0; k < d; ++k) {
      ds.inputs(c * d + k, k) = 1.0f;
      ds.labels.push_back(int(k));
    }
  return ds;
}

}  // namespace

TEST(Accuracy, ZeroModelSendsEverythingToClassZero) {
  NetworkSpec spec{4, {5}, 8, -1};
  auto ds = one_hot_set(8, 3);
  ds.inputs = Matrix<float>(24, 4, 0.5f);
  auto m = accuracy(spec, ParamVector(spec.param_count(), 0.0f), ds);
  EXPECT_DOUBLE_EQ(m.acc, 1.0 / 8.0);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(m.confusion[c][0], 3u);
}

TEST(Accuracy, PerfectModelAndConfusionTotals) {
  auto spec = identity_spec(4);
  auto ds = one_hot_set(4, 5);
  auto m = accuracy(spec, identity_params(spec), ds);
  EXPECT_DOUBLE_EQ(m.acc, 1.0);
  std::size_t total = 0;
  for (std::size_t c = 0; c < 4; ++c) {
    std::size_t row = 0;
    for (auto v : m.confusion[c]) row += v;
    EXPECT_EQ(row, 5u);
    EXPECT_DOUBLE_EQ(m.per_class_recall[c], 1.0);
    total += row;
  }
  EXPECT_EQ(total, ds.size());
}

TEST(Asr, BoundsExclusionAndUndefined) {
  auto spec = identity_spec(4);
  auto p = identity_params(spec);
  auto ds = one_hot_set(4, 3);
  TriggerSpec none{TriggerMode::additive, std::vector<float>(4, 0.0f), {}, 0.33f};
  EXPECT_EQ(asr(spec, p, ds, none, 2), 0.0);

  TriggerSpec hard{TriggerMode::patch, {0, 0, 1, 0}, {1, 1, 1, 1}, 0.33f};
  EXPECT_EQ(asr(spec, p, ds, hard, 2), 1.0);

  TriggerSpec half{TriggerMode::blend, {0, 0, 1, 0}, {}, 0.6f};
  double base = asr(spec, p, ds, half, 2);
  auto more = ds;
  more.inputs = Matrix<float>(ds.size() + 2, 4);
  for (std::size_t r = 0; r < ds.size(); ++r)
    for (std::size_t k = 0; k < 4; ++k) more.inputs(r, k) = ds.inputs(r, k);
  more.labels.push_back(2);
  more.labels.push_back(2);
  EXPECT_EQ(asr(spec, p, more, half, 2), base);

  auto only = ds.subset(ds.indices_of(2));
  EXPECT_THROW(asr(spec, p, only, half, 2), UndefinedMetricError);
}

TEST(Persistence, Examples) {
  auto c = persistence_curve({{100, 1.0}, {110, 0.6}, {120, 0.4}}, 100);
  EXPECT_EQ(c.half_life, 20.0);
  EXPECT_EQ(c.peak, 1.0);
  EXPECT_EQ(c.series.size(), 3u);
  EXPECT_TRUE(std::isinf(persistence_curve({{5, 0.7}, {9, 0.7}, {30, 0.7}}, 5).half_life));
  EXPECT_TRUE(persistence_curve({{1, 0.9}, {2, 0.8}}, 10).series.empty());
}

TEST(Projection, PlaneAndShape) {
  NetworkSpec spec = identity_spec(3);
  auto p = identity_params(spec);
  Rng rng(2);
  Matrix<float> x(10, 3);
  for (std::size_t r = 0; r < 10; ++r) {
    double a = uniform01(rng), b = uniform01(rng);
    x(r, 0) = float(a);
    x(r, 1) = float(b);
    x(r, 2) = float(0.5 * a + 0.25 * b);
  }
  x(9, 0) = x(3, 0);
  x(9, 1) = x(3, 1);
  x(9, 2) = x(3, 2);
  auto proj = feature_projection(spec, p, x);
  EXPECT_EQ(proj.coords.size(), 10u);
  EXPECT_NEAR(proj.variance_explained, 1.0, 1e-6);
  EXPECT_EQ(proj.coords[9], proj.coords[3]);
  EXPECT_EQ(feature_projection(spec, p, x).coords, proj.coords);

  std::ostringstream os;
  std::vector<int> labels(10, 1);
  std::vector<bool> poisoned(10, false);
  poisoned[0] = true;
  write_projection_csv(os, proj, labels, poisoned);
  EXPECT_EQ(os.str().rfind("sample_id,label,poisoned,pc1,pc2\n0,1,1,", 0), 0u);

  EXPECT_THROW(feature_projection(spec, p, Matrix<float>(5, 3, 0.2f)), DegenerateProjectionError);
  EXPECT_THROW(feature_projection(spec, p, Matrix<float>(2, 3, 0.2f)), ArgumentError);
}

TEST(ClusterAlignment, DefinitionalCases) {
  auto spec = identity_spec(2);
  auto p = identity_params(spec);
  std::vector<Matrix<float>> by_class{Matrix<float>(2, 2, std::vector<float>{1, 0, 1, 0}),
                                      Matrix<float>(1, 2, std::vector<float>{0, 1})};
  EXPECT_LT(cluster_alignment_score(spec, p, by_class[0], by_class, 0), 1.0);
  Matrix<float> mid(1, 2, std::vector<float>{0.5f, 0.5f});
  EXPECT_DOUBLE_EQ(cluster_alignment_score(spec, p, mid, by_class, 0), 1.0);
  EXPECT_GT(cluster_alignment_score(spec, p, by_class[1], by_class, 0), 1.0);
  EXPECT_THROW(cluster_alignment_score(spec, p, mid, by_class, 2), ArgumentError);
}
