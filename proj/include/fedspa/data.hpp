#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "fedspa/diffnet.hpp"
#include "fedspa/error.hpp"
#include "fedspa/matrix.hpp"
#include "fedspa/rng.hpp"

namespace fedspa {

struct Dataset {
  Matrix<float> inputs;
  std::vector<int> labels;
  int class_count = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t input_dim() const noexcept { return inputs.cols(); }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset d;
    d.inputs = inputs.select_rows(idx);
    d.labels.reserve(idx.size());
    for (auto i : idx) d.labels.push_back(labels[i]);
    d.class_count = class_count;
    return d;
  }

  Batch batch(std::span<const std::size_t> idx) const {
    auto s = subset(idx);
    return {std::move(s.inputs), std::move(s.labels)};
  }

  std::vector<std::size_t> indices_of(int label) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == label) out.push_back(i);
    return out;
  }

  std::vector<std::size_t> class_histogram() const {
    std::vector<std::size_t> h(static_cast<std::size_t>(class_count), 0);
    for (int y : labels) ++h[static_cast<std::size_t>(y)];
    return h;
  }
};

struct BlobParams {
  int classes = 8;
  int per_class = 150;
  std::size_t input_dim = 32;
  double separation = 3.0;
  double noise_sigma = 1.0;
};

struct TrainTest {
  Dataset train;
  Dataset test;
};

/// Gaussian blobs around directions on a sphere of radius `separation`, mapped
/// affinely into [0,1] and clipped. 80/20 split within each class.
inline TrainTest gen_blobs(const BlobParams& p, std::uint64_t seed) {
  if (p.classes < 2) throw ArgumentError("gen_blobs: need at least 2 classes");
  if (p.per_class < 1 || p.input_dim == 0) throw ArgumentError("gen_blobs: empty shape");
  if (!(p.noise_sigma > 0.0) || p.separation < 0.0) throw ArgumentError("gen_blobs: bad separation/noise");
  Rng rng(derive_seed(seed, Stream::data));
  const std::size_t d = p.input_dim;
  const auto classes = static_cast<std::size_t>(p.classes);
  const auto per = static_cast<std::size_t>(p.per_class);
  const std::size_t n_train = per * 4 / 5;
  const std::size_t n_test = per - n_train;
  // Roughly +-1.5 sigma of noise plus a typical center coordinate fills [0,1]; tails are clipped.
  const double scale = 1.0 / (3.0 * p.noise_sigma + 2.0 * p.separation / std::sqrt(static_cast<double>(d)));

  // Random directions, orthonormalized when there is room so every pair of classes is equally far apart.
  std::vector<std::vector<double>> dirs(classes, std::vector<double>(d));
  for (std::size_t c = 0; c < classes; ++c) {
    auto& v = dirs[c];
    double norm = 0.0;
    do {
      for (auto& x : v) x = standard_normal(rng);
      if (classes <= d)
        for (std::size_t q = 0; q < c; ++q) {
          double dp = 0.0;
          for (std::size_t k = 0; k < d; ++k) dp += v[k] * dirs[q][k];
          for (std::size_t k = 0; k < d; ++k) v[k] -= dp * dirs[q][k];
        }
      norm = 0.0;
      for (double x : v) norm += x * x;
    } while (norm < 1e-12);
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
  }
  auto centers = dirs;
  for (auto& c : centers)
    for (auto& x : c) x *= p.separation;

  TrainTest out;
  out.train.inputs = Matrix<float>(classes * n_train, d);
  out.test.inputs = Matrix<float>(classes * n_test, d);
  out.train.class_count = out.test.class_count = p.classes;
  std::size_t tr = 0, te = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < per; ++i) {
      const bool is_train = i < n_train;
      auto row = is_train ? out.train.inputs.row(tr) : out.test.inputs.row(te);
      for (std::size_t k = 0; k < d; ++k) {
        double v = 0.5 + scale * (centers[c][k] + p.noise_sigma * standard_normal(rng));
        row[k] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
      if (is_train) {
        out.train.labels.push_back(static_cast<int>(c));
        ++tr;
      } else {
        out.test.labels.push_back(static_cast<int>(c));
        ++te;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// IDX (MNIST) reader.

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off, const std::string& path) {
  if (off + 4 > b.size()) throw FormatError(path + ": truncated header at offset " + std::to_string(off));
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) | (std::uint32_t(b[off + 2]) << 8) |
         std::uint32_t(b[off + 3]);
}

}  // namespace detail

inline Dataset load_idx(const std::string& path_images, const std::string& path_labels, int class_count = 10) {
  if (class_count < 2) throw ArgumentError("load_idx: class_count must be >= 2");
  auto img = detail::read_file(path_images);
  auto lab = detail::read_file(path_labels);
  if (auto magic = detail::be32(img, 0, path_images); magic != 0x00000803)
    throw FormatError(path_images + ": bad magic at offset 0 (expected 0x00000803)");
  if (auto magic = detail::be32(lab, 0, path_labels); magic != 0x00000801)
    throw FormatError(path_labels + ": bad magic at offset 0 (expected 0x00000801)");
  const std::size_t n = detail::be32(img, 4, path_images);
  const std::size_t rows = detail::be32(img, 8, path_images);
  const std::size_t cols = detail::be32(img, 12, path_images);
  const std::size_t n_labels = detail::be32(lab, 4, path_labels);
  if (n_labels != n)
    throw FormatError(path_labels + ": label count " + std::to_string(n_labels) + " at offset 4 does not match " +
                      std::to_string(n) + " images");
  const std::size_t dim = rows * cols;
  if (dim == 0) throw FormatError(path_images + ": zero-sized images at offset 8");
  if (img.size() < 16 + n * dim)
    throw FormatError(path_images + ": truncated pixel data at offset " + std::to_string(img.size()));
  if (lab.size() < 8 + n) throw FormatError(path_labels + ": truncated label data at offset " + std::to_string(lab.size()));

  Dataset ds;
  ds.class_count = class_count;
  ds.inputs = Matrix<float>(n, dim);
  for (std::size_t i = 0; i < n * dim; ++i) ds.inputs.values()[i] = static_cast<float>(img[16 + i]) / 255.0f;
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    int y = lab[8 + i];
    if (y >= class_count)
      throw FormatError(path_labels + ": label " + std::to_string(y) + " at offset " + std::to_string(8 + i) +
                        " outside [0," + std::to_string(class_count) + ")");
    ds.labels[i] = y;
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Dirichlet partition.

struct PartitionPlan {
  std::vector<std::vector<std::size_t>> assignments;  // per client, ascending indices
  double alpha = 0.0;
  std::uint64_t seed = 0;

  std::size_t clients() const noexcept { return assignments.size(); }
};

namespace detail {

// Splits `total` items by proportions `p` using largest-remainder rounding (ties to lower index).
inline std::vector<std::size_t> largest_remainder(std::span<const double> p, std::size_t total) {
  std::vector<std::size_t> counts(p.size(), 0);
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double exact = p[i] * static_cast<double>(total);
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[i];
    rem.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](auto& a, auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++counts[rem[k % rem.size()].second];
  return counts;
}

}  // namespace detail

/// Per class, draws p ~ Dir(alpha * 1_N) and deals the class's (shuffled) indices out by p.
/// Clients left empty steal one sample from the current largest client.
inline PartitionPlan dirichlet_partition(std::span<const int> labels, std::size_t clients, double alpha,
                                         std::uint64_t seed) {
  if (clients < 2) throw ArgumentError("dirichlet_partition: need at least 2 clients");
  if (!(alpha > 0.0)) throw ArgumentError("dirichlet_partition: alpha must be positive");
  if (clients > labels.size())
    throw ArgumentError("dirichlet_partition: " + std::to_string(clients) + " clients but only " +
                        std::to_string(labels.size()) + " samples");
  Rng rng(derive_seed(seed, Stream::partition));
  int max_label = 0;
  for (int y : labels) max_label = std::max(max_label, y);

  PartitionPlan plan;
  plan.alpha = alpha;
  plan.seed = seed;
  plan.assignments.resize(clients);
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> p(clients);
  for (int c = 0; c <= max_label; ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c) idx.push_back(i);
    // Draw even for empty classes so the stream does not depend on class presence.
    double sum = 0.0;
    for (auto& v : p) sum += (v = gamma(rng));
    if (idx.empty()) continue;
    if (sum <= 0.0) {  // every gamma draw underflowed (tiny alpha): one client takes the class
      std::fill(p.begin(), p.end(), 0.0);
      p[uniform_index(rng, clients)] = 1.0;
    } else {
      for (auto& v : p) v /= sum;
    }
    shuffle_in_place(idx, rng);
    auto counts = detail::largest_remainder(p, idx.size());
    std::size_t pos = 0;
    for (std::size_t k = 0; k < clients; ++k)
      for (std::size_t j = 0; j < counts[k]; ++j) plan.assignments[k].push_back(idx[pos++]);
  }
  for (auto& a : plan.assignments) std::sort(a.begin(), a.end());

  for (;;) {
    auto empty = std::find_if(plan.assignments.begin(), plan.assignments.end(), [](auto& a) { return a.empty(); });
    if (empty == plan.assignments.end()) break;
    auto largest = std::max_element(plan.assignments.begin(), plan.assignments.end(),
                                    [](auto& a, auto& b) { return a.size() < b.size(); });
    empty->push_back(largest->back());
    largest->pop_back();
  }
  return plan;
}

/// Moves samples of `label` into client `to` (taking from the richest other
/// non-protected client each time) until it holds at least `want` of them or none remain.
inline void ensure_class_samples(PartitionPlan& plan, std::span<const int> labels, std::size_t to, int label,
                                 std::size_t want, std::span<const std::size_t> protected_clients) {
  auto count_in = [&](const std::vector<std::size_t>& a) {
    return static_cast<std::size_t>(std::count_if(a.begin(), a.end(), [&](std::size_t i) { return labels[i] == label; }));
  };
  auto is_protected = [&](std::size_t k) {
    return k == to || std::find(protected_clients.begin(), protected_clients.end(), k) != protected_clients.end();
  };
  while (count_in(plan.assignments[to]) < want) {
    std::size_t donor = plan.clients();
    std::size_t best = 0;
    for (std::size_t k = 0; k < plan.clients(); ++k) {
      if (is_protected(k) || plan.assignments[k].size() < 2) continue;
      std::size_t c = count_in(plan.assignments[k]);
      if (c > best) {
        best = c;
        donor = k;
      }
    }
    if (donor == plan.clients()) break;
    auto& src = plan.assignments[donor];
    auto it = std::find_if(src.rbegin(), src.rend(), [&](std::size_t i) { return labels[i] == label; });
    std::size_t moved = *it;
    src.erase(std::next(it).base());
    auto& dst = plan.assignments[to];
    dst.insert(std::upper_bound(dst.begin(), dst.end(), moved), moved);
  }
}

}  // namespace fedspa
