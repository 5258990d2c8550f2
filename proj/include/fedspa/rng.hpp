#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <random>
#include <vector>

namespace fedspa {

using Rng = std::mt19937_64;

// Named substreams. Each consumer derives its engine from (master seed, stream, extra keys),
// so no two consumers ever share state.
enum class Stream : std::uint64_t {
  selection = 1,
  init = 2,
  client = 3,
  defense_noise = 4,
  slices = 5,
  attacker = 6,
  data = 7,
  partition = 8,
  poison = 9,
  trigger_init = 10,
  kmeans = 11,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> keys) noexcept {
  std::uint64_t h = splitmix64(master);
  for (auto k : keys) h = splitmix64(h ^ splitmix64(k + 0x632BE59BD9B4E019ULL));
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t master, Stream s, std::initializer_list<std::uint64_t> keys = {}) noexcept {
  std::uint64_t h = derive_seed(master, {static_cast<std::uint64_t>(s)});
  for (auto k : keys) h = splitmix64(h ^ splitmix64(k + 0x632BE59BD9B4E019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t master, Stream s, std::initializer_list<std::uint64_t> keys = {}) {
  return Rng(derive_seed(master, s, keys));
}

// Uniform double in [0,1) from the top 53 bits. Used instead of
// std::uniform_real_distribution where exact reproducibility matters.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(std::uniform_int_distribution<std::uint64_t>(0, n - 1)(rng));
}

inline double standard_normal(Rng& rng) {
  // Box-Muller, discarding the second variate to keep the stream position simple.
  double u1 = uniform01(rng);
  double u2 = uniform01(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

/// Fisher-Yates with uniform_index, so the permutation depends only on the engine.
template <class T>
void shuffle_in_place(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

inline std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

}  // namespace fedspa
