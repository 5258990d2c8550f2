#pragma once

// Trigger machinery and attacker behaviours: data poisoning (vanilla), norm-projected
// poisoning (PGD) and the feature-alignment attack (trigger enhancement + embedding
// alignment injection).

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fedspa/client.hpp"
#include "fedspa/data.hpp"
#include "fedspa/diffnet.hpp"
#include "fedspa/distances.hpp"
#include "fedspa/error.hpp"
#include "fedspa/rng.hpp"

namespace fedspa {

enum class TriggerMode { patch, blend, additive };

inline const char* to_string(TriggerMode m) {
  switch (m) {
    case TriggerMode::patch: return "patch";
    case TriggerMode::blend: return "blend";
    case TriggerMode::additive: return "additive";
  }
  return "?";
}

inline TriggerMode trigger_mode_from(const std::string& s) {
  if (s == "patch") return TriggerMode::patch;
  if (s == "blend") return TriggerMode::blend;
  if (s == "additive") return TriggerMode::additive;
  throw ArgumentError("unknown trigger mode '" + s + "'");
}

struct TriggerSpec {
  TriggerMode mode = TriggerMode::blend;
  std::vector<float> pattern;  // delta, one value per input coordinate
  std::vector<float> mask;     // patch mode only: 1 where the pattern overwrites the input
  float beta = 0.33f;          // blend strength

  std::size_t dim() const noexcept { return pattern.size(); }

  void validate() const {
    if (pattern.empty()) throw ArgumentError("trigger pattern is empty");
    if (!all_finite<float>(pattern)) throw ArgumentError("trigger pattern is not finite");
    if (mode == TriggerMode::patch) {
      if (mask.size() != pattern.size()) throw ArgumentError("patch trigger needs a mask of the pattern's size");
      for (float m : mask)
        if (m != 0.0f && m != 1.0f) throw ArgumentError("patch mask must be binary");
    }
    if (mode == TriggerMode::blend && !(beta > 0.0f && beta <= 1.0f))
      throw ArgumentError("blend strength must be in (0, 1]");
  }

  bool operator==(const TriggerSpec&) const = default;
};

/// Mask over a `size` x `size` square in the bottom-right corner of a rows x cols image.
inline std::vector<float> corner_patch_mask(std::size_t rows, std::size_t cols, std::size_t size) {
  std::vector<float> m(rows * cols, 0.0f);
  for (std::size_t r = rows - std::min(rows, size); r < rows; ++r)
    for (std::size_t c = cols - std::min(cols, size); c < cols; ++c) m[r * cols + c] = 1.0f;
  return m;
}

namespace detail {

inline float clip01(float v) { return v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v); }

}  // namespace detail

inline Matrix<float> apply_trigger(const Matrix<float>& x, const TriggerSpec& trig) {
  if (x.cols() != trig.dim())
    throw ArgumentError("apply_trigger: input width " + std::to_string(x.cols()) + " vs trigger " +
                        std::to_string(trig.dim()));
  Matrix<float> out(x.rows(), x.cols());
  const float beta = trig.beta;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto xr = x.row(r);
    auto o = out.row(r);
    for (std::size_t k = 0; k < x.cols(); ++k) {
      const float d = trig.pattern[k];
      float v = xr[k];
      switch (trig.mode) {
        case TriggerMode::patch: v = trig.mask[k] != 0.0f ? d : v; break;
        case TriggerMode::blend: v = (1.0f - beta) * v + beta * d; break;
        case TriggerMode::additive: v = v + d; break;
      }
      o[k] = detail::clip01(v);
    }
  }
  return out;
}

/// Chain rule from d(loss)/d(triggered input) back to d(loss)/d(pattern), summed over rows.
/// Coordinates clipped by apply_trigger pass no gradient.
inline std::vector<float> trigger_pattern_grad(const Matrix<float>& x, const TriggerSpec& trig,
                                               const Matrix<float>& dtriggered) {
  std::vector<double> g(trig.dim(), 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto xr = x.row(r);
    auto dr = dtriggered.row(r);
    for (std::size_t k = 0; k < x.cols(); ++k) {
      const float d = trig.pattern[k];
      float raw = 0.0f, dv_dd = 0.0f;
      switch (trig.mode) {
        case TriggerMode::patch:
          if (trig.mask[k] == 0.0f) continue;
          raw = d;
          dv_dd = 1.0f;
          break;
        case TriggerMode::blend:
          raw = (1.0f - trig.beta) * xr[k] + trig.beta * d;
          dv_dd = trig.beta;
          break;
        case TriggerMode::additive:
          raw = xr[k] + d;
          dv_dd = 1.0f;
          break;
      }
      if (raw < 0.0f || raw > 1.0f) continue;
      g[k] += static_cast<double>(dv_dd) * static_cast<double>(dr[k]);
    }
  }
  return {g.begin(), g.end()};
}

/// Triggers floor(r*n) seeded rows and relabels them to `target`; other rows and order unchanged.
inline Dataset poison_dataset(const Dataset& shard, const TriggerSpec& trig, int target, double ratio,
                              std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ArgumentError("poison ratio must be in (0, 1]");
  Dataset out = shard;
  const auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(shard.size()) + 1e-9));
  if (k == 0) return out;
  Rng rng(derive_seed(seed, Stream::poison));
  auto idx = iota_indices(shard.size());
  shuffle_in_place(idx, rng);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  auto triggered = apply_trigger(shard.inputs.select_rows(idx), trig);
  for (std::size_t i = 0; i < k; ++i) {
    auto src = triggered.row(i);
    std::copy(src.begin(), src.end(), out.inputs.row(idx[i]).begin());
    out.labels[idx[i]] = target;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Attack configuration

enum class AttackKind { vanilla, pgd, spa };
enum class ConstraintMode { feature_consistency, linf };
enum class AlignMetric { swd, l2, cosine, kl };
// How the trigger moves along its gradient: signed steps (PGD-style) or raw gradient.
enum class TriggerUpdate { sign, gradient };
enum class TriggerInit { uniform, patch, zeros, file };

struct SpaToggles {
  bool utility = true;
  bool enhance = true;
  bool consist = true;
  bool operator==(const SpaToggles&) const = default;
};

struct TriggerConfig {
  TriggerMode mode = TriggerMode::blend;
  float beta = 0.33f;
  TriggerInit init = TriggerInit::uniform;
  std::size_t patch_size = 4;  // coordinates (flat inputs) or square side (image inputs)
  float patch_value = 1.0f;
  std::string path;  // for init = file
  bool operator==(const TriggerConfig&) const = default;
};

struct AttackConfig {
  AttackKind kind = AttackKind::spa;
  int target_label = 0;
  double poison_ratio = 0.5;  // vanilla / pgd only
  double lambda = 1.0;
  int enhance_steps = 200;
  double trigger_lr = 0.001;
  TriggerUpdate trigger_update = TriggerUpdate::sign;
  int attack_epochs = 2;
  double attack_lr = 0.05;
  double grad_clip = 1.0;  // injection: max L2 norm of each parameter step's gradient
  std::size_t batch_size = 32;
  ConstraintMode constraint = ConstraintMode::feature_consistency;
  double epsilon = 0.1;
  AlignMetric align_metric = AlignMetric::swd;
  SpaToggles toggles;
  std::size_t slices = 128;
  bool resample_slices = true;  // false: one basis per attack call (tests)
  double boost = 1.0;
  double pgd_radius = std::numeric_limits<double>::infinity();
  TriggerConfig trigger;
  bool operator==(const AttackConfig&) const = default;
};

inline const char* to_string(AttackKind k) {
  switch (k) {
    case AttackKind::vanilla: return "vanilla";
    case AttackKind::pgd: return "pgd";
    case AttackKind::spa: return "spa";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Trigger serialization: "fedspa-trigger v1 <mode> <beta> <dim>\n", then dim
// little-endian float32 pattern values, then (patch mode only) dim mask values.

inline void write_trigger(std::ostream& os, const TriggerSpec& t) {
  char beta[32];
  std::snprintf(beta, sizeof beta, "%.9g", static_cast<double>(t.beta));
  os << "fedspa-trigger v1 " << to_string(t.mode) << ' ' << beta << ' ' << t.dim() << '\n';
  detail::write_f32_le(os, t.pattern);
  if (t.mode == TriggerMode::patch) detail::write_f32_le(os, t.mask);
}

inline TriggerSpec read_trigger(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("trigger: missing header");
  std::istringstream hs(line);
  std::string magic, version, mode;
  double beta = 0.0;
  long long dim = -1;
  hs >> magic >> version >> mode >> beta >> dim;
  if (!hs || magic != "fedspa-trigger" || version != "v1" || dim <= 0)
    throw FormatError("trigger: bad header '" + line + "'");
  TriggerSpec t;
  try {
    t.mode = trigger_mode_from(mode);
  } catch (const ArgumentError&) {
    throw FormatError("trigger: unknown mode '" + mode + "'");
  }
  t.beta = static_cast<float>(beta);
  t.pattern = detail::read_f32_le(is, static_cast<std::size_t>(dim), "trigger pattern");
  if (t.mode == TriggerMode::patch) t.mask = detail::read_f32_le(is, static_cast<std::size_t>(dim), "trigger mask");
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trigger: trailing bytes after payload");
  try {
    t.validate();
  } catch (const ArgumentError& e) {
    throw FormatError(std::string("trigger: ") + e.what());
  }
  return t;
}

inline void save_trigger(const std::string& path, const TriggerSpec& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_trigger(os, t);
  if (!os) throw IoError("write failed for " + path);
}

inline TriggerSpec load_trigger(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return read_trigger(is);
}

/// Builds the starting trigger. `image_rows`/`image_cols` of 0 mean flat inputs:
/// the patch then covers the last `patch_size` coordinates.
inline TriggerSpec initial_trigger(const TriggerConfig& cfg, std::size_t input_dim, std::uint64_t seed,
                                   std::size_t image_rows = 0, std::size_t image_cols = 0) {
  if (cfg.init == TriggerInit::file) {
    auto t = load_trigger(cfg.path);
    if (t.dim() != input_dim) throw ConfigError("trigger file dimension does not match input_dim", "trigger.path");
    return t;
  }
  TriggerSpec t;
  t.mode = cfg.mode;
  t.beta = cfg.beta;
  t.pattern.assign(input_dim, 0.0f);
  if (cfg.init == TriggerInit::uniform) {
    Rng rng(derive_seed(seed, Stream::trigger_init));
    for (auto& v : t.pattern) v = static_cast<float>(uniform01(rng));
  }
  std::vector<float> region;
  if (image_rows * image_cols == input_dim && image_rows > 0) {
    region = corner_patch_mask(image_rows, image_cols, cfg.patch_size);
  } else {
    region.assign(input_dim, 0.0f);
    for (std::size_t k = input_dim - std::min(input_dim, cfg.patch_size); k < input_dim; ++k) region[k] = 1.0f;
  }
  if (cfg.init == TriggerInit::patch)
    for (std::size_t k = 0; k < input_dim; ++k)
      if (region[k] != 0.0f) t.pattern[k] = cfg.patch_value;
  if (t.mode == TriggerMode::patch) t.mask = region;
  t.validate();
  return t;
}

// ---------------------------------------------------------------------------
// Baseline attacks

namespace detail {

inline ParamVector boosted(const ParamVector& local, const ParamVector& global, double gamma) {
  if (gamma == 1.0) return local;
  ParamVector out(local.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = global[i] + static_cast<float>(gamma * static_cast<double>(local[i] - global[i]));
  return out;
}

inline void project_l2_ball(ParamVector& w, const ParamVector& center, double radius) {
  if (std::isinf(radius)) return;
  double n2 = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    double d = static_cast<double>(w[i]) - static_cast<double>(center[i]);
    n2 += d * d;
  }
  double n = std::sqrt(n2);
  if (n <= radius) return;
  double s = radius / n;
  for (std::size_t i = 0; i < w.size(); ++i)
    w[i] = center[i] + static_cast<float>(s * (static_cast<double>(w[i]) - static_cast<double>(center[i])));
}

inline ClientUpdate poisoned_training(const NetworkSpec& spec, const ParamVector& global, const Dataset& shard,
                                      const AttackConfig& cfg, const TriggerSpec& trig, std::uint64_t seed,
                                      int client_id, double radius) {
  auto poisoned = poison_dataset(shard, trig, cfg.target_label, cfg.poison_ratio, seed);
  EpochHook hook;
  if (!std::isinf(radius)) hook = [&](ParamVector& w, int) { project_l2_ball(w, global, radius); };
  ClientUpdate u;
  u.client_id = client_id;
  u.sample_count = shard.size();
  auto local = train_epochs(spec, global, poisoned, cfg.attack_epochs, static_cast<float>(cfg.attack_lr),
                            cfg.batch_size, derive_seed(seed, Stream::client),
                            "attacker " + std::to_string(client_id), hook);
  u.params = boosted(local, global, cfg.boost);
  return u;
}

}  // namespace detail

/// Data poisoning followed by ordinary local training; the delta is scaled by `cfg.boost`.
inline ClientUpdate vanilla_attack(const NetworkSpec& spec, const ParamVector& global, const Dataset& shard,
                                   const AttackConfig& cfg, const TriggerSpec& trig, std::uint64_t seed,
                                   int client_id = -1) {
  return detail::poisoned_training(spec, global, shard, cfg, trig, seed, client_id,
                                   std::numeric_limits<double>::infinity());
}

/// As vanilla, but after every epoch the model is projected onto the L2 ball of
/// radius `radius` around the global model.
inline ClientUpdate pgd_attack(const NetworkSpec& spec, const ParamVector& global, const Dataset& shard,
                               const AttackConfig& cfg, const TriggerSpec& trig, double radius, std::uint64_t seed,
                               int client_id = -1) {
  if (!(radius >= 0.0)) throw ArgumentError("pgd radius must be non-negative");
  return detail::poisoned_training(spec, global, shard, cfg, trig, seed, client_id, radius);
}

// ---------------------------------------------------------------------------
// Feature-alignment attack

namespace detail {

inline std::vector<std::size_t> draw_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
  auto idx = iota_indices(n);
  k = std::min(k, n);
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + uniform_index(rng, n - i)]);
  idx.resize(k);
  return idx;
}

// k draws from `pool`; with replacement only when the pool is smaller than k.
inline std::vector<std::size_t> draw_from_pool(std::span<const std::size_t> pool, std::size_t k, Rng& rng) {
  std::vector<std::size_t> out;
  out.reserve(k);
  if (pool.size() >= k) {
    for (auto i : draw_without_replacement(pool.size(), k, rng)) out.push_back(pool[i]);
  } else {
    for (std::size_t i = 0; i < k; ++i) out.push_back(pool[uniform_index(rng, pool.size())]);
  }
  return out;
}

inline std::vector<std::size_t> target_pool(const Dataset& shard, int target) {
  auto pool = shard.indices_of(target);
  if (pool.empty())
    throw AttackerDataError("attacker shard holds no sample of target class " + std::to_string(target));
  return pool;
}

// Distance between two embedding sets under the configured metric.
inline DistanceResult<float> set_distance(AlignMetric metric, const Matrix<float>& a, const Matrix<float>& b,
                                          std::size_t slices, Rng& rng, const SliceBasis<float>* fixed) {
  switch (metric) {
    case AlignMetric::swd: {
      if (fixed) return sliced_wasserstein(a, b, *fixed, true);
      auto basis = sample_slices<float>(a.cols(), slices, rng);
      return sliced_wasserstein(a, b, basis, true);
    }
    case AlignMetric::l2: return alt_distance(AltMetric::l2, a, b, true);
    case AlignMetric::cosine: return alt_distance(AltMetric::cosine, a, b, true);
    case AlignMetric::kl: return alt_distance(AltMetric::kl, a, b, true);
  }
  throw ArgumentError("unknown align metric");
}

inline void clip_norm(std::vector<float>& g, double bound) {
  if (std::isinf(bound)) return;
  double n = l2_norm<float>(g);
  if (n <= bound) return;
  const auto s = static_cast<float>(bound / n);
  for (auto& v : g) v *= s;
}

inline void constrain_trigger(TriggerSpec& t, const AttackConfig& cfg) {
  float lo = t.mode == TriggerMode::additive ? -1.0f : 0.0f;
  float hi = 1.0f;
  if (cfg.constraint == ConstraintMode::linf) {
    lo = std::max(lo, static_cast<float>(-cfg.epsilon));
    hi = std::min(hi, static_cast<float>(cfg.epsilon));
  }
  for (auto& v : t.pattern) v = std::clamp(v, lo, hi);
}

}  // namespace detail

struct EnhanceTrace {
  std::vector<float> loss;  // total objective per step
};

/// Optimizes the trigger against the frozen global model: cross-entropy toward the
/// target on triggered inputs, plus (feature-consistency mode) the mean projection
/// distance between clean and triggered target-class embeddings.
inline TriggerSpec spa_enhance_trigger(const NetworkSpec& spec, const ParamVector& global, const Dataset& shard,
                                       int target, const TriggerSpec& trig0, const AttackConfig& cfg, std::uint64_t seed,
                                       EnhanceTrace* trace = nullptr) {
  trig0.validate();
  if (trig0.dim() != spec.input_dim) throw ArgumentError("trigger dimension does not match network input");
  auto pool = detail::target_pool(shard, target);
  TriggerSpec t = trig0;
  const bool use_enhance = cfg.toggles.enhance;
  const bool use_consist = cfg.toggles.consist && cfg.constraint == ConstraintMode::feature_consistency;
  if (cfg.trigger_lr == 0.0 || (!use_enhance && !use_consist)) return t;
  if (cfg.constraint == ConstraintMode::linf) detail::constrain_trigger(t, cfg);

  Rng rng(derive_seed(seed, Stream::attacker, {1}));
  const std::size_t b = std::min(cfg.batch_size, shard.size());
  const auto lr = static_cast<float>(cfg.trigger_lr);
  std::vector<int> target_labels(b, target);

  for (int step = 0; step < cfg.enhance_steps; ++step) {
    auto ia = detail::draw_without_replacement(shard.size(), b, rng);
    auto it = detail::draw_from_pool(pool, b, rng);
    std::vector<double> g(t.dim(), 0.0);
    float total = 0.0f;
    const std::string ctx = "trigger step " + std::to_string(step);

    if (use_enhance) {
      auto xa = shard.inputs.select_rows(ia);
      Batch batch{apply_trigger(xa, t), target_labels};
      auto ev = evaluate_loss<float>(spec, global, batch, CrossEntropy{}, false, true, ctx);
      total += ev.loss;
      auto gd = trigger_pattern_grad(xa, t, ev.input_grad);
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += gd[k];
    }
    if (use_consist) {
      auto xt = shard.inputs.select_rows(it);
      auto clean = embed(spec, global, xt);
      EmbeddingObjective<float> consist = [&clean](const Matrix<float>& emb, Matrix<float>& grad) {
        const float inv = 1.0f / static_cast<float>(emb.rows());
        double sum = 0.0;
        for (std::size_t r = 0; r < emb.rows(); ++r) {
          auto pd = proj_distance<float>(clean.row(r), emb.row(r), true);
          sum += pd.value;
          auto gr = grad.row(r);
          for (std::size_t k = 0; k < gr.size(); ++k) gr[k] = pd.grad_b[k] * inv;
        }
        return static_cast<float>(sum) * inv;
      };
      Batch batch{apply_trigger(xt, t), {}};
      auto ev = evaluate_loss<float>(spec, global, batch, consist, false, true, ctx);
      total += ev.loss;
      auto gd = trigger_pattern_grad(xt, t, ev.input_grad);
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += gd[k];
    }
    for (std::size_t k = 0; k < g.size(); ++k) {
      if (cfg.trigger_update == TriggerUpdate::sign)
        t.pattern[k] -= lr * static_cast<float>((g[k] > 0.0) - (g[k] < 0.0));
      else
        t.pattern[k] -= lr * static_cast<float>(g[k]);
    }
    detail::constrain_trigger(t, cfg);
    if (trace) trace->loss.push_back(total);
  }
  return t;
}

struct InjectTrace {
  std::vector<float> align;
  std::vector<float> utility;
};

/// Trains a student copy of the global model so that triggered embeddings match the
/// distribution of target-class embeddings, while clean embeddings stay close to the
/// frozen teacher (the incoming global model). No labels are used, so the classifier
/// head receives zero gradient and keeps its global values.
inline ClientUpdate spa_inject(const NetworkSpec& spec, const ParamVector& global, const Dataset& shard, int target,
                               const TriggerSpec& trig, const AttackConfig& cfg, std::uint64_t seed, int client_id = -1,
                               InjectTrace* trace = nullptr, const SliceBasis<float>* fixed_basis = nullptr) {
  trig.validate();
  auto pool = detail::target_pool(shard, target);
  ClientUpdate u;
  u.client_id = client_id;
  u.sample_count = shard.size();
  u.params = global;
  if (cfg.attack_epochs <= 0) return u;

  Rng rng(derive_seed(seed, Stream::attacker, {2}));
  std::optional<SliceBasis<float>> call_basis;
  if (!fixed_basis && !cfg.resample_slices) {
    call_basis = sample_slices<float>(spec.embedding_dim(), cfg.slices, rng);
    fixed_basis = &*call_basis;
  }
  const auto lr = static_cast<float>(cfg.attack_lr);
  const float lambda = cfg.toggles.utility ? static_cast<float>(cfg.lambda) : 0.0f;
  auto order = iota_indices(shard.size());

  for (int e = 0; e < cfg.attack_epochs; ++e) {
    shuffle_in_place(order, rng);
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_no) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> ia(order.data() + start, end - start);
      const std::size_t n = ia.size();
      auto it = detail::draw_from_pool(pool, n, rng);
      auto xa = shard.inputs.select_rows(ia);
      auto xt = shard.inputs.select_rows(it);
      auto teacher = embed(spec, global, xa);

      // One forward pass over [x (+) delta ; x_t ; x], split by the objective.
      Matrix<float> stacked(3 * n, spec.input_dim);
      auto poisoned = apply_trigger(xa, trig);
      for (std::size_t r = 0; r < n; ++r) {
        std::copy(poisoned.row(r).begin(), poisoned.row(r).end(), stacked.row(r).begin());
        std::copy(xt.row(r).begin(), xt.row(r).end(), stacked.row(n + r).begin());
        std::copy(xa.row(r).begin(), xa.row(r).end(), stacked.row(2 * n + r).begin());
      }
      float align_value = 0.0f, utility_value = 0.0f;
      EmbeddingObjective<float> objective = [&](const Matrix<float>& emb, Matrix<float>& grad) {
        const std::size_t d = emb.cols();
        auto block = [&](std::size_t b) {
          auto idx = iota_indices(n);
          for (auto& i : idx) i += b * n;
          return emb.select_rows(idx);
        };
        auto scatter = [&](const Matrix<float>& g, std::size_t b, float w) {
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t k = 0; k < d; ++k) grad(b * n + r, k) += w * g(r, k);
        };
        auto ep = block(0), et = block(1);
        auto align = detail::set_distance(cfg.align_metric, ep, et, cfg.slices, rng, fixed_basis);
        align_value = align.value;
        scatter(align.grad_a, 0, 1.0f);
        scatter(align.grad_b, 1, 1.0f);
        float total = align.value;
        if (lambda != 0.0f) {
          auto ec = block(2);
          auto util = detail::set_distance(cfg.align_metric, ec, teacher, cfg.slices, rng, fixed_basis);
          utility_value = util.value;
          scatter(util.grad_a, 2, lambda);
          total += lambda * util.value;
        }
        return total;
      };
      auto ev = evaluate_loss<float>(spec, u.params, Batch{std::move(stacked), {}}, objective, true, false,
                                     "attacker " + std::to_string(client_id) + ", epoch " + std::to_string(e) +
                                         ", batch " + std::to_string(batch_no));
      detail::clip_norm(ev.param_grad, cfg.grad_clip);
      u.params = sgd_step(std::move(u.params), ev.param_grad, lr);
      if (trace) {
        trace->align.push_back(align_value);
        trace->utility.push_back(utility_value);
      }
    }
  }
  return u;
}

/// Attacker-side state carried across rounds: the current trigger.
struct AttackerState {
  TriggerSpec trigger;
  int participations = 0;
};

/// Enhancement from the attacker's current trigger, then injection with the result.
/// The optimized trigger replaces `state.trigger`.
inline ClientUpdate spa_attack(const NetworkSpec& spec, const ParamVector& global, const Dataset& shard,
                               const AttackConfig& cfg, AttackerState& state, std::uint64_t seed, int client_id = -1) {
  state.trigger = spa_enhance_trigger(spec, global, shard, cfg.target_label, state.trigger, cfg, seed);
  ++state.participations;
  return spa_inject(spec, global, shard, cfg.target_label, state.trigger, cfg, seed, client_id);
}

}  // namespace fedspa
