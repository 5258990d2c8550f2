#pragma once

// Minimal feed-forward ReLU network with hand-written backprop.
//
// Parameters live in one flat vector. Layer l owns a row-major weight block
// [out_l x in_l] followed by its bias block [out_l]; layers are stored in order.
// Everything is templated on the scalar so tests can run the same code in double.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "fedspa/error.hpp"
#include "fedspa/matrix.hpp"
#include "fedspa/rng.hpp"

namespace fedspa {

using ParamVector = std::vector<float>;

struct LayerShape {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;
};

struct NetworkSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t num_classes = 0;
  // Hidden layer whose post-activation output is the feature embedding; -1 = last hidden.
  int embedding_layer = -1;

  void validate() const {
    if (input_dim == 0) throw ConfigError("input_dim must be positive", "network.input_dim");
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2", "network.num_classes");
    if (hidden_dims.empty()) throw ConfigError("at least one hidden layer is required", "network.hidden");
    for (auto h : hidden_dims)
      if (h == 0) throw ConfigError("hidden widths must be positive", "network.hidden");
    if (embedding_layer < -1 || embedding_layer >= static_cast<int>(hidden_dims.size()))
      throw ConfigError("embedding_layer must index an existing hidden layer", "network.embedding_layer");
  }

  std::size_t layer_count() const { return hidden_dims.size() + 1; }

  std::size_t embedding_index() const {
    return embedding_layer < 0 ? hidden_dims.size() - 1 : static_cast<std::size_t>(embedding_layer);
  }
  std::size_t embedding_dim() const { return hidden_dims[embedding_index()]; }

  LayerShape layer(std::size_t l) const {
    LayerShape s;
    std::size_t offset = 0;
    for (std::size_t i = 0; i <= l; ++i) {
      s.in = i == 0 ? input_dim : hidden_dims[i - 1];
      s.out = i < hidden_dims.size() ? hidden_dims[i] : num_classes;
      s.weight_offset = offset;
      s.bias_offset = offset + s.in * s.out;
      offset = s.bias_offset + s.out;
    }
    return s;
  }

  std::size_t param_count() const {
    auto last = layer(layer_count() - 1);
    return last.bias_offset + last.out;
  }

  /// First parameter index belonging to layers above the embedding (the classifier head).
  std::size_t head_offset() const { return layer(embedding_index() + 1).weight_offset; }

  bool operator==(const NetworkSpec&) const = default;
};

/// Inputs with optional labels. Labels are class indices in [0, C).
template <class Real>
struct BasicBatch {
  Matrix<Real> inputs;
  std::vector<int> labels;
};
using Batch = BasicBatch<float>;

/// Glorot-uniform weights, zero biases, deterministic in (spec, seed).
inline ParamVector init_params(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamVector p(spec.param_count(), 0.0f);
  Rng rng(derive_seed(seed, Stream::init));
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    auto s = spec.layer(l);
    double limit = std::sqrt(6.0 / static_cast<double>(s.in + s.out));
    for (std::size_t i = 0; i < s.in * s.out; ++i)
      p[s.weight_offset + i] = static_cast<float>((2.0 * uniform01(rng) - 1.0) * limit);
  }
  return p;
}

template <class Real>
struct ForwardCache {
  Matrix<Real> input;
  std::vector<Matrix<Real>> pre;   // pre-activation per computed layer
  std::vector<Matrix<Real>> post;  // relu(pre) for hidden layers, logits for the last layer
};

namespace detail {

inline void check_params(const NetworkSpec& spec, std::size_t n) {
  if (n != spec.param_count())
    throw ConfigError("parameter vector has " + std::to_string(n) + " entries, network expects " +
                      std::to_string(spec.param_count()));
}

inline void check_inputs(const NetworkSpec& spec, std::size_t cols) {
  if (cols != spec.input_dim)
    throw ConfigError("input width " + std::to_string(cols) + " does not match network input_dim " +
                      std::to_string(spec.input_dim));
}

template <class Real>
Matrix<Real> affine(const Matrix<Real>& x, std::span<const Real> params, const LayerShape& s) {
  Matrix<Real> z(x.rows(), s.out);
  const Real* w = params.data() + s.weight_offset;
  const Real* b = params.data() + s.bias_offset;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto xr = x.row(r);
    auto zr = z.row(r);
    for (std::size_t o = 0; o < s.out; ++o) {
      Real acc = b[o];
      const Real* wo = w + o * s.in;
      for (std::size_t i = 0; i < s.in; ++i) acc += wo[i] * xr[i];
      zr[o] = acc;
    }
  }
  return z;
}

}  // namespace detail

/// Runs layers [0, stop_after]; pass layer_count()-1 for the full network.
template <class Real>
ForwardCache<Real> forward_cached(const NetworkSpec& spec, std::span<const Real> params, const Matrix<Real>& inputs,
                                  std::size_t stop_after) {
  detail::check_params(spec, params.size());
  detail::check_inputs(spec, inputs.cols());
  ForwardCache<Real> c;
  c.input = inputs;
  const std::size_t last = spec.layer_count() - 1;
  for (std::size_t l = 0; l <= stop_after; ++l) {
    const Matrix<Real>& x = l == 0 ? c.input : c.post.back();
    Matrix<Real> z = detail::affine(x, params, spec.layer(l));
    Matrix<Real> a = z;
    if (l != last)
      for (auto& v : a.values()) v = v > Real(0) ? v : Real(0);
    c.pre.push_back(std::move(z));
    c.post.push_back(std::move(a));
  }
  return c;
}

template <class Real>
Matrix<Real> forward(const NetworkSpec& spec, std::span<const Real> params, const Matrix<Real>& inputs) {
  return forward_cached(spec, params, inputs, spec.layer_count() - 1).post.back();
}

inline Matrix<float> forward(const NetworkSpec& spec, const ParamVector& params, const Matrix<float>& inputs) {
  return forward<float>(spec, std::span<const float>(params), inputs);
}

template <class Real>
Matrix<Real> embed(const NetworkSpec& spec, std::span<const Real> params, const Matrix<Real>& inputs) {
  return forward_cached(spec, params, inputs, spec.embedding_index()).post.back();
}

inline Matrix<float> embed(const NetworkSpec& spec, const ParamVector& params, const Matrix<float>& inputs) {
  return embed<float>(spec, std::span<const float>(params), inputs);
}

/// Backpropagates upstream gradients through a cached forward pass.
/// `dlogits` (if given) enters at the output layer, `dembedding` (if given) at the
/// embedding layer. Parameters above the highest entry point receive exactly zero.
template <class Real>
void backward(const NetworkSpec& spec, std::span<const Real> params, const ForwardCache<Real>& cache,
              const Matrix<Real>* dlogits, const Matrix<Real>* dembedding, std::span<Real> param_grad,
              Matrix<Real>* input_grad) {
  const std::size_t emb = spec.embedding_index();
  const std::size_t top = dlogits ? spec.layer_count() - 1 : emb;
  if (!dlogits && !dembedding) throw ArgumentError("backward needs at least one upstream gradient");
  if (cache.pre.size() <= top) throw ArgumentError("forward cache does not reach the requested layer");
  const std::size_t batch = cache.input.rows();

  Matrix<Real> g;  // gradient w.r.t. the post-activation output of layer l
  if (dlogits)
    g = *dlogits;
  else
    g = Matrix<Real>(batch, spec.hidden_dims[emb]);

  for (std::size_t li = top + 1; li-- > 0;) {
    auto s = spec.layer(li);
    if (li == emb && dembedding) {
      if (dembedding->rows() != batch || dembedding->cols() != s.out)
        throw ArgumentError("embedding gradient has the wrong shape");
      g += *dembedding;
    }
    // Through the ReLU (the output layer is linear).
    if (li != spec.layer_count() - 1) {
      const auto& z = cache.pre[li].values();
      auto& gv = g.values();
      for (std::size_t i = 0; i < gv.size(); ++i)
        if (!(z[i] > Real(0))) gv[i] = Real(0);
    }
    const Matrix<Real>& x = li == 0 ? cache.input : cache.post[li - 1];
    if (!param_grad.empty()) {
      Real* dw = param_grad.data() + s.weight_offset;
      Real* db = param_grad.data() + s.bias_offset;
      for (std::size_t r = 0; r < batch; ++r) {
        auto gr = g.row(r);
        auto xr = x.row(r);
        for (std::size_t o = 0; o < s.out; ++o) {
          Real go = gr[o];
          if (go == Real(0)) continue;
          db[o] += go;
          Real* dwo = dw + o * s.in;
          for (std::size_t i = 0; i < s.in; ++i) dwo[i] += go * xr[i];
        }
      }
    }
    if (li == 0 && !input_grad) break;
    Matrix<Real> gx(batch, s.in);
    const Real* w = params.data() + s.weight_offset;
    for (std::size_t r = 0; r < batch; ++r) {
      auto gr = g.row(r);
      auto gxr = gx.row(r);
      for (std::size_t o = 0; o < s.out; ++o) {
        Real go = gr[o];
        if (go == Real(0)) continue;
        const Real* wo = w + o * s.in;
        for (std::size_t i = 0; i < s.in; ++i) gxr[i] += go * wo[i];
      }
    }
    if (li == 0)
      *input_grad = std::move(gx);
    else
      g = std::move(gx);
  }
}

// ---------------------------------------------------------------------------
// Losses

/// Mean cross-entropy against the batch labels.
struct CrossEntropy {};

/// Loss defined on the embedding matrix. Must return the scalar loss and write
/// d(loss)/d(embedding) into `grad` (pre-sized to the embedding shape, zero-filled).
template <class Real>
using EmbeddingObjective = std::function<Real(const Matrix<Real>& embedding, Matrix<Real>& grad)>;

template <class Real>
using LossSpec = std::variant<CrossEntropy, EmbeddingObjective<Real>>;

template <class Real>
struct LossEvaluation {
  Real loss = Real(0);
  std::vector<Real> param_grad;  // empty unless requested
  Matrix<Real> input_grad;       // empty unless requested
};

/// Mean cross-entropy and its logit gradient. Uses log-sum-exp for stability.
template <class Real>
Real cross_entropy(const Matrix<Real>& logits, std::span<const int> labels, Matrix<Real>* dlogits) {
  const std::size_t n = logits.rows();
  const std::size_t c = logits.cols();
  if (labels.size() != n) throw ArgumentError("label count does not match batch size");
  if (dlogits) *dlogits = Matrix<Real>(n, c);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    auto z = logits.row(r);
    int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= c) throw ArgumentError("label out of range");
    Real mx = z[0];
    for (Real v : z) mx = std::max(mx, v);
    double sum = 0.0;
    for (Real v : z) sum += std::exp(static_cast<double>(v - mx));
    double lse = static_cast<double>(mx) + std::log(sum);
    total += lse - static_cast<double>(z[y]);
    if (dlogits) {
      auto d = dlogits->row(r);
      for (std::size_t k = 0; k < c; ++k)
        d[k] = static_cast<Real>(std::exp(static_cast<double>(z[k]) - lse) / static_cast<double>(n));
      d[y] -= static_cast<Real>(1.0 / static_cast<double>(n));
    }
  }
  return static_cast<Real>(total / static_cast<double>(n));
}

/// Evaluates `loss` on `batch`, optionally with parameter and input gradients.
/// `context` is prefixed to numeric-error messages (e.g. "round 12, client 3, batch 4").
template <class Real>
LossEvaluation<Real> evaluate_loss(const NetworkSpec& spec, std::span<const Real> params, const BasicBatch<Real>& batch,
                                   const LossSpec<Real>& loss, bool want_params, bool want_inputs,
                                   const std::string& context = {}) {
  LossEvaluation<Real> out;
  const bool ce = std::holds_alternative<CrossEntropy>(loss);
  const std::size_t stop = ce ? spec.layer_count() - 1 : spec.embedding_index();
  if (ce && batch.labels.size() != batch.inputs.rows())
    throw ArgumentError("cross-entropy needs one label per input row");
  auto cache = forward_cached(spec, params, batch.inputs, stop);

  Matrix<Real> upstream;
  if (ce) {
    out.loss = cross_entropy<Real>(cache.post.back(), batch.labels, &upstream);
  } else {
    upstream = Matrix<Real>(cache.post.back().rows(), cache.post.back().cols());
    out.loss = std::get<EmbeddingObjective<Real>>(loss)(cache.post.back(), upstream);
  }
  if (!std::isfinite(static_cast<double>(out.loss)))
    throw NumericError("non-finite loss" + (context.empty() ? std::string() : " at " + context));
  if (!want_params && !want_inputs) return out;

  if (want_params) out.param_grad.assign(params.size(), Real(0));
  backward<Real>(spec, params, cache, ce ? &upstream : nullptr, ce ? nullptr : &upstream,
                 std::span<Real>(out.param_grad), want_inputs ? &out.input_grad : nullptr);
  return out;
}

inline std::pair<float, ParamVector> loss_and_param_grads(const NetworkSpec& spec, const ParamVector& params,
                                                          const Batch& batch, const LossSpec<float>& loss,
                                                          const std::string& context = {}) {
  auto e = evaluate_loss<float>(spec, params, batch, loss, true, false, context);
  return {e.loss, std::move(e.param_grad)};
}

inline Matrix<float> input_grads(const NetworkSpec& spec, const ParamVector& params, const Batch& batch,
                                 const LossSpec<float>& loss, const std::string& context = {}) {
  return evaluate_loss<float>(spec, params, batch, loss, false, true, context).input_grad;
}

template <class Real>
std::vector<Real> sgd_step(std::vector<Real> params, std::span<const Real> grads, Real lr) {
  if (params.size() != grads.size()) throw ArgumentError("parameter and gradient layouts differ");
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
  return params;
}

inline ParamVector sgd_step(ParamVector params, const ParamVector& grads, float lr) {
  return sgd_step<float>(std::move(params), std::span<const float>(grads), lr);
}

// ---------------------------------------------------------------------------
// Checkpoints: "fedspa-params v1 <count>\n" followed by little-endian float32.

namespace detail {

inline void write_f32_le(std::ostream& os, std::span<const float> v) {
  static_assert(std::numeric_limits<float>::is_iec559 && sizeof(float) == 4);
  for (float f : v) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                          static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
  }
}

inline std::vector<float> read_f32_le(std::istream& is, std::size_t n, const std::string& what) {
  std::vector<float> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
      throw FormatError(what + ": truncated payload at value " + std::to_string(i) + " of " + std::to_string(n));
    std::uint32_t bits = std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
                         (std::uint32_t(b[3]) << 24);
    std::memcpy(&v[i], &bits, 4);
  }
  return v;
}

}  // namespace detail

inline void write_params(std::ostream& os, const ParamVector& p) {
  os << "fedspa-params v1 " << p.size() << '\n';
  detail::write_f32_le(os, p);
}

inline ParamVector read_params(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("checkpoint: missing header");
  std::istringstream hs(line);
  std::string magic, version;
  long long count = -1;
  hs >> magic >> version >> count;
  if (magic != "fedspa-params" || version != "v1" || count < 0)
    throw FormatError("checkpoint: bad header '" + line + "'");
  auto v = detail::read_f32_le(is, static_cast<std::size_t>(count), "checkpoint");
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint: trailing bytes after payload");
  return v;
}

inline void save_params(const std::string& path, const ParamVector& p) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_params(os, p);
  if (!os) throw IoError("write failed for " + path);
}

inline ParamVector load_params(const std::string& path, const NetworkSpec* expect = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  auto p = read_params(is);
  if (expect && p.size() != expect->param_count())
    throw FormatError(path + ": checkpoint holds " + std::to_string(p.size()) + " params, network expects " +
                      std::to_string(expect->param_count()));
  return p;
}

}  // namespace fedspa
