#pragma once

// Tiny post-layer-norm transformer encoder with a start/end QA head and a
// tapped hidden state for contrastive pooling. Forward and reverse passes
// are written out by hand; Eigen supplies the dense products.
//
// Shapes: a batch of n sequences of length t is stored row-stacked, so every
// activation is an (n*t) x width matrix and row r belongs to sequence r / t.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "mucot/error.hpp"
#include "mucot/features.hpp"
#include "mucot/rng.hpp"

namespace mucot {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

struct EncoderConfig {
  std::size_t vocab_size = 8192;
  std::size_t d_model = 64;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_ffn = 256;
  std::size_t max_positions = 512;
  std::size_t tap_layer = 3;  // 1-based block index

  void validate() const {
    if (vocab_size < 4) fail(ErrorCode::invalid_config, "vocab_size must cover the 4 reserved pieces");
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
      fail(ErrorCode::invalid_config, "d_model ", d_model, " must be a positive multiple of n_heads ", n_heads);
    }
    if (n_layers == 0 || d_ffn == 0 || max_positions == 0) fail(ErrorCode::invalid_config, "n_layers, d_ffn and max_positions must be positive");
    if (tap_layer < 1 || tap_layer > n_layers) fail(ErrorCode::invalid_config, "tap_layer ", tap_layer, " outside [1, ", n_layers, "]");
  }

  bool operator==(const EncoderConfig&) const = default;
};

enum class TensorRole { weight, bias, gain };

template <typename T>
struct LayerParams {
  Matrix<T> query_weight, key_weight, value_weight, output_weight;  // d x d
  RowVector<T> query_bias, key_bias, value_bias, output_bias;
  RowVector<T> ln1_gain, ln1_bias;
  Matrix<T> ffn_in_weight;  // d x d_ffn
  RowVector<T> ffn_in_bias;
  Matrix<T> ffn_out_weight;  // d_ffn x d
  RowVector<T> ffn_out_bias;
  RowVector<T> ln2_gain, ln2_bias;
};

template <typename T>
struct EncoderParams {
  Matrix<T> token_embeddings;     // vocab x d
  Matrix<T> position_embeddings;  // max_positions x d
  Matrix<T> segment_embeddings;   // 2 x d
  std::vector<LayerParams<T>> layers;
  Matrix<T> qa_weight;  // d x 2 (start, end)
  RowVector<T> qa_bias;

  // Zero-valued tensors shaped for `cfg`.
  static EncoderParams zeros(const EncoderConfig& cfg) {
    const auto d = static_cast<Eigen::Index>(cfg.d_model);
    const auto f = static_cast<Eigen::Index>(cfg.d_ffn);
    EncoderParams p;
    p.token_embeddings = Matrix<T>::Zero(static_cast<Eigen::Index>(cfg.vocab_size), d);
    p.position_embeddings = Matrix<T>::Zero(static_cast<Eigen::Index>(cfg.max_positions), d);
    p.segment_embeddings = Matrix<T>::Zero(2, d);
    p.layers.resize(cfg.n_layers);
    for (auto& l : p.layers) {
      l.query_weight = l.key_weight = l.value_weight = l.output_weight = Matrix<T>::Zero(d, d);
      l.query_bias = l.key_bias = l.value_bias = l.output_bias = RowVector<T>::Zero(d);
      l.ln1_gain = l.ln1_bias = l.ln2_gain = l.ln2_bias = RowVector<T>::Zero(d);
      l.ffn_in_weight = Matrix<T>::Zero(d, f);
      l.ffn_in_bias = RowVector<T>::Zero(f);
      l.ffn_out_weight = Matrix<T>::Zero(f, d);
      l.ffn_out_bias = RowVector<T>::Zero(d);
    }
    p.qa_weight = Matrix<T>::Zero(d, 2);
    p.qa_bias = RowVector<T>::Zero(2);
    return p;
  }

  template <typename U>
  EncoderParams<U> cast() const {
    EncoderParams<U> out;
    out.token_embeddings = token_embeddings.template cast<U>();
    out.position_embeddings = position_embeddings.template cast<U>();
    out.segment_embeddings = segment_embeddings.template cast<U>();
    for (const auto& l : layers) {
      auto& o = out.layers.emplace_back();
      o.query_weight = l.query_weight.template cast<U>();
      o.key_weight = l.key_weight.template cast<U>();
      o.value_weight = l.value_weight.template cast<U>();
      o.output_weight = l.output_weight.template cast<U>();
      o.query_bias = l.query_bias.template cast<U>();
      o.key_bias = l.key_bias.template cast<U>();
      o.value_bias = l.value_bias.template cast<U>();
      o.output_bias = l.output_bias.template cast<U>();
      o.ln1_gain = l.ln1_gain.template cast<U>();
      o.ln1_bias = l.ln1_bias.template cast<U>();
      o.ffn_in_weight = l.ffn_in_weight.template cast<U>();
      o.ffn_in_bias = l.ffn_in_bias.template cast<U>();
      o.ffn_out_weight = l.ffn_out_weight.template cast<U>();
      o.ffn_out_bias = l.ffn_out_bias.template cast<U>();
      o.ln2_gain = l.ln2_gain.template cast<U>();
      o.ln2_bias = l.ln2_bias.template cast<U>();
    }
    out.qa_weight = qa_weight.template cast<U>();
    out.qa_bias = qa_bias.template cast<U>();
    return out;
  }
};

// Calls fn(name, tensor, role) for every tensor in a fixed order. The order
// defines checkpoint layout and initialization order. Works for const and
// mutable params alike.
template <typename Params, typename Fn>
void visit_tensors(Params& p, Fn&& fn) {
  fn(std::string("embeddings.token"), p.token_embeddings, TensorRole::weight);
  fn(std::string("embeddings.position"), p.position_embeddings, TensorRole::weight);
  fn(std::string("embeddings.segment"), p.segment_embeddings, TensorRole::weight);
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    auto& l = p.layers[i];
    const std::string prefix = "layers." + std::to_string(i) + ".";
    fn(prefix + "attention.query.weight", l.query_weight, TensorRole::weight);
    fn(prefix + "attention.query.bias", l.query_bias, TensorRole::bias);
    fn(prefix + "attention.key.weight", l.key_weight, TensorRole::weight);
    fn(prefix + "attention.key.bias", l.key_bias, TensorRole::bias);
    fn(prefix + "attention.value.weight", l.value_weight, TensorRole::weight);
    fn(prefix + "attention.value.bias", l.value_bias, TensorRole::bias);
    fn(prefix + "attention.output.weight", l.output_weight, TensorRole::weight);
    fn(prefix + "attention.output.bias", l.output_bias, TensorRole::bias);
    fn(prefix + "ln1.gain", l.ln1_gain, TensorRole::gain);
    fn(prefix + "ln1.bias", l.ln1_bias, TensorRole::bias);
    fn(prefix + "ffn.in.weight", l.ffn_in_weight, TensorRole::weight);
    fn(prefix + "ffn.in.bias", l.ffn_in_bias, TensorRole::bias);
    fn(prefix + "ffn.out.weight", l.ffn_out_weight, TensorRole::weight);
    fn(prefix + "ffn.out.bias", l.ffn_out_bias, TensorRole::bias);
    fn(prefix + "ln2.gain", l.ln2_gain, TensorRole::gain);
    fn(prefix + "ln2.bias", l.ln2_bias, TensorRole::bias);
  }
  fn(std::string("qa.weight"), p.qa_weight, TensorRole::weight);
  fn(std::string("qa.bias"), p.qa_bias, TensorRole::bias);
}

// Pairwise visit of two parameter sets with identical layout.
template <typename A, typename B, typename Fn>
void zip_tensors(A& a, B& b, Fn&& fn) {
  std::vector<std::string> names;
  using TA = typename std::remove_cvref_t<decltype(a.qa_bias)>::Scalar;
  using TB = typename std::remove_cvref_t<decltype(b.qa_bias)>::Scalar;
  std::vector<Eigen::Map<std::conditional_t<std::is_const_v<A>, const Matrix<TA>, Matrix<TA>>>> lhs;
  std::vector<Eigen::Map<std::conditional_t<std::is_const_v<B>, const Matrix<TB>, Matrix<TB>>>> rhs;
  visit_tensors(a, [&](const std::string& name, auto& t, TensorRole) {
    names.push_back(name);
    lhs.emplace_back(t.data(), t.rows(), t.cols());
  });
  visit_tensors(b, [&](const std::string&, auto& t, TensorRole) { rhs.emplace_back(t.data(), t.rows(), t.cols()); });
  if (lhs.size() != rhs.size()) fail(ErrorCode::shape_mismatch, "parameter sets have different tensor counts");
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    if (lhs[i].rows() != rhs[i].rows() || lhs[i].cols() != rhs[i].cols()) {
      fail(ErrorCode::shape_mismatch, "tensor ", names[i], " differs in shape");
    }
    fn(names[i], lhs[i], rhs[i]);
  }
}

template <typename T>
std::size_t parameter_count(const EncoderParams<T>& p) {
  std::size_t n = 0;
  visit_tensors(p, [&](const std::string&, const auto& t, TensorRole) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

// Gaussian N(0, 0.02^2) weights, zero biases, unit layer-norm gains.
template <typename T>
EncoderParams<T> init_params(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  auto p = EncoderParams<T>::zeros(cfg);
  Xoshiro256 rng(seed);
  visit_tensors(p, [&](const std::string&, auto& t, TensorRole role) {
    switch (role) {
      case TensorRole::weight:
        for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<T>(0.02 * rng.normal());
        break;
      case TensorRole::bias: t.setZero(); break;
      case TensorRole::gain: t.setOnes(); break;
    }
  });
  return p;
}

// Model input for n sequences of equal length t.
struct Batch {
  std::size_t n = 0;
  std::size_t t = 0;
  std::vector<int> ids;                // n*t
  std::vector<std::uint8_t> mask;      // n*t
  std::vector<std::uint8_t> segments;  // n*t

  static Batch from(std::span<const Feature* const> features) {
    Batch b;
    b.n = features.size();
    b.t = features.empty() ? 0 : features[0]->ids.size();
    for (const auto* f : features) {
      if (f->ids.size() != b.t || f->attention_mask.size() != b.t || f->segment_ids.size() != b.t) {
        fail(ErrorCode::shape_mismatch, "feature ", f->record_id, " has length ", f->ids.size(), ", batch expects ", b.t);
      }
      b.ids.insert(b.ids.end(), f->ids.begin(), f->ids.end());
      b.mask.insert(b.mask.end(), f->attention_mask.begin(), f->attention_mask.end());
      b.segments.insert(b.segments.end(), f->segment_ids.begin(), f->segment_ids.end());
    }
    return b;
  }

  static Batch from(std::span<const Feature> features) {
    std::vector<const Feature*> ptrs;
    for (const auto& f : features) ptrs.push_back(&f);
    return from(std::span<const Feature* const>(ptrs));
  }
};

namespace encoder_detail {

inline constexpr double kLayerNormEps = 1e-12;

template <typename T>
T gelu(T x) {
  return static_cast<T>(0.5) * x * (static_cast<T>(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = static_cast<T>(0.5) * (static_cast<T>(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(static_cast<T>(-0.5) * x * x) * std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
  return cdf + x * pdf;
}

template <typename T>
struct LayerNormCache {
  Matrix<T> normalized;  // (x - mean) * rstd
  Eigen::Matrix<T, Eigen::Dynamic, 1> rstd;
};

template <typename T>
Matrix<T> layer_norm(const Matrix<T>& x, const RowVector<T>& gain, const RowVector<T>& bias, LayerNormCache<T>& cache) {
  const auto rows = x.rows();
  const auto d = static_cast<T>(x.cols());
  cache.normalized.resize(rows, x.cols());
  cache.rstd.resize(rows);
  Matrix<T> y(rows, x.cols());
  for (Eigen::Index r = 0; r < rows; ++r) {
    const T mean = x.row(r).sum() / d;
    const T var = (x.row(r).array() - mean).square().sum() / d;
    const T rstd = static_cast<T>(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    cache.rstd(r) = rstd;
    cache.normalized.row(r) = (x.row(r).array() - mean) * rstd;
    y.row(r) = cache.normalized.row(r).cwiseProduct(gain) + bias;
  }
  return y;
}

template <typename T>
Matrix<T> layer_norm_backward(const Matrix<T>& dy, const RowVector<T>& gain, const LayerNormCache<T>& cache,
                              RowVector<T>& dgain, RowVector<T>& dbias) {
  const auto d = static_cast<T>(dy.cols());
  dgain += dy.cwiseProduct(cache.normalized).colwise().sum();
  dbias += dy.colwise().sum();
  Matrix<T> dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const RowVector<T> g = dy.row(r).cwiseProduct(gain);
    const T mean_g = g.sum() / d;
    const T mean_gx = g.cwiseProduct(cache.normalized.row(r)).sum() / d;
    dx.row(r) = (g.array() - mean_g - cache.normalized.row(r).array() * mean_gx) * cache.rstd(r);
  }
  return dx;
}

template <typename T>
struct LayerCache {
  Matrix<T> input;
  Matrix<T> query, key, value;  // projected, (n*t) x d
  std::vector<Matrix<T>> probs;  // per (sequence, head): t x t
  Matrix<T> context;             // attention output before W_o
  LayerNormCache<T> ln1;
  Matrix<T> hidden;  // ln1 output
  Matrix<T> ffn_pre;
  Matrix<T> ffn_act;
  LayerNormCache<T> ln2;
};

}  // namespace encoder_detail

template <typename T>
struct ForwardPass {
  std::size_t n = 0;
  std::size_t t = 0;
  Matrix<T> start_logits;  // n x t
  Matrix<T> end_logits;    // n x t
  Matrix<T> tapped;        // (n*t) x d, output of block tap_layer
  Batch batch;
  std::vector<encoder_detail::LayerCache<T>> layers;
  Matrix<T> final_hidden;

  // Hidden vector of token `pos` in sequence `row` at the tap layer.
  auto tapped_token(std::size_t row, std::size_t pos) const {
    return tapped.row(static_cast<Eigen::Index>(row * t + pos));
  }
};

template <typename T>
ForwardPass<T> forward(const EncoderParams<T>& params, const EncoderConfig& cfg, const Batch& batch) {
  using namespace encoder_detail;
  const auto n = batch.n;
  const auto t = batch.t;
  const auto d = static_cast<Eigen::Index>(cfg.d_model);
  const auto heads = cfg.n_heads;
  const auto dh = static_cast<Eigen::Index>(cfg.d_model / heads);
  const auto rows = static_cast<Eigen::Index>(n * t);
  if (batch.ids.size() != n * t || batch.mask.size() != n * t || batch.segments.size() != n * t) {
    fail(ErrorCode::shape_mismatch, "batch arrays do not match n*t = ", n * t);
  }
  if (t > cfg.max_positions) fail(ErrorCode::shape_mismatch, "sequence length ", t, " exceeds max_positions ", cfg.max_positions);
  if (params.layers.size() != cfg.n_layers || params.token_embeddings.rows() != static_cast<Eigen::Index>(cfg.vocab_size) ||
      params.token_embeddings.cols() != d) {
    fail(ErrorCode::shape_mismatch, "parameters do not match the encoder config");
  }

  ForwardPass<T> pass;
  pass.n = n;
  pass.t = t;
  pass.batch = batch;

  Matrix<T> x(rows, d);
  for (std::size_t r = 0; r < n * t; ++r) {
    const int id = batch.ids[r];
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) fail(ErrorCode::shape_mismatch, "token id ", id, " outside vocabulary");
    if (batch.segments[r] > 1) fail(ErrorCode::shape_mismatch, "segment id must be 0 or 1");
    const auto row = static_cast<Eigen::Index>(r);
    x.row(row) = params.token_embeddings.row(id) + params.position_embeddings.row(static_cast<Eigen::Index>(r % t)) +
                 params.segment_embeddings.row(batch.segments[r]);
  }

  const T scale = static_cast<T>(1) / std::sqrt(static_cast<T>(dh));
  pass.layers.resize(cfg.n_layers);
  for (std::size_t li = 0; li < cfg.n_layers; ++li) {
    const auto& p = params.layers[li];
    auto& c = pass.layers[li];
    c.input = x;
    c.query = (x * p.query_weight).rowwise() + p.query_bias;
    c.key = (x * p.key_weight).rowwise() + p.key_bias;
    c.value = (x * p.value_weight).rowwise() + p.value_bias;
    c.context = Matrix<T>::Zero(rows, d);
    c.probs.resize(n * heads);
    for (std::size_t s = 0; s < n; ++s) {
      const auto base = static_cast<Eigen::Index>(s * t);
      const auto tt = static_cast<Eigen::Index>(t);
      for (std::size_t h = 0; h < heads; ++h) {
        const auto col = static_cast<Eigen::Index>(h) * dh;
        Matrix<T> scores = c.query.block(base, col, tt, dh) * c.key.block(base, col, tt, dh).transpose() * scale;
        Matrix<T>& a = c.probs[s * heads + h];
        a = Matrix<T>::Zero(tt, tt);
        for (Eigen::Index i = 0; i < tt; ++i) {
          T max_score = -std::numeric_limits<T>::infinity();
          for (Eigen::Index j = 0; j < tt; ++j) {
            if (batch.mask[s * t + static_cast<std::size_t>(j)]) max_score = std::max(max_score, scores(i, j));
          }
          if (!std::isfinite(max_score)) continue;  // no visible key
          T total = 0;
          for (Eigen::Index j = 0; j < tt; ++j) {
            if (!batch.mask[s * t + static_cast<std::size_t>(j)]) continue;
            a(i, j) = std::exp(scores(i, j) - max_score);
            total += a(i, j);
          }
          a.row(i) /= total;
        }
        c.context.block(base, col, tt, dh) = a * c.value.block(base, col, tt, dh);
      }
    }
    Matrix<T> residual = x + ((c.context * p.output_weight).rowwise() + p.output_bias);
    c.hidden = layer_norm(residual, p.ln1_gain, p.ln1_bias, c.ln1);
    c.ffn_pre = (c.hidden * p.ffn_in_weight).rowwise() + p.ffn_in_bias;
    c.ffn_act = c.ffn_pre.unaryExpr([](T v) { return gelu(v); });
    Matrix<T> residual2 = c.hidden + ((c.ffn_act * p.ffn_out_weight).rowwise() + p.ffn_out_bias);
    x = layer_norm(residual2, p.ln2_gain, p.ln2_bias, c.ln2);
    if (li + 1 == cfg.tap_layer) pass.tapped = x;
  }
  pass.final_hidden = x;

  Matrix<T> logits = (x * params.qa_weight).rowwise() + params.qa_bias;
  pass.start_logits.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(t));
  pass.end_logits.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(t));
  for (std::size_t r = 0; r < n * t; ++r) {
    pass.start_logits(static_cast<Eigen::Index>(r / t), static_cast<Eigen::Index>(r % t)) = logits(static_cast<Eigen::Index>(r), 0);
    pass.end_logits(static_cast<Eigen::Index>(r / t), static_cast<Eigen::Index>(r % t)) = logits(static_cast<Eigen::Index>(r), 1);
  }
  return pass;
}

// Loss gradients flowing into the encoder outputs. Empty matrices mean zero.
template <typename T>
struct Upstream {
  Matrix<T> d_start_logits;  // n x t
  Matrix<T> d_end_logits;    // n x t
  Matrix<T> d_tapped;        // (n*t) x d
};

// Accumulates d(loss)/d(param) into `grads`.
template <typename T>
void backward_into(const EncoderParams<T>& params, const EncoderConfig& cfg, const ForwardPass<T>& pass,
                   const Upstream<T>& up, EncoderParams<T>& grads) {
  using namespace encoder_detail;
  const auto n = pass.n;
  const auto t = pass.t;
  const auto d = static_cast<Eigen::Index>(cfg.d_model);
  const auto heads = cfg.n_heads;
  const auto dh = static_cast<Eigen::Index>(cfg.d_model / heads);
  const auto rows = static_cast<Eigen::Index>(n * t);
  const auto nn = static_cast<Eigen::Index>(n);
  const auto tt = static_cast<Eigen::Index>(t);
  auto check = [&](const Matrix<T>& m, Eigen::Index r, Eigen::Index c, const char* what) {
    if (m.size() != 0 && (m.rows() != r || m.cols() != c)) fail(ErrorCode::shape_mismatch, what, " gradient has the wrong shape");
  };
  check(up.d_start_logits, nn, tt, "start-logit");
  check(up.d_end_logits, nn, tt, "end-logit");
  check(up.d_tapped, rows, d, "tapped");
  if (pass.layers.size() != cfg.n_layers) fail(ErrorCode::shape_mismatch, "forward pass does not match the config");

  Matrix<T> dlogits = Matrix<T>::Zero(rows, 2);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (up.d_start_logits.size()) dlogits(r, 0) = up.d_start_logits(r / tt, r % tt);
    if (up.d_end_logits.size()) dlogits(r, 1) = up.d_end_logits(r / tt, r % tt);
  }
  grads.qa_weight.noalias() += pass.final_hidden.transpose() * dlogits;
  grads.qa_bias += dlogits.colwise().sum();
  Matrix<T> dx = dlogits * params.qa_weight.transpose();

  const T scale = static_cast<T>(1) / std::sqrt(static_cast<T>(dh));
  for (std::size_t li = cfg.n_layers; li-- > 0;) {
    const auto& p = params.layers[li];
    auto& g = grads.layers[li];
    const auto& c = pass.layers[li];
    if (li + 1 == cfg.tap_layer && up.d_tapped.size()) dx += up.d_tapped;

    Matrix<T> dres2 = layer_norm_backward(dx, p.ln2_gain, c.ln2, g.ln2_gain, g.ln2_bias);
    g.ffn_out_weight.noalias() += c.ffn_act.transpose() * dres2;
    g.ffn_out_bias += dres2.colwise().sum();
    Matrix<T> dact = dres2 * p.ffn_out_weight.transpose();
    Matrix<T> dpre = dact.cwiseProduct(c.ffn_pre.unaryExpr([](T v) { return gelu_grad(v); }));
    g.ffn_in_weight.noalias() += c.hidden.transpose() * dpre;
    g.ffn_in_bias += dpre.colwise().sum();
    Matrix<T> dhidden = dres2 + dpre * p.ffn_in_weight.transpose();

    Matrix<T> dres1 = layer_norm_backward(dhidden, p.ln1_gain, c.ln1, g.ln1_gain, g.ln1_bias);
    g.output_weight.noalias() += c.context.transpose() * dres1;
    g.output_bias += dres1.colwise().sum();
    Matrix<T> dcontext = dres1 * p.output_weight.transpose();

    Matrix<T> dq = Matrix<T>::Zero(rows, d);
    Matrix<T> dk = Matrix<T>::Zero(rows, d);
    Matrix<T> dv = Matrix<T>::Zero(rows, d);
    for (std::size_t s = 0; s < n; ++s) {
      const auto base = static_cast<Eigen::Index>(s * t);
      for (std::size_t h = 0; h < heads; ++h) {
        const auto col = static_cast<Eigen::Index>(h) * dh;
        const Matrix<T>& a = c.probs[s * heads + h];
        const auto dctx = dcontext.block(base, col, tt, dh);
        Matrix<T> da = dctx * c.value.block(base, col, tt, dh).transpose();
        dv.block(base, col, tt, dh).noalias() += a.transpose() * dctx;
        // softmax backward; masked entries have a == 0 and drop out
        Matrix<T> ds = a.cwiseProduct((da.colwise() - da.cwiseProduct(a).rowwise().sum()));
        ds *= scale;
        dq.block(base, col, tt, dh).noalias() += ds * c.key.block(base, col, tt, dh);
        dk.block(base, col, tt, dh).noalias() += ds.transpose() * c.query.block(base, col, tt, dh);
      }
    }
    g.query_weight.noalias() += c.input.transpose() * dq;
    g.key_weight.noalias() += c.input.transpose() * dk;
    g.value_weight.noalias() += c.input.transpose() * dv;
    g.query_bias += dq.colwise().sum();
    g.key_bias += dk.colwise().sum();
    g.value_bias += dv.colwise().sum();
    dx = dres1;
    dx.noalias() += dq * p.query_weight.transpose();
    dx.noalias() += dk * p.key_weight.transpose();
    dx.noalias() += dv * p.value_weight.transpose();
  }

  for (std::size_t r = 0; r < n * t; ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    grads.token_embeddings.row(pass.batch.ids[r]) += dx.row(row);
    grads.position_embeddings.row(static_cast<Eigen::Index>(r % t)) += dx.row(row);
    grads.segment_embeddings.row(pass.batch.segments[r]) += dx.row(row);
  }
}

template <typename T>
EncoderParams<T> backward(const EncoderParams<T>& params, const EncoderConfig& cfg, const ForwardPass<T>& pass,
                          const Upstream<T>& up) {
  auto grads = EncoderParams<T>::zeros(cfg);
  backward_into(params, cfg, pass, up, grads);
  return grads;
}

}  // namespace mucot
