#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dynaslice/errors.hpp"
#include "dynaslice/matrix.hpp"
#include "dynaslice/rng.hpp"

namespace dynaslice {

constexpr double kRmsNormEps = 1e-6;

struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t vocab_size = 256;
  std::size_t max_seq = 256;

  std::size_t head_dim() const { return d_model / n_heads; }

  // n_layers = 0 is a valid degenerate depth (embedding straight into the
  // head); every other count must be positive.
  void validate() const {
    if (d_model == 0 || n_heads == 0 || d_ff == 0 || vocab_size == 0 ||
        max_seq == 0)
      throw precondition_error("config: all dimensions must be >= 1");
    if (d_model % n_heads != 0)
      throw precondition_error(
          "config: d_model=" + std::to_string(d_model) +
          " not divisible by n_heads=" + std::to_string(n_heads));
  }
};

// One pre-norm decoder block. Weight shapes on the dense model:
//   w_q/w_k/w_v/w_o: d x d, w_up: d x d_ff, w_down: d_ff x d, gains: d.
struct BlockWeights {
  Vec attn_norm_gain;
  Matrix w_q, w_k, w_v, w_o;
  Vec mlp_norm_gain;
  Matrix w_up, w_down;
};

struct TransformerModel {
  ModelConfig config;
  Matrix token_embedding;  // vocab x d
  std::vector<BlockWeights> blocks;
  Vec final_norm_gain;  // d
  Matrix lm_head;       // d x vocab
};

// Residual-stream snapshots around each block, one row per token.
struct HiddenTrace {
  std::vector<Matrix> block_input;
  std::vector<Matrix> block_output;
};

namespace detail {

// RMS over `norm_width` entries; on sliced models norm_width stays at the
// pre-slice d_model so the full-rank case reproduces the source exactly.
inline void rmsnorm_rows(Matrix& x, const Vec* gain, std::size_t norm_width) {
  for (std::size_t t = 0; t < x.rows; ++t) {
    double* row = x.row_ptr(t);
    double sum_sq = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) sum_sq += row[j] * row[j];
    const double inv_rms =
        1.0 / std::sqrt(sum_sq / static_cast<double>(norm_width) + kRmsNormEps);
    if (gain) {
      for (std::size_t j = 0; j < x.cols; ++j) row[j] *= inv_rms * (*gain)[j];
    } else {
      for (std::size_t j = 0; j < x.cols; ++j) row[j] *= inv_rms;
    }
  }
}

// Rotary position embedding, applied in place per head. Pairs (2i, 2i+1)
// inside each head rotate by pos * base^(-2i/head_dim).
inline void rope_rows(Matrix& x, std::size_t n_heads, std::size_t head_dim,
                      bool inverse = false) {
  const std::size_t half = head_dim / 2;
  for (std::size_t t = 0; t < x.rows; ++t) {
    double* row = x.row_ptr(t);
    const double pos = static_cast<double>(t);
    for (std::size_t h = 0; h < n_heads; ++h) {
      double* head = row + h * head_dim;
      for (std::size_t i = 0; i < half; ++i) {
        const double freq =
            std::pow(10000.0, -2.0 * static_cast<double>(i) /
                                  static_cast<double>(head_dim));
        double angle = pos * freq;
        if (inverse) angle = -angle;
        const double c = std::cos(angle);
        const double s = std::sin(angle);
        const double a = head[2 * i];
        const double b = head[2 * i + 1];
        head[2 * i] = a * c - b * s;
        head[2 * i + 1] = a * s + b * c;
      }
    }
  }
}

// Causal attention over already-projected q/k/v (tokens x d). Softmax and
// context accumulation run in double; probabilities are exact softmax.
inline Matrix causal_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                               std::size_t n_heads) {
  const std::size_t tokens = q.rows;
  const std::size_t d = q.cols;
  const std::size_t head_dim = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Matrix ctx(tokens, d);
  std::vector<double> scores;
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t off = h * head_dim;
    for (std::size_t t = 0; t < tokens; ++t) {
      scores.assign(t + 1, 0.0);
      const double* qrow = q.row_ptr(t) + off;
      double max_score = -1e300;
      for (std::size_t u = 0; u <= t; ++u) {
        const double* krow = k.row_ptr(u) + off;
        double dot = 0.0;
        for (std::size_t j = 0; j < head_dim; ++j) dot += qrow[j] * krow[j];
        scores[u] = dot * scale;
        max_score = std::max(max_score, scores[u]);
      }
      double denom = 0.0;
      for (std::size_t u = 0; u <= t; ++u) {
        scores[u] = std::exp(scores[u] - max_score);
        denom += scores[u];
      }
      double* crow = ctx.row_ptr(t) + off;
      for (std::size_t u = 0; u <= t; ++u) {
        const double p = scores[u] / denom;
        const double* vrow = v.row_ptr(u) + off;
        for (std::size_t j = 0; j < head_dim; ++j) crow[j] += p * vrow[j];
      }
    }
  }
  return ctx;
}

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

inline Matrix embed_tokens(const Matrix& embedding, const std::vector<int>& tokens,
                           std::size_t vocab_size) {
  Matrix x(tokens.size(), embedding.cols);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] < 0 || static_cast<std::size_t>(tokens[t]) >= vocab_size)
      throw precondition_error("forward: token id " + std::to_string(tokens[t]) +
                               " outside vocab");
    const double* src = embedding.row_ptr(static_cast<std::size_t>(tokens[t]));
    double* dst = x.row_ptr(t);
    for (std::size_t j = 0; j < embedding.cols; ++j) dst[j] = src[j];
  }
  return x;
}

}  // namespace detail

// Full forward pass: pre-norm blocks h += Attn(RMSNorm(h)); h += MLP(RMSNorm(h)),
// then final norm and lm_head. When `trace` is given, the residual stream is
// captured before and after each block; tracing never perturbs the logits.
inline Matrix forward(const TransformerModel& model, const std::vector<int>& tokens,
                      HiddenTrace* trace = nullptr) {
  const ModelConfig& cfg = model.config;
  if (tokens.size() > cfg.max_seq)
    throw precondition_error("forward: sequence of " +
                             std::to_string(tokens.size()) +
                             " tokens exceeds max_seq=" + std::to_string(cfg.max_seq));

  Matrix x = detail::embed_tokens(model.token_embedding, tokens, cfg.vocab_size);

  if (trace) {
    trace->block_input.clear();
    trace->block_output.clear();
    trace->block_input.reserve(cfg.n_layers);
    trace->block_output.reserve(cfg.n_layers);
  }

  for (const BlockWeights& blk : model.blocks) {
    if (trace) trace->block_input.push_back(x);

    Matrix normed = x;
    detail::rmsnorm_rows(normed, &blk.attn_norm_gain, cfg.d_model);
    Matrix q = matmul(normed, blk.w_q);
    Matrix k = matmul(normed, blk.w_k);
    Matrix v = matmul(normed, blk.w_v);
    detail::rope_rows(q, cfg.n_heads, cfg.head_dim());
    detail::rope_rows(k, cfg.n_heads, cfg.head_dim());
    Matrix ctx = detail::causal_attention(q, k, v, cfg.n_heads);
    Matrix attn_out = matmul(ctx, blk.w_o);
    for (std::size_t i = 0; i < x.size(); ++i) x.data[i] += attn_out.data[i];

    Matrix normed2 = x;
    detail::rmsnorm_rows(normed2, &blk.mlp_norm_gain, cfg.d_model);
    Matrix up = matmul(normed2, blk.w_up);
    for (double& u : up.data) u = detail::silu(u);
    Matrix down = matmul(up, blk.w_down);
    for (std::size_t i = 0; i < x.size(); ++i) x.data[i] += down.data[i];

    if (trace) trace->block_output.push_back(x);
  }

  detail::rmsnorm_rows(x, &model.final_norm_gain, cfg.d_model);
  return matmul(x, model.lm_head);
}

namespace detail {

// Gaussian init quantized through f32 so the container round-trips a freshly
// initialized model bit for bit.
inline void fill_gaussian_f32(Matrix& m, Rng& rng, double stddev) {
  for (double& v : m.data)
    v = static_cast<double>(static_cast<float>(rng.normal() * stddev));
}

}  // namespace detail

inline TransformerModel init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  TransformerModel m;
  m.config = cfg;

  const double d = static_cast<double>(cfg.d_model);
  const double resid_scale =
      1.0 / std::sqrt(2.0 * static_cast<double>(std::max<std::size_t>(cfg.n_layers, 1)));

  m.token_embedding = Matrix(cfg.vocab_size, cfg.d_model);
  detail::fill_gaussian_f32(m.token_embedding, rng, 0.1);

  m.blocks.resize(cfg.n_layers);
  for (BlockWeights& blk : m.blocks) {
    blk.attn_norm_gain.assign(cfg.d_model, 1.0);
    blk.mlp_norm_gain.assign(cfg.d_model, 1.0);
    blk.w_q = Matrix(cfg.d_model, cfg.d_model);
    blk.w_k = Matrix(cfg.d_model, cfg.d_model);
    blk.w_v = Matrix(cfg.d_model, cfg.d_model);
    blk.w_o = Matrix(cfg.d_model, cfg.d_model);
    blk.w_up = Matrix(cfg.d_model, cfg.d_ff);
    blk.w_down = Matrix(cfg.d_ff, cfg.d_model);
    detail::fill_gaussian_f32(blk.w_q, rng, 1.0 / std::sqrt(d));
    detail::fill_gaussian_f32(blk.w_k, rng, 1.0 / std::sqrt(d));
    detail::fill_gaussian_f32(blk.w_v, rng, 1.0 / std::sqrt(d));
    detail::fill_gaussian_f32(blk.w_o, rng, resid_scale / std::sqrt(d));
    detail::fill_gaussian_f32(blk.w_up, rng, 1.0 / std::sqrt(d));
    detail::fill_gaussian_f32(blk.w_down, rng,
                              resid_scale / std::sqrt(static_cast<double>(cfg.d_ff)));
  }

  m.final_norm_gain.assign(cfg.d_model, 1.0);
  m.lm_head = Matrix(cfg.d_model, cfg.vocab_size);
  detail::fill_gaussian_f32(m.lm_head, rng, 1.0 / std::sqrt(d));
  return m;
}

}  // namespace dynaslice
