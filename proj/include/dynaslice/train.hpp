#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dynaslice/model.hpp"

namespace dynaslice {

struct TrainParams {
  std::size_t steps = 200;
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  std::size_t seq_len = 64;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
};

struct TrainStats {
  std::vector<double> step_losses;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

// Gradient buffers mirroring TransformerModel tensor for tensor.
struct ModelGrads {
  Matrix token_embedding;
  struct BlockGrads {
    Vec attn_norm_gain;
    Matrix w_q, w_k, w_v, w_o;
    Vec mlp_norm_gain;
    Matrix w_up, w_down;
  };
  std::vector<BlockGrads> blocks;
  Vec final_norm_gain;
  Matrix lm_head;
};

inline ModelGrads make_grads(const ModelConfig& cfg) {
  ModelGrads g;
  g.token_embedding = Matrix(cfg.vocab_size, cfg.d_model);
  g.blocks.resize(cfg.n_layers);
  for (auto& blk : g.blocks) {
    blk.attn_norm_gain.assign(cfg.d_model, 0.0);
    blk.w_q = Matrix(cfg.d_model, cfg.d_model);
    blk.w_k = Matrix(cfg.d_model, cfg.d_model);
    blk.w_v = Matrix(cfg.d_model, cfg.d_model);
    blk.w_o = Matrix(cfg.d_model, cfg.d_model);
    blk.mlp_norm_gain.assign(cfg.d_model, 0.0);
    blk.w_up = Matrix(cfg.d_model, cfg.d_ff);
    blk.w_down = Matrix(cfg.d_ff, cfg.d_model);
  }
  g.final_norm_gain.assign(cfg.d_model, 0.0);
  g.lm_head = Matrix(cfg.d_model, cfg.vocab_size);
  return g;
}

// Flat views over every parameter tensor in a canonical order; the same
// order holds for a model and its gradient mirror, which is what the Adam
// loop and the finite-difference checks iterate over.
inline std::vector<std::span<double>> param_views(TransformerModel& m) {
  std::vector<std::span<double>> v;
  v.emplace_back(m.token_embedding.data);
  for (auto& blk : m.blocks) {
    v.emplace_back(blk.attn_norm_gain);
    v.emplace_back(blk.w_q.data);
    v.emplace_back(blk.w_k.data);
    v.emplace_back(blk.w_v.data);
    v.emplace_back(blk.w_o.data);
    v.emplace_back(blk.mlp_norm_gain);
    v.emplace_back(blk.w_up.data);
    v.emplace_back(blk.w_down.data);
  }
  v.emplace_back(m.final_norm_gain);
  v.emplace_back(m.lm_head.data);
  return v;
}

inline std::vector<std::span<double>> grad_views(ModelGrads& g) {
  std::vector<std::span<double>> v;
  v.emplace_back(g.token_embedding.data);
  for (auto& blk : g.blocks) {
    v.emplace_back(blk.attn_norm_gain);
    v.emplace_back(blk.w_q.data);
    v.emplace_back(blk.w_k.data);
    v.emplace_back(blk.w_v.data);
    v.emplace_back(blk.w_o.data);
    v.emplace_back(blk.mlp_norm_gain);
    v.emplace_back(blk.w_up.data);
    v.emplace_back(blk.w_down.data);
  }
  v.emplace_back(g.final_norm_gain);
  v.emplace_back(g.lm_head.data);
  return v;
}

namespace detail {

struct NormCache {
  Matrix input;    // rows fed into the norm
  Vec inv_rms;     // per row
};

struct BlockCache {
  NormCache norm1;
  Matrix q_rot, k_rot, v;          // post-rope projections
  std::vector<Matrix> probs;       // per head, (t+1)-wide causal softmax rows
  Matrix ctx;                      // concatenated heads
  NormCache norm2;
  Matrix up;                       // pre-activation
  Matrix act;                      // silu(up)
};

struct ForwardCache {
  Matrix x0;
  std::vector<BlockCache> blocks;
  NormCache final_norm;
  Matrix normed_final;             // post final norm+gain, feeds lm_head
};

inline Matrix rmsnorm_cached(const Matrix& x, const Vec& gain, std::size_t width,
                             NormCache& cache) {
  cache.input = x;
  cache.inv_rms.assign(x.rows, 0.0);
  Matrix out(x.rows, x.cols);
  for (std::size_t t = 0; t < x.rows; ++t) {
    const double* row = x.row_ptr(t);
    double sum_sq = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) sum_sq += row[j] * row[j];
    const double inv_rms =
        1.0 / std::sqrt(sum_sq / static_cast<double>(width) + kRmsNormEps);
    cache.inv_rms[t] = inv_rms;
    double* orow = out.row_ptr(t);
    for (std::size_t j = 0; j < x.cols; ++j) orow[j] = row[j] * inv_rms * gain[j];
  }
  return out;
}

// dL/d(input) and dL/d(gain) for y = gain (.) x * inv_rms(x).
inline Matrix rmsnorm_backward(const Matrix& d_out, const NormCache& cache,
                               const Vec& gain, std::size_t width, Vec& d_gain) {
  const Matrix& x = cache.input;
  Matrix dx(x.rows, x.cols);
  for (std::size_t t = 0; t < x.rows; ++t) {
    const double* xrow = x.row_ptr(t);
    const double* dorow = d_out.row_ptr(t);
    double* dxrow = dx.row_ptr(t);
    const double inv_rms = cache.inv_rms[t];
    double dot = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) {
      const double dn = dorow[j] * gain[j];
      d_gain[j] += dorow[j] * xrow[j] * inv_rms;
      dot += dn * xrow[j];
      dxrow[j] = dn * inv_rms;
    }
    const double coeff =
        dot * inv_rms * inv_rms * inv_rms / static_cast<double>(width);
    for (std::size_t j = 0; j < x.cols; ++j) dxrow[j] -= xrow[j] * coeff;
  }
  return dx;
}

// Forward pass retaining every intermediate the backward pass needs.
// Returns logits.
inline Matrix forward_cached(const TransformerModel& model,
                             const std::vector<int>& tokens, ForwardCache& cache) {
  const ModelConfig& cfg = model.config;
  const std::size_t head_dim = cfg.head_dim();

  cache.x0 = embed_tokens(model.token_embedding, tokens, cfg.vocab_size);
  cache.blocks.assign(cfg.n_layers, BlockCache{});

  Matrix x = cache.x0;
  for (std::size_t b = 0; b < cfg.n_layers; ++b) {
    const BlockWeights& blk = model.blocks[b];
    BlockCache& bc = cache.blocks[b];

    Matrix normed = rmsnorm_cached(x, blk.attn_norm_gain, cfg.d_model, bc.norm1);
    bc.q_rot = matmul(normed, blk.w_q);
    bc.k_rot = matmul(normed, blk.w_k);
    bc.v = matmul(normed, blk.w_v);
    rope_rows(bc.q_rot, cfg.n_heads, head_dim);
    rope_rows(bc.k_rot, cfg.n_heads, head_dim);

    const std::size_t tokens_n = x.rows;
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    bc.ctx = Matrix(tokens_n, cfg.d_model);
    bc.probs.assign(cfg.n_heads, Matrix());
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      const std::size_t off = h * head_dim;
      Matrix& p = bc.probs[h];
      p = Matrix(tokens_n, tokens_n);
      for (std::size_t t = 0; t < tokens_n; ++t) {
        double max_score = -1e300;
        for (std::size_t u = 0; u <= t; ++u) {
          double dot = 0.0;
          const double* qrow = bc.q_rot.row_ptr(t) + off;
          const double* krow = bc.k_rot.row_ptr(u) + off;
          for (std::size_t j = 0; j < head_dim; ++j) dot += qrow[j] * krow[j];
          p(t, u) = dot * scale;
          max_score = std::max(max_score, p(t, u));
        }
        double denom = 0.0;
        for (std::size_t u = 0; u <= t; ++u) {
          p(t, u) = std::exp(p(t, u) - max_score);
          denom += p(t, u);
        }
        double* crow = bc.ctx.row_ptr(t) + off;
        for (std::size_t u = 0; u <= t; ++u) {
          p(t, u) /= denom;
          const double* vrow = bc.v.row_ptr(u) + off;
          for (std::size_t j = 0; j < head_dim; ++j) crow[j] += p(t, u) * vrow[j];
        }
      }
    }
    Matrix attn_out = matmul(bc.ctx, blk.w_o);
    for (std::size_t i = 0; i < x.size(); ++i) x.data[i] += attn_out.data[i];

    Matrix normed2 = rmsnorm_cached(x, blk.mlp_norm_gain, cfg.d_model, bc.norm2);
    bc.up = matmul(normed2, blk.w_up);
    bc.act = bc.up;
    for (double& u : bc.act.data) u = silu(u);
    Matrix down = matmul(bc.act, blk.w_down);
    for (std::size_t i = 0; i < x.size(); ++i) x.data[i] += down.data[i];
  }

  cache.normed_final =
      rmsnorm_cached(x, model.final_norm_gain, cfg.d_model, cache.final_norm);
  return matmul(cache.normed_final, model.lm_head);
}

inline void backward_cached(const TransformerModel& model, const ForwardCache& cache,
                            const std::vector<int>& tokens, const Matrix& d_logits,
                            ModelGrads& grads) {
  const ModelConfig& cfg = model.config;
  const std::size_t head_dim = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  // Head.
  Matrix d_normed_final = Matrix(d_logits.rows, cfg.d_model);
  {
    Matrix d_head = matmul_transposed_a(cache.normed_final, d_logits);
    for (std::size_t i = 0; i < d_head.size(); ++i)
      grads.lm_head.data[i] += d_head.data[i];
    Matrix head_t = transpose(model.lm_head);
    d_normed_final = matmul(d_logits, head_t);
  }
  Matrix dx = rmsnorm_backward(d_normed_final, cache.final_norm,
                               model.final_norm_gain, cfg.d_model,
                               grads.final_norm_gain);

  for (std::size_t bi = cfg.n_layers; bi-- > 0;) {
    const BlockWeights& blk = model.blocks[bi];
    const BlockCache& bc = cache.blocks[bi];
    ModelGrads::BlockGrads& bg = grads.blocks[bi];
    const std::size_t tokens_n = dx.rows;

    // MLP: x_out = mlp_in + silu(norm2(mlp_in) Wup) Wdown
    {
      const Matrix& d_down_out = dx;  // gradient on the Wdown product
      Matrix d_wdown = matmul_transposed_a(bc.act, d_down_out);
      for (std::size_t i = 0; i < d_wdown.size(); ++i)
        bg.w_down.data[i] += d_wdown.data[i];
      Matrix d_act = matmul(d_down_out, transpose(blk.w_down));
      // silu'(u) = sig(u) (1 + u (1 - sig(u)))
      Matrix d_up = d_act;
      for (std::size_t i = 0; i < d_up.size(); ++i) {
        const double u = bc.up.data[i];
        const double sig = 1.0 / (1.0 + std::exp(-u));
        d_up.data[i] *= sig * (1.0 + u * (1.0 - sig));
      }
      Matrix normed2(tokens_n, cfg.d_model);
      for (std::size_t t = 0; t < tokens_n; ++t)
        for (std::size_t j = 0; j < cfg.d_model; ++j)
          normed2(t, j) = bc.norm2.input(t, j) * bc.norm2.inv_rms[t] *
                          blk.mlp_norm_gain[j];
      Matrix d_wup = matmul_transposed_a(normed2, d_up);
      for (std::size_t i = 0; i < d_wup.size(); ++i)
        bg.w_up.data[i] += d_wup.data[i];
      Matrix d_normed2 = matmul(d_up, transpose(blk.w_up));
      Matrix d_mlp_in = rmsnorm_backward(d_normed2, bc.norm2, blk.mlp_norm_gain,
                                         cfg.d_model, bg.mlp_norm_gain);
      for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += d_mlp_in.data[i];
    }

    // Attention: x_mid = block_in + ctx Wo
    {
      const Matrix& d_attn_out = dx;
      Matrix d_wo = matmul_transposed_a(bc.ctx, d_attn_out);
      for (std::size_t i = 0; i < d_wo.size(); ++i) bg.w_o.data[i] += d_wo.data[i];
      Matrix d_ctx = matmul(d_attn_out, transpose(blk.w_o));

      Matrix d_q_rot(tokens_n, cfg.d_model);
      Matrix d_k_rot(tokens_n, cfg.d_model);
      Matrix d_v(tokens_n, cfg.d_model);
      std::vector<double> d_p;
      for (std::size_t h = 0; h < cfg.n_heads; ++h) {
        const std::size_t off = h * head_dim;
        const Matrix& p = bc.probs[h];
        for (std::size_t t = 0; t < tokens_n; ++t) {
          const double* dcrow = d_ctx.row_ptr(t) + off;
          d_p.assign(t + 1, 0.0);
          double dot_pp = 0.0;
          for (std::size_t u = 0; u <= t; ++u) {
            const double* vrow = bc.v.row_ptr(u) + off;
            double dp = 0.0;
            for (std::size_t j = 0; j < head_dim; ++j) dp += dcrow[j] * vrow[j];
            d_p[u] = dp;
            dot_pp += dp * p(t, u);
            double* dvrow = d_v.row_ptr(u) + off;
            for (std::size_t j = 0; j < head_dim; ++j)
              dvrow[j] += p(t, u) * dcrow[j];
          }
          // softmax backward then score backward in one pass
          const double* qrow = bc.q_rot.row_ptr(t) + off;
          double* dqrow = d_q_rot.row_ptr(t) + off;
          for (std::size_t u = 0; u <= t; ++u) {
            const double ds = p(t, u) * (d_p[u] - dot_pp) * scale;
            if (ds == 0.0) continue;
            const double* krow = bc.k_rot.row_ptr(u) + off;
            double* dkrow = d_k_rot.row_ptr(u) + off;
            for (std::size_t j = 0; j < head_dim; ++j) {
              dqrow[j] += ds * krow[j];
              dkrow[j] += ds * qrow[j];
            }
          }
        }
      }
      // Transpose of the rope rotation is the rotation by -angle.
      rope_rows(d_q_rot, cfg.n_heads, head_dim, /*inverse=*/true);
      rope_rows(d_k_rot, cfg.n_heads, head_dim, /*inverse=*/true);

      Matrix normed1(tokens_n, cfg.d_model);
      for (std::size_t t = 0; t < tokens_n; ++t)
        for (std::size_t j = 0; j < cfg.d_model; ++j)
          normed1(t, j) = bc.norm1.input(t, j) * bc.norm1.inv_rms[t] *
                          blk.attn_norm_gain[j];

      Matrix d_wq = matmul_transposed_a(normed1, d_q_rot);
      Matrix d_wk = matmul_transposed_a(normed1, d_k_rot);
      Matrix d_wv = matmul_transposed_a(normed1, d_v);
      for (std::size_t i = 0; i < d_wq.size(); ++i) {
        bg.w_q.data[i] += d_wq.data[i];
        bg.w_k.data[i] += d_wk.data[i];
        bg.w_v.data[i] += d_wv.data[i];
      }
      Matrix d_normed1 = matmul(d_q_rot, transpose(blk.w_q));
      Matrix d_k_in = matmul(d_k_rot, transpose(blk.w_k));
      Matrix d_v_in = matmul(d_v, transpose(blk.w_v));
      for (std::size_t i = 0; i < d_normed1.size(); ++i)
        d_normed1.data[i] += d_k_in.data[i] + d_v_in.data[i];
      Matrix d_block_in = rmsnorm_backward(d_normed1, bc.norm1, blk.attn_norm_gain,
                                           cfg.d_model, bg.attn_norm_gain);
      for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += d_block_in.data[i];
    }
  }

  for (std::size_t t = 0; t < tokens.size(); ++t) {
    double* erow = grads.token_embedding.row_ptr(static_cast<std::size_t>(tokens[t]));
    const double* dxrow = dx.row_ptr(t);
    for (std::size_t j = 0; j < cfg.d_model; ++j) erow[j] += dxrow[j];
  }
}

}  // namespace detail

// Mean next-token cross-entropy (natural log) over the batch, with gradients
// accumulated into `grads` when non-null. Each sequence contributes
// positions 0..len-2 predicting 1..len-1.
inline double loss_and_gradients(const TransformerModel& model,
                                 const std::vector<std::vector<int>>& sequences,
                                 ModelGrads* grads) {
  std::size_t total_targets = 0;
  for (const auto& seq : sequences) {
    if (seq.size() < 2)
      throw precondition_error("loss: sequences need at least 2 tokens");
    total_targets += seq.size() - 1;
  }

  double total_nll = 0.0;
  for (const auto& seq : sequences) {
    detail::ForwardCache cache;
    Matrix logits = grads ? detail::forward_cached(model, seq, cache)
                          : forward(model, seq);
    const std::size_t vocab = model.config.vocab_size;
    Matrix d_logits(logits.rows, logits.cols);
    for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
      const double* row = logits.row_ptr(t);
      double max_logit = row[0];
      for (std::size_t j = 1; j < vocab; ++j) max_logit = std::max(max_logit, row[j]);
      double denom = 0.0;
      for (std::size_t j = 0; j < vocab; ++j) denom += std::exp(row[j] - max_logit);
      const double lse = max_logit + std::log(denom);
      const int target = seq[t + 1];
      total_nll += lse - row[static_cast<std::size_t>(target)];
      if (grads) {
        double* drow = d_logits.row_ptr(t);
        const double inv_n = 1.0 / static_cast<double>(total_targets);
        for (std::size_t j = 0; j < vocab; ++j)
          drow[j] = std::exp(row[j] - lse) * inv_n;
        drow[static_cast<std::size_t>(target)] -= inv_n;
      }
    }
    if (grads) detail::backward_cached(model, cache, seq, d_logits, *grads);
  }
  return total_nll / static_cast<double>(total_targets);
}

// Adam training loop on next-token prediction. Windows are drawn with the
// given seed, so a run is reproducible end to end.
inline TrainStats train_toy(TransformerModel& model, const std::vector<int>& corpus,
                            const TrainParams& params) {
  if (corpus.size() < 2)
    throw precondition_error("train_toy: corpus must yield at least 2 tokens");

  const std::size_t seq_len =
      std::min({params.seq_len, model.config.max_seq, corpus.size() - 1});

  Rng rng(params.seed);
  ModelGrads grads = make_grads(model.config);
  ModelGrads m_state = make_grads(model.config);
  ModelGrads v_state = make_grads(model.config);
  auto params_v = param_views(model);
  auto grads_v = grad_views(grads);
  auto m_v = grad_views(m_state);
  auto v_v = grad_views(v_state);

  TrainStats stats;
  stats.step_losses.reserve(params.steps);

  for (std::size_t step = 0; step < params.steps; ++step) {
    std::vector<std::vector<int>> batch(params.batch_size);
    for (auto& seq : batch) {
      const std::size_t start = rng.index(corpus.size() - seq_len);
      seq.assign(corpus.begin() + static_cast<std::ptrdiff_t>(start),
                 corpus.begin() + static_cast<std::ptrdiff_t>(start + seq_len + 1));
    }

    for (auto& g : grads_v)
      for (double& x : g) x = 0.0;
    const double loss = loss_and_gradients(model, batch, &grads);
    if (!std::isfinite(loss))
      throw training_error("non-finite loss at step " + std::to_string(step));
    stats.step_losses.push_back(loss);

    const double t = static_cast<double>(step + 1);
    const double bias1 = 1.0 - std::pow(params.beta1, t);
    const double bias2 = 1.0 - std::pow(params.beta2, t);
    for (std::size_t vi = 0; vi < params_v.size(); ++vi) {
      std::span<double> w = params_v[vi];
      std::span<double> g = grads_v[vi];
      std::span<double> m = m_v[vi];
      std::span<double> v2 = v_v[vi];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = params.beta1 * m[i] + (1.0 - params.beta1) * g[i];
        v2[i] = params.beta2 * v2[i] + (1.0 - params.beta2) * g[i] * g[i];
        const double m_hat = m[i] / bias1;
        const double v_hat = v2[i] / bias2;
        w[i] -= params.learning_rate * m_hat / (std::sqrt(v_hat) + params.adam_eps);
      }
    }
  }

  stats.initial_loss = stats.step_losses.empty() ? 0.0 : stats.step_losses.front();
  stats.final_loss = stats.step_losses.empty() ? 0.0 : stats.step_losses.back();
  return stats;
}

}  // namespace dynaslice
