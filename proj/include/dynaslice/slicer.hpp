#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "dynaslice/container.hpp"
#include "dynaslice/eig.hpp"
#include "dynaslice/model.hpp"
#include "dynaslice/profile.hpp"
#include "dynaslice/schedule.hpp"

namespace dynaslice {

// A block whose residual stream lives in a k-dimensional rotated subspace.
// Input-side weights carry P^T folded in (P = first k eigenvector columns),
// output-side weights carry P; attention heads keep their full width, only
// the residual side is truncated.
struct SlicedBlock {
  std::size_t width = 0;  // k_i
  Vec attn_norm_gain;     // k_i, ones after absorption
  Matrix w_q, w_k, w_v;   // k_i x d
  Matrix w_o;             // d x k_i
  Vec mlp_norm_gain;      // k_i
  Matrix w_up;            // k_i x d_ff
  Matrix w_down;          // d_ff x k_i
};

struct SlicedModel {
  ModelConfig config;  // pre-slice dimensions
  std::vector<std::size_t> block_widths;
  Matrix token_embedding;      // vocab x d, untouched
  Matrix embedding_projector;  // d x k_1
  std::vector<SlicedBlock> blocks;
  std::vector<Matrix> adapters;  // boundary i -> i+1: k_i x k_{i+1}
  Matrix head_reconstructor;     // k_n x d
  Vec final_norm_gain;           // d
  Matrix lm_head;                // d x vocab
};

// Forward pass through the truncated residual stream. RMS norms keep the
// pre-slice width as divisor, which makes the k = d case reproduce the
// source model exactly and stays the closest approximation below that.
inline Matrix forward(const SlicedModel& model, const std::vector<int>& tokens) {
  const ModelConfig& cfg = model.config;
  if (tokens.size() > cfg.max_seq)
    throw precondition_error("forward: sequence of " +
                             std::to_string(tokens.size()) +
                             " tokens exceeds max_seq=" + std::to_string(cfg.max_seq));

  Matrix x = detail::embed_tokens(model.token_embedding, tokens, cfg.vocab_size);
  x = matmul(x, model.embedding_projector);

  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    const SlicedBlock& blk = model.blocks[i];

    Matrix normed = x;
    detail::rmsnorm_rows(normed, &blk.attn_norm_gain, cfg.d_model);
    Matrix q = matmul(normed, blk.w_q);
    Matrix k = matmul(normed, blk.w_k);
    Matrix v = matmul(normed, blk.w_v);
    detail::rope_rows(q, cfg.n_heads, cfg.head_dim());
    detail::rope_rows(k, cfg.n_heads, cfg.head_dim());
    Matrix ctx = detail::causal_attention(q, k, v, cfg.n_heads);
    Matrix attn_out = matmul(ctx, blk.w_o);
    for (std::size_t j = 0; j < x.size(); ++j) x.data[j] += attn_out.data[j];

    Matrix normed2 = x;
    detail::rmsnorm_rows(normed2, &blk.mlp_norm_gain, cfg.d_model);
    Matrix up = matmul(normed2, blk.w_up);
    for (double& u : up.data) u = detail::silu(u);
    Matrix down = matmul(up, blk.w_down);
    for (std::size_t j = 0; j < x.size(); ++j) x.data[j] += down.data[j];

    if (i + 1 < model.blocks.size()) x = matmul(x, model.adapters[i]);
  }

  x = matmul(x, model.head_reconstructor);
  detail::rmsnorm_rows(x, &model.final_norm_gain, cfg.d_model);
  return matmul(x, model.lm_head);
}

// Folds every RMSNorm gain into the linear weight that consumes the normed
// activations (row scaling of w_q/w_k/w_v, w_up and lm_head), leaving all
// gains at 1. Exact in real arithmetic: RMSNorm_g(x) W = RMSNorm_1(x) diag(g) W.
inline TransformerModel absorb_norm_scales(TransformerModel model) {
  const std::size_t d = model.config.d_model;
  auto scale_rows = [](Matrix& w, const Vec& gain) {
    for (std::size_t i = 0; i < w.rows; ++i) {
      const double g = gain[i];
      if (g == 1.0) continue;
      double* row = w.row_ptr(i);
      for (std::size_t j = 0; j < w.cols; ++j) row[j] *= g;
    }
  };
  for (BlockWeights& blk : model.blocks) {
    scale_rows(blk.w_q, blk.attn_norm_gain);
    scale_rows(blk.w_k, blk.attn_norm_gain);
    scale_rows(blk.w_v, blk.attn_norm_gain);
    scale_rows(blk.w_up, blk.mlp_norm_gain);
    blk.attn_norm_gain.assign(d, 1.0);
    blk.mlp_norm_gain.assign(d, 1.0);
  }
  scale_rows(model.lm_head, model.final_norm_gain);
  model.final_norm_gain.assign(d, 1.0);
  return model;
}

// Per-layer PCA bases from the input Grams, eigenvalues descending so the
// first k columns span the top-variance subspace.
inline std::vector<EigenDecomposition> compute_rotations(const CovarianceStats& stats) {
  std::vector<EigenDecomposition> rotations;
  rotations.reserve(stats.gram.size());
  for (std::size_t i = 0; i < stats.gram.size(); ++i) {
    try {
      rotations.push_back(sym_eig(stats.gram[i]));
    } catch (const error& e) {
      throw numerical_error("layer " + std::to_string(i) + ": " + e.what());
    }
  }
  return rotations;
}

namespace detail {

inline bool gains_are_unit(const TransformerModel& model) {
  auto unit = [](const Vec& g) {
    for (double v : g)
      if (v != 1.0) return false;
    return true;
  };
  for (const BlockWeights& blk : model.blocks)
    if (!unit(blk.attn_norm_gain) || !unit(blk.mlp_norm_gain)) return false;
  return unit(model.final_norm_gain);
}

}  // namespace detail

// Applies the per-layer rotation + deletion: within block i the residual
// stream is projected onto P_i (d x k_i), adapters P_i^T P_{i+1} bridge
// consecutive blocks, and P_n^T reconstructs width d before the untouched
// final norm and head. Single-shot: rotations come from one un-sliced pass.
inline SlicedModel slice_model(const TransformerModel& model,
                               const SliceSchedule& schedule,
                               const std::vector<EigenDecomposition>& rotations) {
  const ModelConfig& cfg = model.config;
  const std::size_t n = cfg.n_layers;
  if (n == 0)
    throw precondition_error("slice_model: model has no blocks to slice");
  if (schedule.kept_dims.size() != n)
    throw precondition_error("slice_model: schedule covers " +
                             std::to_string(schedule.kept_dims.size()) +
                             " blocks, model has " + std::to_string(n));
  if (rotations.size() != n)
    throw precondition_error("slice_model: " + std::to_string(rotations.size()) +
                             " rotations for " + std::to_string(n) + " blocks");
  if (!detail::gains_are_unit(model))
    throw precondition_error(
        "slice_model: norm gains must be absorbed first (absorb_norm_scales)");

  std::vector<Matrix> projectors(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = schedule.kept_dims[i];
    if (k < 1 || k > cfg.d_model)
      throw precondition_error("slice_model: kept width " + std::to_string(k) +
                               " out of range for block " + std::to_string(i));
    if (rotations[i].eigenvectors.rows != cfg.d_model)
      throw precondition_error("slice_model: rotation " + std::to_string(i) +
                               " has width " +
                               std::to_string(rotations[i].eigenvectors.rows) +
                               ", expected " + std::to_string(cfg.d_model));
    projectors[i] = take_columns(rotations[i].eigenvectors, k);
  }

  SlicedModel out;
  out.config = cfg;
  out.block_widths = schedule.kept_dims;
  out.token_embedding = model.token_embedding;
  out.embedding_projector = projectors[0];
  out.final_norm_gain = model.final_norm_gain;
  out.lm_head = model.lm_head;

  out.blocks.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const BlockWeights& src = model.blocks[i];
    SlicedBlock& dst = out.blocks[i];
    const Matrix& p = projectors[i];
    dst.width = schedule.kept_dims[i];
    dst.attn_norm_gain.assign(dst.width, 1.0);
    dst.mlp_norm_gain.assign(dst.width, 1.0);
    dst.w_q = matmul_transposed_a(p, src.w_q);
    dst.w_k = matmul_transposed_a(p, src.w_k);
    dst.w_v = matmul_transposed_a(p, src.w_v);
    dst.w_up = matmul_transposed_a(p, src.w_up);
    dst.w_o = matmul(src.w_o, p);
    dst.w_down = matmul(src.w_down, p);
  }

  out.adapters.resize(n >= 1 ? n - 1 : 0);
  for (std::size_t i = 0; i + 1 < n; ++i)
    out.adapters[i] = matmul_transposed_a(projectors[i], projectors[i + 1]);
  out.head_reconstructor = transpose(projectors[n - 1]);
  return out;
}

struct ParamCount {
  std::size_t total = 0;
  std::vector<std::size_t> per_block;
};

inline ParamCount count_parameters(const TransformerModel& model) {
  ParamCount c;
  c.total += model.token_embedding.size();
  for (const BlockWeights& blk : model.blocks) {
    const std::size_t b = blk.attn_norm_gain.size() + blk.w_q.size() +
                          blk.w_k.size() + blk.w_v.size() + blk.w_o.size() +
                          blk.mlp_norm_gain.size() + blk.w_up.size() +
                          blk.w_down.size();
    c.per_block.push_back(b);
    c.total += b;
  }
  c.total += model.final_norm_gain.size();
  c.total += model.lm_head.size();
  return c;
}

inline ParamCount count_parameters(const SlicedModel& model) {
  ParamCount c;
  c.total += model.token_embedding.size();
  c.total += model.embedding_projector.size();
  for (const SlicedBlock& blk : model.blocks) {
    const std::size_t b = blk.attn_norm_gain.size() + blk.w_q.size() +
                          blk.w_k.size() + blk.w_v.size() + blk.w_o.size() +
                          blk.mlp_norm_gain.size() + blk.w_up.size() +
                          blk.w_down.size();
    c.per_block.push_back(b);
    c.total += b;
  }
  for (const Matrix& a : model.adapters) c.total += a.size();
  c.total += model.head_reconstructor.size();
  c.total += model.final_norm_gain.size();
  c.total += model.lm_head.size();
  return c;
}

inline double pruned_fraction(std::size_t reference_total, std::size_t total) {
  return 1.0 - static_cast<double>(total) / static_cast<double>(reference_total);
}

struct DropReport {
  std::vector<std::size_t> dropped_layers;    // original indices, ascending
  double block_param_pruned_fraction = 0.0;   // count / n, exact
  double total_param_pruned_fraction = 0.0;   // against the full source model
};

// Whole-layer removal baseline: deletes the `count` most redundant blocks
// (highest normalized LR; ties resolved toward the earlier block) and keeps
// the rest in order.
inline TransformerModel drop_layers_baseline(const TransformerModel& model,
                                             const LayerProfile& profile,
                                             std::size_t count,
                                             DropReport* report = nullptr) {
  const std::size_t n = model.config.n_layers;
  if (count >= n)
    throw precondition_error("drop_layers_baseline: count " +
                             std::to_string(count) + " must be < n_layers " +
                             std::to_string(n));
  if (profile.normalized_lr.size() != n)
    throw precondition_error("drop_layers_baseline: profile covers " +
                             std::to_string(profile.normalized_lr.size()) +
                             " layers, model has " + std::to_string(n));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return profile.normalized_lr[a] > profile.normalized_lr[b];
  });
  std::vector<bool> dropped(n, false);
  for (std::size_t i = 0; i < count; ++i) dropped[order[i]] = true;

  TransformerModel out;
  out.config = model.config;
  out.config.n_layers = n - count;
  out.token_embedding = model.token_embedding;
  out.final_norm_gain = model.final_norm_gain;
  out.lm_head = model.lm_head;
  for (std::size_t i = 0; i < n; ++i)
    if (!dropped[i]) out.blocks.push_back(model.blocks[i]);

  if (report) {
    report->dropped_layers.clear();
    for (std::size_t i = 0; i < n; ++i)
      if (dropped[i]) report->dropped_layers.push_back(i);
    report->block_param_pruned_fraction =
        static_cast<double>(count) / static_cast<double>(n);
    report->total_param_pruned_fraction =
        pruned_fraction(count_parameters(model).total, count_parameters(out).total);
  }
  return out;
}

// Sliced-model container IO; same manifest/blob format with the extra
// tensors and per-block widths recorded in the manifest.
inline void save_model(const SlicedModel& model, const std::string& base_path,
                       nlohmann::json provenance = nlohmann::json::object()) {
  detail::ContainerWriter w;
  w.add("token_embedding", model.token_embedding);
  w.add("embedding_projector", model.embedding_projector);
  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    const SlicedBlock& blk = model.blocks[i];
    w.add(detail::block_tensor(i, "attn_norm_gain"), blk.attn_norm_gain);
    w.add(detail::block_tensor(i, "w_q"), blk.w_q);
    w.add(detail::block_tensor(i, "w_k"), blk.w_k);
    w.add(detail::block_tensor(i, "w_v"), blk.w_v);
    w.add(detail::block_tensor(i, "w_o"), blk.w_o);
    w.add(detail::block_tensor(i, "mlp_norm_gain"), blk.mlp_norm_gain);
    w.add(detail::block_tensor(i, "w_up"), blk.w_up);
    w.add(detail::block_tensor(i, "w_down"), blk.w_down);
  }
  for (std::size_t i = 0; i < model.adapters.size(); ++i)
    w.add("adapters." + std::to_string(i), model.adapters[i]);
  w.add("head_reconstructor", model.head_reconstructor);
  w.add("final_norm_gain", model.final_norm_gain);
  w.add("lm_head", model.lm_head);

  nlohmann::json manifest;
  manifest["kind"] = "sliced";
  manifest["config"] = detail::config_json(model.config);
  manifest["block_widths"] = model.block_widths;
  if (!provenance.empty()) manifest["provenance"] = provenance;
  w.write(base_path, manifest);
}

inline SlicedModel load_sliced_model(const std::string& manifest_path) {
  detail::ContainerReader r(manifest_path);
  if (r.manifest().value("kind", "") != "sliced")
    throw format_error("load_sliced_model: container kind is not sliced");
  const ModelConfig cfg = detail::config_from_json(r.manifest().at("config"));
  cfg.validate();
  std::vector<std::size_t> widths;
  try {
    widths = r.manifest().at("block_widths").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("manifest block_widths: ") + e.what());
  }
  if (widths.size() != cfg.n_layers)
    throw format_error("manifest block_widths: " + std::to_string(widths.size()) +
                       " entries for " + std::to_string(cfg.n_layers) + " blocks");
  for (std::size_t k : widths)
    if (k < 1 || k > cfg.d_model)
      throw format_error("manifest block_widths: width " + std::to_string(k) +
                         " out of range");

  SlicedModel m;
  m.config = cfg;
  m.block_widths = widths;
  m.token_embedding = r.read_matrix("token_embedding", cfg.vocab_size, cfg.d_model);
  m.embedding_projector =
      r.read_matrix("embedding_projector", cfg.d_model, widths.front());
  m.blocks.resize(cfg.n_layers);
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    SlicedBlock& blk = m.blocks[i];
    const std::size_t k = widths[i];
    blk.width = k;
    blk.attn_norm_gain = r.read_vector(detail::block_tensor(i, "attn_norm_gain"), k);
    blk.w_q = r.read_matrix(detail::block_tensor(i, "w_q"), k, cfg.d_model);
    blk.w_k = r.read_matrix(detail::block_tensor(i, "w_k"), k, cfg.d_model);
    blk.w_v = r.read_matrix(detail::block_tensor(i, "w_v"), k, cfg.d_model);
    blk.w_o = r.read_matrix(detail::block_tensor(i, "w_o"), cfg.d_model, k);
    blk.mlp_norm_gain = r.read_vector(detail::block_tensor(i, "mlp_norm_gain"), k);
    blk.w_up = r.read_matrix(detail::block_tensor(i, "w_up"), k, cfg.d_ff);
    blk.w_down = r.read_matrix(detail::block_tensor(i, "w_down"), cfg.d_ff, k);
  }
  m.adapters.resize(cfg.n_layers - 1);
  for (std::size_t i = 0; i + 1 < cfg.n_layers; ++i)
    m.adapters[i] =
        r.read_matrix("adapters." + std::to_string(i), widths[i], widths[i + 1]);
  m.head_reconstructor =
      r.read_matrix("head_reconstructor", widths.back(), cfg.d_model);
  m.final_norm_gain = r.read_vector("final_norm_gain", cfg.d_model);
  m.lm_head = r.read_matrix("lm_head", cfg.d_model, cfg.vocab_size);
  return m;
}

}  // namespace dynaslice
