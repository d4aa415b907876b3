#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"

#include "dynaslice/eig.hpp"
#include "dynaslice/model.hpp"

namespace dynaslice {

// Per-layer redundancy profile: mean cosine similarity between each block's
// input and output hidden states, plus the min-max normalized form used by
// the schedule. Higher score = the block changes its input less = more
// redundant.
struct LayerProfile {
  std::vector<double> raw_lr;
  std::vector<double> normalized_lr;
  std::size_t tokens_seen = 0;
  std::string calibration_corpus_id;
  bool degenerate = false;
  std::size_t skip_tally = 0;
  // Carried so the schedule stage can discretize without reopening the model.
  std::size_t d_model = 0;
  std::string model_id;
};

// Per-layer Gram matrices of block inputs, the covariance proxies the PCA
// rotations are computed from.
struct CovarianceStats {
  std::vector<Matrix> gram;
  std::vector<std::size_t> rows_seen;
  std::string warning;
};

namespace detail {

// Accumulates per-token cosine similarities from one traced forward.
// A zero-norm hidden vector on either side skips that (layer, position)
// sample and bumps the tally.
inline void accumulate_lr(const HiddenTrace& trace, std::vector<double>& cos_sums,
                          std::vector<std::size_t>& counts, std::size_t& skips) {
  for (std::size_t layer = 0; layer < trace.block_input.size(); ++layer) {
    const Matrix& in = trace.block_input[layer];
    const Matrix& out = trace.block_output[layer];
    for (std::size_t t = 0; t < in.rows; ++t) {
      const double* irow = in.row_ptr(t);
      const double* orow = out.row_ptr(t);
      double dot = 0.0, in_sq = 0.0, out_sq = 0.0;
      for (std::size_t j = 0; j < in.cols; ++j) {
        dot += irow[j] * orow[j];
        in_sq += irow[j] * irow[j];
        out_sq += orow[j] * orow[j];
      }
      if (in_sq == 0.0 || out_sq == 0.0) {
        ++skips;
        continue;
      }
      double cosine = dot / (std::sqrt(in_sq) * std::sqrt(out_sq));
      cosine = std::min(1.0, std::max(-1.0, cosine));
      cos_sums[layer] += cosine;
      counts[layer] += 1;
    }
  }
}

inline std::vector<std::vector<int>> corpus_windows(const std::vector<int>& corpus,
                                                    std::size_t window) {
  std::vector<std::vector<int>> out;
  for (std::size_t start = 0; start < corpus.size(); start += window) {
    const std::size_t end = std::min(corpus.size(), start + window);
    out.emplace_back(corpus.begin() + static_cast<std::ptrdiff_t>(start),
                     corpus.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace detail

// Linear min-max normalization to [0,1]. An all-equal profile carries no
// ranking signal and maps to 0.5 everywhere with the degenerate flag set,
// which later collapses the schedule to constant slicing.
inline std::vector<double> normalize_lr(const std::vector<double>& raw,
                                        bool* degenerate_out = nullptr) {
  if (raw.empty()) throw precondition_error("normalize_lr: empty input");
  double lo = raw[0], hi = raw[0];
  for (double v : raw) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi - lo;
  const double tol = 1e-12 * std::max(1.0, std::max(std::abs(lo), std::abs(hi)));
  std::vector<double> out(raw.size());
  if (span <= tol) {
    for (double& v : out) v = 0.5;
    if (degenerate_out) *degenerate_out = true;
    return out;
  }
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = (raw[i] - lo) / span;
  if (degenerate_out) *degenerate_out = false;
  return out;
}

// Mean per-token input/output cosine per layer over the corpus, traced in
// non-overlapping windows of `batch_tokens` (clamped to max_seq). The mean
// is over individual token positions, so any batch partitioning yields the
// same result up to summation rounding.
inline LayerProfile profile_lr(const TransformerModel& model,
                               const std::vector<int>& corpus,
                               std::size_t batch_tokens = 0) {
  if (corpus.empty()) throw precondition_error("profile_lr: corpus is empty");
  const std::size_t n = model.config.n_layers;
  std::size_t window = batch_tokens == 0 ? model.config.max_seq : batch_tokens;
  window = std::min(window, model.config.max_seq);
  if (window == 0) throw precondition_error("profile_lr: batch size must be >= 1");

  std::vector<double> cos_sums(n, 0.0);
  std::vector<std::size_t> counts(n, 0);
  std::size_t skips = 0;
  std::size_t tokens_seen = 0;

  for (const auto& chunk : detail::corpus_windows(corpus, window)) {
    HiddenTrace trace;
    forward(model, chunk, &trace);
    detail::accumulate_lr(trace, cos_sums, counts, skips);
    tokens_seen += chunk.size();
  }

  LayerProfile profile;
  profile.raw_lr.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    profile.raw_lr[i] = counts[i] ? cos_sums[i] / static_cast<double>(counts[i]) : 0.0;
  profile.normalized_lr = normalize_lr(profile.raw_lr, &profile.degenerate);
  profile.tokens_seen = tokens_seen;
  profile.skip_tally = skips;
  profile.d_model = model.config.d_model;
  return profile;
}

// One un-sliced traced pass accumulating per-layer input Grams. Proceeds
// with a recorded warning when the corpus is shorter than d_model tokens.
inline CovarianceStats collect_covariances(const TransformerModel& model,
                                           const std::vector<int>& corpus) {
  if (corpus.empty())
    throw precondition_error("collect_covariances: corpus is empty");
  const std::size_t n = model.config.n_layers;
  const std::size_t d = model.config.d_model;

  CovarianceStats stats;
  stats.gram.assign(n, Matrix(d, d));
  stats.rows_seen.assign(n, 0);
  if (corpus.size() < d)
    stats.warning = "corpus has " + std::to_string(corpus.size()) +
                    " tokens, fewer than d_model=" + std::to_string(d) +
                    "; Gram matrices may be rank-deficient";

  for (const auto& chunk :
       detail::corpus_windows(corpus, model.config.max_seq)) {
    HiddenTrace trace;
    forward(model, chunk, &trace);
    for (std::size_t i = 0; i < n; ++i) {
      stats.gram[i] = gram_accumulate(std::move(stats.gram[i]), trace.block_input[i]);
      stats.rows_seen[i] += trace.block_input[i].rows;
    }
  }
  return stats;
}

inline nlohmann::json profile_to_json(const LayerProfile& p) {
  return {{"model_id", p.model_id},
          {"corpus_id", p.calibration_corpus_id},
          {"raw_lr", p.raw_lr},
          {"normalized_lr", p.normalized_lr},
          {"tokens_seen", p.tokens_seen},
          {"degenerate_flag", p.degenerate},
          {"skip_tally", p.skip_tally},
          {"d_model", p.d_model}};
}

inline LayerProfile profile_from_json(const nlohmann::json& j) {
  LayerProfile p;
  try {
    p.model_id = j.at("model_id").get<std::string>();
    p.calibration_corpus_id = j.at("corpus_id").get<std::string>();
    p.raw_lr = j.at("raw_lr").get<std::vector<double>>();
    p.normalized_lr = j.at("normalized_lr").get<std::vector<double>>();
    p.tokens_seen = j.at("tokens_seen").get<std::size_t>();
    p.degenerate = j.at("degenerate_flag").get<bool>();
    p.skip_tally = j.at("skip_tally").get<std::size_t>();
    p.d_model = j.at("d_model").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("profile json: ") + e.what());
  }
  return p;
}

}  // namespace dynaslice
