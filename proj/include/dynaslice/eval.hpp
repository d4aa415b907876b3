#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "dynaslice/slicer.hpp"
#include "dynaslice/tasks.hpp"
#include "dynaslice/tokenizer.hpp"

namespace dynaslice {

// Window policy recorded with every perplexity number.
inline constexpr const char* kWindowPolicy =
    "non-overlapping windows of max_seq tokens, natural-log NLL averaged over "
    "positions with preceding context";

namespace detail {

// Log-softmax NLL of `target` given one logit row.
inline double row_nll(const double* row, std::size_t vocab, int target) {
  double max_logit = row[0];
  for (std::size_t j = 1; j < vocab; ++j) max_logit = std::max(max_logit, row[j]);
  double denom = 0.0;
  for (std::size_t j = 0; j < vocab; ++j) denom += std::exp(row[j] - max_logit);
  return max_logit + std::log(denom) - row[static_cast<std::size_t>(target)];
}

}  // namespace detail

// exp(mean negative log-likelihood) over all next-token positions, scored in
// non-overlapping windows of max_seq tokens. Works on dense and sliced models.
template <typename ModelT>
double perplexity(const ModelT& model, const std::vector<int>& corpus) {
  if (corpus.size() < 2)
    throw precondition_error("perplexity: corpus must yield at least 2 tokens");
  const std::size_t window = model.config.max_seq;
  const std::size_t vocab = model.config.vocab_size;

  double total_nll = 0.0;
  std::size_t positions = 0;
  for (std::size_t start = 0; start < corpus.size(); start += window) {
    const std::size_t end = std::min(corpus.size(), start + window);
    if (end - start < 2) break;
    const std::vector<int> chunk(corpus.begin() + static_cast<std::ptrdiff_t>(start),
                                 corpus.begin() + static_cast<std::ptrdiff_t>(end));
    const Matrix logits = forward(model, chunk);
    for (std::size_t t = 0; t + 1 < chunk.size(); ++t) {
      total_nll += detail::row_nll(logits.row_ptr(t), vocab, chunk[t + 1]);
      ++positions;
    }
  }
  if (positions == 0)
    throw precondition_error("perplexity: no scorable positions");
  return std::exp(total_nll / static_cast<double>(positions));
}

struct ChoiceResult {
  double accuracy = 0.0;
  std::size_t ties = 0;
  std::size_t n_items = 0;
};

// Picks the option with the highest total log-likelihood of its tokens given
// the context; exact ties go to the lowest option index and are tallied.
template <typename ModelT>
ChoiceResult choice_accuracy(const ModelT& model, const EvalTask& task) {
  const std::size_t vocab = model.config.vocab_size;
  const std::size_t max_seq = model.config.max_seq;

  ChoiceResult result;
  result.n_items = task.items.size();
  std::size_t correct = 0;

  for (std::size_t idx = 0; idx < task.items.size(); ++idx) {
    const ChoiceItem& item = task.items[idx];
    if (item.options.size() < 2)
      throw task_error("item " + std::to_string(idx) + ": needs >= 2 options");
    if (item.gold >= item.options.size())
      throw task_error("item " + std::to_string(idx) + ": gold index " +
                       std::to_string(item.gold) + " out of range");

    double best_score = 0.0;
    std::size_t best_option = 0;
    bool tie = false;
    for (std::size_t oi = 0; oi < item.options.size(); ++oi) {
      std::vector<int> ctx = encode(item.context);
      const std::vector<int> opt = encode(item.options[oi]);
      if (opt.empty())
        throw task_error("item " + std::to_string(idx) + ": empty option");
      if (opt.size() >= max_seq)
        throw task_error("item " + std::to_string(idx) +
                         ": option longer than max_seq");
      // Left-truncate the context so the full option always fits.
      if (ctx.size() + opt.size() > max_seq)
        ctx.erase(ctx.begin(),
                  ctx.begin() + static_cast<std::ptrdiff_t>(
                                    ctx.size() + opt.size() - max_seq));
      if (ctx.empty())
        throw task_error("item " + std::to_string(idx) + ": empty context");

      std::vector<int> tokens = ctx;
      tokens.insert(tokens.end(), opt.begin(), opt.end());
      const Matrix logits = forward(model, tokens);
      double score = 0.0;
      for (std::size_t p = ctx.size(); p < tokens.size(); ++p)
        score -= detail::row_nll(logits.row_ptr(p - 1), vocab, tokens[p]);

      if (oi == 0 || score > best_score) {
        best_score = score;
        best_option = oi;
        tie = false;
      } else if (score == best_score) {
        tie = true;  // keep the earlier option
      }
    }
    if (tie) ++result.ties;
    if (best_option == item.gold) ++correct;
  }
  result.accuracy = task.items.empty()
                        ? 0.0
                        : static_cast<double>(correct) /
                              static_cast<double>(task.items.size());
  return result;
}

struct SweepRow {
  double s_p = 0.0;
  double s_b = 0.0;
  std::uint64_t seed = 0;
  std::map<std::string, double> ppl;  // corpus id -> perplexity
  std::map<std::string, double> acc;  // task id -> accuracy
  double realized_pruned_fraction = 0.0;
  double realized_mean_slice = 0.0;
  bool failed = false;
  std::string error_message;
};

struct MetricAggregate {
  double median = 0.0;
  double mean = 0.0;
};

struct SweepReport {
  double s_p = 0.0;
  std::vector<SweepRow> rows;
  std::map<std::string, MetricAggregate> ppl_aggregates;
  std::map<std::string, MetricAggregate> acc_aggregates;
  std::string window_policy = kWindowPolicy;
};

struct EvalCorpus {
  std::string id;
  std::vector<int> tokens;
};

namespace detail {

inline MetricAggregate aggregate(std::vector<double> values) {
  MetricAggregate agg;
  if (values.empty()) return agg;
  double sum = 0.0;
  for (double v : values) sum += v;
  agg.mean = sum / static_cast<double>(values.size());
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  agg.median = (n % 2 == 1) ? values[n / 2]
                            : 0.5 * (values[n / 2 - 1] + values[n / 2]);
  return agg;
}

}  // namespace detail

// Grid sweep over slice bases at a fixed slice percentage: for every
// (s_b, seed) point build the schedule, slice once from shared rotations,
// and evaluate every corpus and task. A failing grid point marks its row
// and the sweep continues. Rows are independent, so `jobs` only changes
// wall time, never content.
inline SweepReport sweep_sb(const TransformerModel& model,
                            const LayerProfile& profile,
                            const std::vector<int>& rotation_corpus, double s_p,
                            const std::vector<double>& s_b_grid,
                            const std::vector<EvalCorpus>& corpora,
                            const std::vector<EvalTask>& tasks,
                            const std::vector<std::uint64_t>& seeds,
                            double fs_max = kDefaultFsMax, unsigned jobs = 1) {
  if (s_b_grid.empty()) throw precondition_error("sweep_sb: empty s_b grid");
  bool has_constant_point = false;
  for (double s_b : s_b_grid) {
    if (s_b == s_p) has_constant_point = true;
    if (s_b < 0.0 || s_b > s_p)
      throw precondition_error("sweep_sb: grid value " + std::to_string(s_b) +
                               " outside [0, s_p]");
  }
  if (!has_constant_point)
    throw precondition_error(
        "sweep_sb: grid must contain the constant-slice point s_b = s_p");

  const TransformerModel absorbed = absorb_norm_scales(model);
  const CovarianceStats stats = collect_covariances(absorbed, rotation_corpus);
  const std::vector<EigenDecomposition> rotations = compute_rotations(stats);
  const std::size_t source_params = count_parameters(model).total;

  SweepReport report;
  report.s_p = s_p;
  report.rows.resize(s_b_grid.size() * seeds.size());

  auto run_point = [&](std::size_t row_idx) {
    const double s_b = s_b_grid[row_idx / seeds.size()];
    const std::uint64_t seed = seeds[row_idx % seeds.size()];
    SweepRow& row = report.rows[row_idx];
    row.s_p = s_p;
    row.s_b = s_b;
    row.seed = seed;
    try {
      const SliceSchedule sched = build_schedule(
          profile.normalized_lr, s_p, s_b, profile.d_model, fs_max);
      const SlicedModel sliced = slice_model(absorbed, sched, rotations);
      row.realized_mean_slice = sched.realized_mean_slice;
      row.realized_pruned_fraction =
          pruned_fraction(source_params, count_parameters(sliced).total);
      for (const EvalCorpus& corpus : corpora)
        row.ppl[corpus.id] = perplexity(sliced, corpus.tokens);
      for (const EvalTask& task : tasks)
        row.acc[task.id] = choice_accuracy(sliced, task).accuracy;
    } catch (const error& e) {
      row.failed = true;
      row.error_message = e.what();
    }
  };

  const unsigned workers =
      std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(report.rows.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < report.rows.size(); ++i) run_point(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < report.rows.size();
             i = next.fetch_add(1))
          run_point(i);
      });
    for (auto& t : pool) t.join();
  }

  for (const EvalCorpus& corpus : corpora) {
    std::vector<double> values;
    for (const SweepRow& row : report.rows)
      if (!row.failed) values.push_back(row.ppl.at(corpus.id));
    report.ppl_aggregates[corpus.id] = detail::aggregate(std::move(values));
  }
  for (const EvalTask& task : tasks) {
    std::vector<double> values;
    for (const SweepRow& row : report.rows)
      if (!row.failed) values.push_back(row.acc.at(task.id));
    report.acc_aggregates[task.id] = detail::aggregate(std::move(values));
  }
  return report;
}

struct Selection {
  double s_b_star = 0.0;
  SweepRow selected;
  SweepRow constant_baseline;
};

// Calibration rule: pick the s_b whose calibration-corpus perplexity is
// minimal (ties to the smaller s_b) and report it beside the constant-slice
// baseline row.
inline Selection select_sb_by_calibration(const SweepReport& report,
                                          const std::string& calibration_corpus_id) {
  const SweepRow* best = nullptr;
  const SweepRow* baseline = nullptr;
  for (const SweepRow& row : report.rows) {
    if (row.s_b == report.s_p && !baseline) baseline = &row;
    if (row.failed) continue;
    auto it = row.ppl.find(calibration_corpus_id);
    if (it == row.ppl.end())
      throw precondition_error("select_sb_by_calibration: row s_b=" +
                               std::to_string(row.s_b) +
                               " has no perplexity for corpus '" +
                               calibration_corpus_id + "'");
    if (!best || it->second < best->ppl.at(calibration_corpus_id) ||
        (it->second == best->ppl.at(calibration_corpus_id) && row.s_b < best->s_b))
      best = &row;
  }
  if (!best)
    throw precondition_error("select_sb_by_calibration: every row failed");

  Selection sel;
  sel.s_b_star = best->s_b;
  sel.selected = *best;
  if (baseline) sel.constant_baseline = *baseline;
  return sel;
}

// Uniform grid 0, step, 2*step, ... with the constant point s_b = s_p always
// present as the last entry.
inline std::vector<double> make_sb_grid(double s_p, double step) {
  if (step <= 0.0) throw precondition_error("make_sb_grid: step must be > 0");
  std::vector<double> grid;
  for (int k = 0;; ++k) {
    const double v = static_cast<double>(k) * step;
    if (v >= s_p - 1e-12) break;
    grid.push_back(v);
  }
  grid.push_back(s_p);
  return grid;
}

}  // namespace dynaslice
