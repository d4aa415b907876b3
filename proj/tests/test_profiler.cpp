#include <catch2/catch_amalgamated.hpp>

#include <numeric>

#include "dynaslice/corpus.hpp"
#include "dynaslice/profile.hpp"
#include "dynaslice/tokenizer.hpp"
#include "support/test_util.hpp"

using namespace dynaslice;

namespace {

// Blocks whose sublayer outputs are zeroed leave the residual stream alone.
TransformerModel identity_block_model(std::uint64_t seed) {
  TransformerModel m = init_model(testutil::tiny_config(3, 16, 2, 32), seed);
  for (auto& blk : m.blocks) {
    for (double& v : blk.w_o.data) v = 0.0;
    for (double& v : blk.w_down.data) v = 0.0;
  }
  return m;
}

}  // namespace

TEST_CASE("normalize_lr maps to the unit interval") {
  const std::vector<double> out = normalize_lr({0.2, 0.5, 0.8});
  CHECK(out[0] == Catch::Approx(0.0).margin(1e-15));
  CHECK(out[1] == Catch::Approx(0.5).margin(1e-12));
  CHECK(out[2] == Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("normalize_lr flags all-equal profiles") {
  bool degenerate = false;
  const std::vector<double> out = normalize_lr({0.9, 0.9, 0.9}, &degenerate);
  CHECK(degenerate);
  for (double v : out) CHECK(v == 0.5);
}

TEST_CASE("normalize_lr keeps strictly increasing order with 0/1 endpoints") {
  const std::vector<double> raw = {-0.3, -0.1, 0.05, 0.4, 0.41, 0.9};
  bool degenerate = true;
  const std::vector<double> out = normalize_lr(raw, &degenerate);
  CHECK_FALSE(degenerate);
  CHECK(out.front() == 0.0);
  CHECK(out.back() == 1.0);
  for (std::size_t i = 0; i + 1 < out.size(); ++i) CHECK(out[i] < out[i + 1]);
}

TEST_CASE("normalize_lr is idempotent on non-degenerate input") {
  const std::vector<double> once = normalize_lr({0.1, 0.7, 0.3, 0.9});
  const std::vector<double> twice = normalize_lr(once);
  CHECK(once == twice);
}

TEST_CASE("identity blocks profile to all-ones and degenerate") {
  const TransformerModel model = identity_block_model(3);
  const std::vector<int> corpus = testutil::random_tokens(96, 10);
  const LayerProfile profile = profile_lr(model, corpus);

  for (double v : profile.raw_lr) CHECK(v == Catch::Approx(1.0).margin(1e-12));
  CHECK(profile.degenerate);
  for (double v : profile.normalized_lr) CHECK(v == 0.5);
  CHECK(profile.skip_tally == 0);
  CHECK(profile.tokens_seen == corpus.size());
}

TEST_CASE("antipodal trace scores -1") {
  HiddenTrace trace;
  Matrix in = testutil::random_matrix(6, 8, 44);
  Matrix out = in;
  for (double& v : out.data) v = -v;
  trace.block_input = {in};
  trace.block_output = {out};

  std::vector<double> sums(1, 0.0);
  std::vector<std::size_t> counts(1, 0);
  std::size_t skips = 0;
  detail::accumulate_lr(trace, sums, counts, skips);
  CHECK(counts[0] == 6);
  CHECK(sums[0] / 6.0 == Catch::Approx(-1.0).margin(1e-12));
}

TEST_CASE("zero-norm hidden vectors are skipped and tallied") {
  HiddenTrace trace;
  Matrix in(3, 4);
  in(0, 0) = 1.0;  // rows 1,2 stay zero
  in(2, 1) = 2.0;
  Matrix out = in;
  trace.block_input = {in};
  trace.block_output = {out};

  std::vector<double> sums(1, 0.0);
  std::vector<std::size_t> counts(1, 0);
  std::size_t skips = 0;
  detail::accumulate_lr(trace, sums, counts, skips);
  CHECK(counts[0] == 2);
  CHECK(skips == 1);
}

TEST_CASE("raw profile matches offline recomputation from dumped traces") {
  const TransformerModel model = init_model(testutil::tiny_config(3, 16, 2, 32), 0);
  const std::vector<int> corpus = encode(make_toy_text(21, 700));
  const LayerProfile profile = profile_lr(model, corpus);

  // Oracle: re-trace each window, recompute cosines with local loops.
  const std::size_t n = model.config.n_layers;
  std::vector<double> sums(n, 0.0);
  std::vector<double> counts(n, 0.0);
  const std::size_t window = model.config.max_seq;
  for (std::size_t start = 0; start < corpus.size(); start += window) {
    const std::size_t end = std::min(corpus.size(), start + window);
    std::vector<int> chunk(corpus.begin() + static_cast<std::ptrdiff_t>(start),
                           corpus.begin() + static_cast<std::ptrdiff_t>(end));
    HiddenTrace trace;
    forward(model, chunk, &trace);
    for (std::size_t layer = 0; layer < n; ++layer) {
      for (std::size_t t = 0; t < chunk.size(); ++t) {
        double dot = 0.0, a = 0.0, b = 0.0;
        for (std::size_t j = 0; j < model.config.d_model; ++j) {
          const double x = trace.block_input[layer](t, j);
          const double y = trace.block_output[layer](t, j);
          dot += x * y;
          a += x * x;
          b += y * y;
        }
        sums[layer] += dot / (std::sqrt(a) * std::sqrt(b));
        counts[layer] += 1.0;
      }
    }
  }
  for (std::size_t layer = 0; layer < n; ++layer)
    CHECK(profile.raw_lr[layer] ==
          Catch::Approx(sums[layer] / counts[layer]).margin(1e-6));
  for (double v : profile.raw_lr) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("window-level accumulation merges independently of order") {
  const TransformerModel model = init_model(testutil::tiny_config(2, 16, 2, 32), 9);
  const std::size_t window = 32;
  const std::vector<int> corpus = testutil::random_tokens(window * 4, 17);

  std::vector<HiddenTrace> traces(4);
  for (std::size_t w = 0; w < 4; ++w) {
    std::vector<int> chunk(corpus.begin() + static_cast<std::ptrdiff_t>(w * window),
                           corpus.begin() + static_cast<std::ptrdiff_t>((w + 1) * window));
    forward(model, chunk, &traces[w]);
  }

  auto accumulate_in_order = [&](std::vector<std::size_t> order) {
    std::vector<double> sums(2, 0.0);
    std::vector<std::size_t> counts(2, 0);
    std::size_t skips = 0;
    for (std::size_t w : order)
      detail::accumulate_lr(traces[w], sums, counts, skips);
    std::vector<double> mean(2);
    for (std::size_t i = 0; i < 2; ++i)
      mean[i] = sums[i] / static_cast<double>(counts[i]);
    return mean;
  };

  const std::vector<double> forward_order = accumulate_in_order({0, 1, 2, 3});
  const std::vector<double> shuffled = accumulate_in_order({2, 0, 3, 1});
  for (std::size_t i = 0; i < 2; ++i)
    CHECK(forward_order[i] == Catch::Approx(shuffled[i]).margin(1e-9));
}

TEST_CASE("covariances accumulate block-input outer products") {
  // Single token: gram equals the outer product of its embedding row.
  ModelConfig cfg = testutil::tiny_config(1, 4, 2, 8);
  TransformerModel model = init_model(cfg, 12);
  for (double& v : model.token_embedding.data) v = 0.0;
  model.token_embedding(7, 0) = 1.0;  // token 7 -> e1

  const CovarianceStats stats = collect_covariances(model, {7});
  REQUIRE(stats.gram.size() == 1);
  CHECK(stats.rows_seen[0] == 1);
  CHECK(stats.gram[0](0, 0) == 1.0);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      if (i != 0 || j != 0) CHECK(stats.gram[0](i, j) == 0.0);
  CHECK_FALSE(stats.warning.empty());  // fewer tokens than d_model
}

TEST_CASE("covariance halves merge to the one-pass result") {
  const TransformerModel model = init_model(testutil::tiny_config(2, 16, 2, 32), 1);
  const std::size_t window = model.config.max_seq;
  const std::vector<int> corpus = testutil::random_tokens(window * 2, 3);

  const CovarianceStats whole = collect_covariances(model, corpus);
  const std::vector<int> first(corpus.begin(),
                               corpus.begin() + static_cast<std::ptrdiff_t>(window));
  const std::vector<int> second(corpus.begin() + static_cast<std::ptrdiff_t>(window),
                                corpus.end());
  const CovarianceStats a = collect_covariances(model, first);
  const CovarianceStats b = collect_covariances(model, second);

  for (std::size_t layer = 0; layer < 2; ++layer) {
    const Matrix merged = add(a.gram[layer], b.gram[layer]);
    CHECK(max_abs_diff(whole.gram[layer], merged) < 1e-9);
  }
}

TEST_CASE("covariance trace equals accumulated squared norms") {
  const TransformerModel model = init_model(testutil::tiny_config(2, 16, 2, 32), 0);
  const std::vector<int> corpus = encode(make_toy_text(5, 400));
  const CovarianceStats stats = collect_covariances(model, corpus);

  const std::size_t window = model.config.max_seq;
  std::vector<double> norm_sums(2, 0.0);
  for (std::size_t start = 0; start < corpus.size(); start += window) {
    const std::size_t end = std::min(corpus.size(), start + window);
    std::vector<int> chunk(corpus.begin() + static_cast<std::ptrdiff_t>(start),
                           corpus.begin() + static_cast<std::ptrdiff_t>(end));
    HiddenTrace trace;
    forward(model, chunk, &trace);
    for (std::size_t layer = 0; layer < 2; ++layer)
      for (std::size_t t = 0; t < chunk.size(); ++t)
        for (std::size_t j = 0; j < model.config.d_model; ++j)
          norm_sums[layer] +=
              trace.block_input[layer](t, j) * trace.block_input[layer](t, j);
  }
  for (std::size_t layer = 0; layer < 2; ++layer)
    CHECK(trace(stats.gram[layer]) ==
          Catch::Approx(norm_sums[layer]).epsilon(1e-6));
}

TEST_CASE("profile JSON round trips") {
  LayerProfile p;
  p.raw_lr = {0.9, 0.7};
  p.normalized_lr = {1.0, 0.0};
  p.tokens_seen = 123;
  p.calibration_corpus_id = "corpus_a";
  p.model_id = "m0";
  p.degenerate = false;
  p.skip_tally = 2;
  p.d_model = 16;
  const LayerProfile q = profile_from_json(profile_to_json(p));
  CHECK(q.raw_lr == p.raw_lr);
  CHECK(q.normalized_lr == p.normalized_lr);
  CHECK(q.tokens_seen == p.tokens_seen);
  CHECK(q.calibration_corpus_id == p.calibration_corpus_id);
  CHECK(q.d_model == p.d_model);
  CHECK(q.skip_tally == p.skip_tally);
}

TEST_CASE("profiler rejects an empty corpus") {
  const TransformerModel model = init_model(testutil::tiny_config(), 0);
  CHECK_THROWS_AS(profile_lr(model, {}), precondition_error);
  CHECK_THROWS_AS(collect_covariances(model, {}), precondition_error);
}
