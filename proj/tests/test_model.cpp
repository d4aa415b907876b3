#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "json.hpp"

#include "dynaslice/container.hpp"
#include "dynaslice/eig.hpp"
#include "dynaslice/model.hpp"
#include "dynaslice/tokenizer.hpp"
#include "support/reference_model.hpp"
#include "support/test_util.hpp"

using namespace dynaslice;

TEST_CASE("byte tokenizer round trips") {
  CHECK(encode("").empty());

  const std::vector<int> ab = encode("Ab");
  REQUIRE(ab.size() == 2);
  CHECK(ab[0] == 65);
  CHECK(ab[1] == 98);

  // 1 KiB sample with multi-byte UTF-8 sequences mixed in.
  std::string sample;
  while (sample.size() < 1024) sample += "héllo wörld \xF0\x9F\x8C\x8D ";
  sample.resize(1024);
  const std::vector<int> toks = encode(sample);
  CHECK(toks.size() == sample.size());
  CHECK(decode(toks) == sample);
  for (int t : toks) {
    CHECK(t >= 0);
    CHECK(t <= 255);
  }
}

TEST_CASE("config validation") {
  ModelConfig cfg = testutil::tiny_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.d_model = 65;
  cfg.n_heads = 4;
  CHECK_THROWS_AS(cfg.validate(), precondition_error);
  cfg = testutil::tiny_config();
  cfg.n_layers = 0;  // degenerate depth is allowed
  CHECK_NOTHROW(cfg.validate());
  cfg.vocab_size = 0;
  CHECK_THROWS_AS(cfg.validate(), precondition_error);
}

TEST_CASE("container round trips a fresh model bitwise") {
  testutil::TempDir dir("container");
  const TransformerModel model = init_model(testutil::tiny_config(), 5);
  save_model(model, dir.file("m"));
  const TransformerModel loaded = load_model(dir.file("m.json"));

  CHECK(loaded.token_embedding.data == model.token_embedding.data);
  REQUIRE(loaded.blocks.size() == model.blocks.size());
  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    CHECK(loaded.blocks[i].w_q.data == model.blocks[i].w_q.data);
    CHECK(loaded.blocks[i].w_o.data == model.blocks[i].w_o.data);
    CHECK(loaded.blocks[i].w_down.data == model.blocks[i].w_down.data);
    CHECK(loaded.blocks[i].attn_norm_gain == model.blocks[i].attn_norm_gain);
  }
  CHECK(loaded.lm_head.data == model.lm_head.data);
  CHECK(loaded.final_norm_gain == model.final_norm_gain);
}

TEST_CASE("container load failures name the tensor") {
  testutil::TempDir dir("container_err");
  const TransformerModel model = init_model(testutil::tiny_config(), 5);
  save_model(model, dir.file("m"));

  SECTION("manifest entry missing from table") {
    nlohmann::json manifest = nlohmann::json::parse(read_file(dir.file("m.json")));
    auto& tensors = manifest["tensors"];
    for (auto it = tensors.begin(); it != tensors.end(); ++it) {
      if ((*it)["name"] == "blocks.0.w_q") {
        tensors.erase(it);
        break;
      }
    }
    write_file(dir.file("m.json"), manifest.dump());
    try {
      load_model(dir.file("m.json"));
      FAIL("expected format_error");
    } catch (const format_error& e) {
      CHECK(std::string(e.what()).find("blocks.0.w_q") != std::string::npos);
    }
  }

  SECTION("truncated blob") {
    const std::string blob = read_file(dir.file("m.bin"));
    write_file(dir.file("m.bin"), blob.substr(0, blob.size() / 2));
    CHECK_THROWS_AS(load_model(dir.file("m.json")), format_error);
  }

  SECTION("config divisibility") {
    nlohmann::json manifest = nlohmann::json::parse(read_file(dir.file("m.json")));
    manifest["config"]["d_model"] = 65;
    manifest["config"]["n_heads"] = 4;
    write_file(dir.file("m.json"), manifest.dump());
    CHECK_THROWS_AS(load_model(dir.file("m.json")), precondition_error);
  }

  SECTION("overlapping tensors") {
    nlohmann::json manifest = nlohmann::json::parse(read_file(dir.file("m.json")));
    manifest["tensors"][1]["offset"] = 0;
    write_file(dir.file("m.json"), manifest.dump());
    CHECK_THROWS_AS(load_model(dir.file("m.json")), format_error);
  }
}

TEST_CASE("forward produces logits of the right shape") {
  const TransformerModel model = init_model(testutil::tiny_config(), 1);
  const std::vector<int> toks = testutil::random_tokens(10, 2);
  const Matrix logits = forward(model, toks);
  CHECK(logits.rows == 10);
  CHECK(logits.cols == model.config.vocab_size);
}

TEST_CASE("forward rejects sequences beyond max_seq") {
  const TransformerModel model = init_model(testutil::tiny_config(), 1);
  const std::vector<int> toks =
      testutil::random_tokens(model.config.max_seq + 1, 2);
  CHECK_THROWS_AS(forward(model, toks), precondition_error);
}

TEST_CASE("zero-layer model is norm of embedding times head") {
  ModelConfig cfg = testutil::tiny_config(0, 8, 2, 16);
  const TransformerModel model = init_model(cfg, 9);
  const std::vector<int> toks = {3, 200, 77};
  const Matrix logits = forward(model, toks);

  for (std::size_t t = 0; t < toks.size(); ++t) {
    std::vector<double> row(cfg.d_model);
    double sum_sq = 0.0;
    for (std::size_t j = 0; j < cfg.d_model; ++j) {
      row[j] = model.token_embedding(static_cast<std::size_t>(toks[t]), j);
      sum_sq += row[j] * row[j];
    }
    const double inv_rms =
        1.0 / std::sqrt(sum_sq / static_cast<double>(cfg.d_model) + 1e-6);
    for (std::size_t v = 0; v < cfg.vocab_size; ++v) {
      double expected = 0.0;
      for (std::size_t j = 0; j < cfg.d_model; ++j)
        expected += row[j] * inv_rms * model.final_norm_gain[j] * model.lm_head(j, v);
      CHECK(logits(t, v) == Catch::Approx(expected).margin(1e-9));
    }
  }
}

TEST_CASE("forward matches the straight-line reference implementation") {
  ModelConfig cfg = testutil::tiny_config(2, 16, 2, 32);
  TransformerModel model = init_model(cfg, 0);
  // Non-trivial gains so the norm path is exercised too.
  for (auto& blk : model.blocks) {
    for (std::size_t j = 0; j < cfg.d_model; ++j) {
      blk.attn_norm_gain[j] = 1.0 + 0.01 * static_cast<double>(j);
      blk.mlp_norm_gain[j] = 1.2 - 0.01 * static_cast<double>(j);
    }
  }

  const std::vector<int> toks = {1, 2, 3};
  const Matrix logits = forward(model, toks);
  const refmodel::VV expected = refmodel::reference_logits(model, toks);

  double max_diff = 0.0;
  for (std::size_t t = 0; t < toks.size(); ++t)
    for (std::size_t v = 0; v < cfg.vocab_size; ++v)
      max_diff = std::max(max_diff, std::abs(logits(t, v) - expected[t][v]));
  CHECK(max_diff < 1e-4);

  const std::vector<int> longer = testutil::random_tokens(24, 77);
  const Matrix logits2 = forward(model, longer);
  const refmodel::VV expected2 = refmodel::reference_logits(model, longer);
  max_diff = 0.0;
  for (std::size_t t = 0; t < longer.size(); ++t)
    for (std::size_t v = 0; v < cfg.vocab_size; ++v)
      max_diff = std::max(max_diff, std::abs(logits2(t, v) - expected2[t][v]));
  CHECK(max_diff < 1e-4);
}

TEST_CASE("forward is causal") {
  const TransformerModel model = init_model(testutil::tiny_config(), 3);
  std::vector<int> toks = testutil::random_tokens(12, 4);
  const Matrix base = forward(model, toks);

  for (std::size_t cut : {4u, 8u, 11u}) {
    std::vector<int> mutated = toks;
    for (std::size_t t = cut; t < mutated.size(); ++t)
      mutated[t] = (mutated[t] + 91) % 256;
    const Matrix changed = forward(model, mutated);
    for (std::size_t t = 0; t < cut; ++t)
      for (std::size_t v = 0; v < model.config.vocab_size; ++v)
        CHECK(changed(t, v) == base(t, v));  // bitwise
  }
}

TEST_CASE("tracing does not perturb logits") {
  const TransformerModel model = init_model(testutil::tiny_config(), 8);
  const std::vector<int> toks = testutil::random_tokens(20, 5);
  const Matrix plain = forward(model, toks);
  HiddenTrace trace;
  const Matrix traced = forward(model, toks, &trace);
  CHECK(plain.data == traced.data);
  REQUIRE(trace.block_input.size() == model.config.n_layers);
  REQUIRE(trace.block_output.size() == model.config.n_layers);
  CHECK(trace.block_input[0].rows == toks.size());
}

TEST_CASE("rmsnorm commutes with rotation at unit gain") {
  const std::size_t d = 24;
  double worst = 0.0;
  for (std::uint64_t trial = 0; trial < 25; ++trial) {
    Matrix x = testutil::random_matrix(4, d, 900 + trial, 2.0);
    const Matrix q = random_orthogonal(d, 300 + trial);

    Matrix xq = matmul(x, q);
    detail::rmsnorm_rows(xq, nullptr, d);  // RMSNorm(xQ)

    Matrix nx = x;
    detail::rmsnorm_rows(nx, nullptr, d);
    const Matrix nxq = matmul(nx, q);  // RMSNorm(x)Q

    worst = std::max(worst, max_abs_diff(xq, nxq));
  }
  CHECK(worst < 1e-6);
}
