#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ciseq/infer.hpp"
#include "ciseq/train.hpp"

using namespace ciseq;
using namespace ciseq::infer;

namespace {

model::ModelConfig tiny_config() {
  model::ModelConfig cfg = model::ModelConfig::toy(20);
  cfg.d_h = 16;
  cfg.d_u = 4;
  cfg.d_core = 3;
  cfg.d_side = 4;
  cfg.d_dstyle = 3;
  cfg.d_sstyle = 3;
  cfg.k_u = 2;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 24;
  cfg.max_doc_len = 12;
  cfg.max_sum_len = 8;
  return cfg;
}

std::vector<int> doc() { return {corpus::kCls, 6, 9, 11, 7, corpus::kEos}; }

}  // namespace

TEST_CASE("zero optimization steps return the best raw candidate") {
  model::ModelParams params = model::ModelParams::init(tiny_config(), 17);
  InferConfig cfg;
  cfg.n_candidates = 6;
  cfg.opt_steps = 0;
  Rng rng(3);
  OptimizedLatents lat = infer_document_latents(params, doc(), cfg, rng);
  REQUIRE(lat.candidate_scores.size() == 6);
  CHECK(lat.trace.size() == 1);
  const double best =
      *std::max_element(lat.candidate_scores.begin(),
                        lat.candidate_scores.end());
  CHECK(lat.objective == best);
  CHECK(lat.candidate_scores[static_cast<size_t>(lat.picked_candidate)] ==
        best);
}

TEST_CASE("objective trace is non-decreasing under backtracking") {
  model::ModelParams params = model::ModelParams::init(tiny_config(), 17);
  InferConfig cfg;
  cfg.n_candidates = 4;
  cfg.opt_steps = 12;
  for (uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
    Rng rng(seed);
    OptimizedLatents lat = infer_document_latents(params, doc(), cfg, rng);
    REQUIRE(lat.trace.size() == 13);
    for (size_t i = 1; i < lat.trace.size(); ++i)
      CHECK(lat.trace[i] >= lat.trace[i - 1]);
    CHECK(lat.objective == lat.trace.back());
  }
}

TEST_CASE("inference is deterministic given the seed") {
  model::ModelParams params = model::ModelParams::init(tiny_config(), 17);
  InferConfig cfg;
  cfg.n_candidates = 5;
  cfg.opt_steps = 4;
  Rng r1(9), r2(9);
  OptimizedLatents a = infer_document_latents(params, doc(), cfg, r1);
  OptimizedLatents b = infer_document_latents(params, doc(), cfg, r2);
  CHECK(a.objective == b.objective);
  CHECK((a.core - b.core).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.trace == b.trace);
}

TEST_CASE("literal objective sign is available for comparison") {
  model::ModelParams params = model::ModelParams::init(tiny_config(), 17);
  InferConfig penalty;
  penalty.n_candidates = 3;
  penalty.opt_steps = 0;
  penalty.lambda_core = penalty.lambda_side = penalty.lambda_dstyle = 0.2;
  InferConfig literal = penalty;
  literal.literal_sign = true;
  Rng r1(4), r2(4);
  OptimizedLatents a = infer_document_latents(params, doc(), penalty, r1);
  OptimizedLatents b = infer_document_latents(params, doc(), literal, r2);
  CHECK(a.objective < b.objective);  // same draws, flipped norm terms
}

TEST_CASE("non-finite candidates raise an error") {
  model::ModelParams params = model::ModelParams::init(tiny_config(), 17);
  params.vocab_doc_w(0, 0) = std::numeric_limits<double>::quiet_NaN();
  InferConfig cfg;
  cfg.n_candidates = 3;
  Rng rng(1);
  CHECK_THROWS(infer_document_latents(params, doc(), cfg, rng));
}

TEST_CASE("controlled summaries are deterministic and bounded") {
  model::ModelParams params = model::ModelParams::init(tiny_config(), 17);
  InferConfig cfg;
  cfg.n_candidates = 4;
  cfg.opt_steps = 2;
  Rng r1(6), r2(6);
  const auto s1 = controlled_summarize(params, doc(), 0.4, cfg, r1, 6);
  const auto s2 = controlled_summarize(params, doc(), 0.4, cfg, r2, 6);
  CHECK(s1 == s2);
  CHECK(s1.size() <= 6);
  CHECK_THROWS(controlled_summarize(params, doc(), 0.0, cfg, r1, 6));
}

TEST_CASE("cr resolution") {
  CHECK(resolve_cr("0.4", 0.3) == 0.4);
  CHECK(resolve_cr("auto", 0.3) == 0.3);
  CHECK_THROWS(resolve_cr("auto", 0.0));
  CHECK_THROWS(resolve_cr("banana", 0.3));
  CHECK_THROWS(resolve_cr("-0.2", 0.3));
}

TEST_CASE("config validation bounds") {
  InferConfig cfg;
  cfg.n_candidates = 0;
  CHECK_THROWS(cfg.validate());
  cfg = InferConfig{};
  cfg.step_size = 0.0;
  CHECK_THROWS(cfg.validate());
}
