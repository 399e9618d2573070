#include <doctest.h>

#include <filesystem>

#include "ciseq/corpus.hpp"
#include "support/matchers.hpp"
#include "ciseq/model.hpp"

using namespace ciseq;
using namespace ciseq::model;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg = ModelConfig::toy(24);
  cfg.d_h = 16;
  cfg.d_u = 4;
  cfg.d_core = 3;
  cfg.d_side = 5;
  cfg.d_dstyle = 3;
  cfg.d_sstyle = 3;
  cfg.k_u = 3;
  cfg.enc_layers = 1;
  cfg.dec_layers = 2;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.max_doc_len = 16;
  cfg.max_sum_len = 10;
  return cfg;
}

std::vector<int> doc_tokens() {
  return {corpus::kCls, 5, 9, 7, 12, 6, corpus::kEos};
}

}  // namespace

TEST_CASE("config validation enforces the style-dimension tie") {
  ModelConfig cfg = tiny_config();
  cfg.d_sstyle = cfg.d_dstyle + 1;
  CHECK_THROWS(cfg.validate());
  cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());
  ModelConfig ref = ModelConfig::reference(50000);
  CHECK(ref.d_u == 16);
  CHECK(ref.d_core == 128);
  CHECK(ref.d_side == 256);
  CHECK(ref.d_dstyle == 128);
  CHECK(ref.d_sstyle == 128);
  CHECK(ref.k_u == 5);
  CHECK(ref.max_doc_len == 512);
  CHECK(ref.max_sum_len == 64);
  CHECK_NOTHROW(ref.validate());
}

TEST_CASE("eval-mode latents equal the posterior means exactly") {
  ModelParams params = ModelParams::init(tiny_config(), 3);
  LatentBundle b = encode_document(params, doc_tokens(), 1, nullptr);
  CHECK(testsupport::same_values(b.h_core, b.posterior.mu_core));
  CHECK(testsupport::same_values(b.h_side, b.posterior.mu_side));
  CHECK(testsupport::same_values(b.h_dstyle, b.posterior.mu_dstyle));
  CHECK(b.h_core.size() == 3);
  CHECK(b.h_side.size() == 5);
  CHECK(b.h_dstyle.size() == 3);
  CHECK(b.h_doc.size() == 16);
  CHECK(b.h_u.size() == 4);
}

TEST_CASE("sampling is deterministic given the rng state") {
  ModelParams params = ModelParams::init(tiny_config(), 3);
  Rng r1(123), r2(123);
  LatentBundle a = encode_document(params, doc_tokens(), 1, &r1);
  LatentBundle b = encode_document(params, doc_tokens(), 1, &r2);
  CHECK(testsupport::same_values(a.h_core, b.h_core));
  CHECK(testsupport::same_values(a.h_side, b.h_side));
  CHECK(testsupport::same_values(a.h_dstyle, b.h_dstyle));
  CHECK(!testsupport::same_values(a.h_core, a.posterior.mu_core));  // noise actually applied
}

TEST_CASE("confounder id must be in range") {
  ModelParams params = ModelParams::init(tiny_config(), 3);
  CHECK_THROWS(encode_document(params, doc_tokens(), 7, nullptr));
  CHECK_THROWS(encode_document(params, doc_tokens(), -1, nullptr));
}

TEST_CASE("derive_summary_style scales elementwise") {
  Eigen::RowVectorXd h(2);
  h << 1.0, 2.0;
  Eigen::RowVectorXd s = derive_summary_style(h, 0.5);
  CHECK(s(0) == 0.5);
  CHECK(s(1) == 1.0);
  CHECK(testsupport::same_values(derive_summary_style(h, 1.0), h));
  Eigen::RowVectorXd z = Eigen::RowVectorXd::Zero(2);
  CHECK(testsupport::same_values(derive_summary_style(z, 0.3), z));
  CHECK_THROWS(derive_summary_style(h, 0.0));
}

TEST_CASE("position 0 never sees prefix perturbations in either decoder") {
  ModelConfig cfg = tiny_config();
  ModelParams params = ModelParams::init(cfg, 5);
  LatentBundle b = encode_document(params, doc_tokens(), 0, nullptr);
  Eigen::RowVectorXd h_ss = derive_summary_style(b.h_dstyle, 0.4);

  std::vector<int> prefix{8, 11, 6, 9};
  std::vector<int> perturbed{8, 11, 13, 9};

  ad::Tape t1, t2;
  ParamVars pv1 = ParamVars::leaves(t1, params);
  ParamVars pv2 = ParamVars::leaves(t2, params);
  EncodeGraph e1 = encoder_forward(t1, pv1, cfg, doc_tokens());
  EncodeGraph e2 = encoder_forward(t2, pv2, cfg, doc_tokens());

  DecodeGraph d1 = reconstruction_decode(t1, pv1, cfg, t1.leaf(b.h_core),
                                         t1.leaf(b.h_side),
                                         t1.leaf(b.h_dstyle), prefix, e1.seq);
  DecodeGraph d2 = reconstruction_decode(t2, pv2, cfg, t2.leaf(b.h_core),
                                         t2.leaf(b.h_side),
                                         t2.leaf(b.h_dstyle), perturbed,
                                         e2.seq);
  // bitwise: row-0 activations only ever combine row-0 inputs
  CHECK(testsupport::same_values(t1.val(d1.final_hidden).row(0), t2.val(d2.final_hidden).row(0)));
  CHECK(testsupport::same_values(t1.val(d1.logits).row(0), t2.val(d2.logits).row(0)));
  CHECK(!testsupport::same_values(t1.val(d1.logits).row(1), t2.val(d2.logits).row(1)));

  ad::Tape t3, t4;
  ParamVars pv3 = ParamVars::leaves(t3, params);
  ParamVars pv4 = ParamVars::leaves(t4, params);
  EncodeGraph e3 = encoder_forward(t3, pv3, cfg, doc_tokens());
  EncodeGraph e4 = encoder_forward(t4, pv4, cfg, doc_tokens());
  DecodeGraph p1 = prediction_decode(t3, pv3, cfg, t3.leaf(b.h_core),
                                     t3.leaf(h_ss), prefix, e3.seq);
  DecodeGraph p2 = prediction_decode(t4, pv4, cfg, t4.leaf(b.h_core),
                                     t4.leaf(h_ss), perturbed, e4.seq);
  CHECK(testsupport::same_values(t3.val(p1.final_hidden).row(0), t4.val(p2.final_hidden).row(0)));
  CHECK(testsupport::same_values(t3.val(p1.logits).row(0), t4.val(p2.logits).row(0)));
}

TEST_CASE("decoder logits rows softmax to one") {
  ModelConfig cfg = tiny_config();
  ModelParams params = ModelParams::init(cfg, 5);
  LatentBundle b = encode_document(params, doc_tokens(), 0, nullptr);
  Mat logits = decode_reconstruction(params, b.h_core, b.h_side, b.h_dstyle,
                                     {7, 7, 9}, doc_tokens());
  CHECK(logits.rows() == 4);
  CHECK(logits.cols() == cfg.d_v);
  for (long r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    const double sum = (logits.row(r).array() - m).exp().sum();
    const double total = ((logits.row(r).array() - m).exp() / sum).sum();
    CHECK(std::abs(total - 1.0) < 1e-6);
  }
}

TEST_CASE("latent addition shifts logits linearly at frozen hidden states") {
  ModelConfig cfg = tiny_config();
  ModelParams params = ModelParams::init(cfg, 5);
  LatentBundle b = encode_document(params, doc_tokens(), 0, nullptr);

  ad::Tape tape;
  ParamVars pv = ParamVars::leaves(tape, params);
  EncodeGraph enc = encoder_forward(tape, pv, cfg, doc_tokens());
  DecodeGraph dec = reconstruction_decode(tape, pv, cfg, tape.leaf(b.h_core),
                                          tape.leaf(b.h_side),
                                          tape.leaf(b.h_dstyle), {5, 6},
                                          enc.seq);
  const Mat o = tape.val(dec.final_hidden);     // frozen hidden states
  const Mat h_x = tape.val(dec.h_inject);       // 1 x d_h
  const Mat logits = tape.val(dec.logits);

  // with h_x zeroed at the same o, every row shifts by exactly -h_x * W3
  Mat logits_zero = o * params.vocab_doc_w;
  logits_zero.rowwise() += params.vocab_doc_b.row(0);
  const Mat shift = (h_x * params.vocab_doc_w).row(0);
  for (long r = 0; r < logits.rows(); ++r) {
    CHECK((logits.row(r) - logits_zero.row(r) - shift).cwiseAbs().maxCoeff() <
          1e-9);
  }
}

TEST_CASE("ablation flags change the decoder computation graph") {
  ModelConfig cfg = tiny_config();
  ModelParams params = ModelParams::init(cfg, 6);
  LatentBundle b = encode_document(params, doc_tokens(), 2, nullptr);
  const std::vector<int> prefix{9, 4, 15};

  const Mat base = decode_reconstruction(params, b.h_core, b.h_side,
                                         b.h_dstyle, prefix, doc_tokens());
  AblationFlags no_add;
  no_add.no_addition = true;
  const Mat without_addition = decode_reconstruction(
      params, b.h_core, b.h_side, b.h_dstyle, prefix, doc_tokens(), no_add);
  CHECK((base - without_addition).cwiseAbs().maxCoeff() > 0.0);

  AblationFlags no_rep;
  no_rep.no_replacement = true;
  const Mat without_replacement = decode_reconstruction(
      params, b.h_core, b.h_side, b.h_dstyle, prefix, doc_tokens(), no_rep);
  CHECK((base - without_replacement).cwiseAbs().maxCoeff() > 0.0);

  // no_confounder reroutes the posterior to the shared embedding row
  AblationFlags no_conf;
  no_conf.no_confounder = true;
  LatentBundle shared = encode_document(params, doc_tokens(), 2, nullptr,
                                        no_conf);
  CHECK((shared.h_core - b.h_core).cwiseAbs().maxCoeff() > 0.0);
  LatentBundle tid0 = encode_document(params, doc_tokens(), 0, nullptr);
  CHECK(testsupport::same_values(shared.h_core, tid0.h_core));

  // no_style_guidance gives the summary-style latent its own posterior
  AblationFlags no_style;
  no_style.no_style_guidance = true;
  LatentBundle own = encode_document(params, doc_tokens(), 2, nullptr,
                                     no_style);
  REQUIRE(own.posterior.mu_sstyle.has_value());
  CHECK((own.h_sstyle - derive_summary_style(b.h_dstyle, 0.5))
            .cwiseAbs()
            .maxCoeff() > 0.0);

  AblationFlags copy_ds;
  copy_ds.no_style_guidance = true;
  copy_ds.style_mode = "copy_ds";
  LatentBundle copied = encode_document(params, doc_tokens(), 2, nullptr,
                                        copy_ds);
  CHECK(testsupport::same_values(copied.h_sstyle, b.posterior.mu_dstyle));  // eval mode, same head
}

TEST_CASE("generation respects max_len, determinism, and beam degeneracy") {
  ModelConfig cfg = tiny_config();
  ModelParams params = ModelParams::init(cfg, 8);
  LatentBundle b = encode_document(params, doc_tokens(), 1, nullptr);
  Eigen::RowVectorXd h_ss = derive_summary_style(b.h_dstyle, 0.4);

  const auto one = generate(params, b.h_core, h_ss, doc_tokens(), 1,
                            GenStrategy::greedy());
  CHECK(one.size() <= 1);

  const auto g1 = generate(params, b.h_core, h_ss, doc_tokens(), 8,
                           GenStrategy::greedy());
  const auto g2 = generate(params, b.h_core, h_ss, doc_tokens(), 8,
                           GenStrategy::greedy());
  CHECK(g1 == g2);

  const auto beam1 = generate(params, b.h_core, h_ss, doc_tokens(), 8,
                              GenStrategy::beam(1));
  CHECK(beam1 == g1);

  const auto beam3 = generate(params, b.h_core, h_ss, doc_tokens(), 8,
                              GenStrategy::beam(3));
  CHECK(beam3.size() <= 8);
  for (int tok : beam3) CHECK(tok != corpus::kEos);
}

TEST_CASE("checkpoint round trip preserves parameters and metadata") {
  ModelConfig cfg = tiny_config();
  ModelParams params = ModelParams::init(cfg, 11);
  CheckpointMeta meta;
  meta.vocab_hash = "abc123";
  meta.topic_model_hash = "def456";
  meta.seed = 11;
  meta.step_count = 42;
  meta.corpus_mean_cr = 0.37;
  meta.train_config["steps"] = "42";

  const std::string stem =
      (std::filesystem::temp_directory_path() / "ciseq_ckpt_test").string();
  save_checkpoint(stem, params, meta);
  Checkpoint loaded = load_checkpoint(stem);
  CHECK(checkpoint_params_hash(loaded.params) ==
        checkpoint_params_hash(params));
  CHECK(loaded.meta.vocab_hash == "abc123");
  CHECK(loaded.meta.topic_model_hash == "def456");
  CHECK(loaded.meta.step_count == 42);
  CHECK(loaded.meta.corpus_mean_cr == 0.37);
  CHECK(loaded.meta.train_config.at("steps") == "42");
  CHECK(loaded.params.config.d_h == cfg.d_h);
}

TEST_CASE("decoders reject over-length prefixes") {
  ModelConfig cfg = tiny_config();
  ModelParams params = ModelParams::init(cfg, 5);
  LatentBundle b = encode_document(params, doc_tokens(), 0, nullptr);
  std::vector<int> too_long(static_cast<size_t>(cfg.max_doc_len), 5);
  CHECK_THROWS(decode_reconstruction(params, b.h_core, b.h_side, b.h_dstyle,
                                     too_long, doc_tokens()));
}
