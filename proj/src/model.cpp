#include "ciseq/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "ciseq/corpus.hpp"
#include "ciseq/tensor_io.hpp"

namespace ciseq::model {

using ad::Tape;
using ad::Var;

ModelConfig ModelConfig::toy(int vocab_size) {
  ModelConfig c;
  c.d_v = vocab_size;
  return c;
}

ModelConfig ModelConfig::reference(int vocab_size) {
  ModelConfig c;
  c.d_v = vocab_size;
  c.d_h = 1024;
  c.d_u = 16;
  c.d_core = 128;
  c.d_side = 256;
  c.d_dstyle = 128;
  c.d_sstyle = 128;
  c.k_u = 5;
  c.enc_layers = 6;
  c.dec_layers = 6;
  c.n_heads = 16;
  c.d_ff = 4096;
  c.max_doc_len = 512;
  c.max_sum_len = 64;
  return c;
}

void ModelConfig::validate() const {
  require(d_v > corpus::kNumSpecials, "ModelConfig: vocabulary too small");
  require(d_sstyle == d_dstyle,
          "ModelConfig: d_sstyle must equal d_dstyle (h_ss = cr * h_ds)");
  require(d_h % n_heads == 0, "ModelConfig: d_h must divide into heads");
  require(k_u >= 1 && d_u >= 1 && d_core >= 1 && d_side >= 1 && d_dstyle >= 1,
          "ModelConfig: dimensions must be positive");
  require(enc_layers >= 1 && dec_layers >= 1, "ModelConfig: need layers");
  require(max_doc_len >= 2 && max_sum_len >= 2, "ModelConfig: short maxima");
  require(th > 0.0 && th < 1.0, "ModelConfig: th must lie in (0,1)");
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["d_v"] = d_v;
  j["d_h"] = d_h;
  j["d_u"] = d_u;
  j["d_core"] = d_core;
  j["d_side"] = d_side;
  j["d_dstyle"] = d_dstyle;
  j["d_sstyle"] = d_sstyle;
  j["k_u"] = k_u;
  j["enc_layers"] = enc_layers;
  j["dec_layers"] = dec_layers;
  j["n_heads"] = n_heads;
  j["d_ff"] = d_ff;
  j["max_doc_len"] = max_doc_len;
  j["max_sum_len"] = max_sum_len;
  j["th"] = th;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ModelConfig c;
  c.d_v = j.at("d_v").get<int>();
  c.d_h = j.at("d_h").get<int>();
  c.d_u = j.at("d_u").get<int>();
  c.d_core = j.at("d_core").get<int>();
  c.d_side = j.at("d_side").get<int>();
  c.d_dstyle = j.at("d_dstyle").get<int>();
  c.d_sstyle = j.at("d_sstyle").get<int>();
  c.k_u = j.at("k_u").get<int>();
  c.enc_layers = j.at("enc_layers").get<int>();
  c.dec_layers = j.at("dec_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.max_doc_len = j.at("max_doc_len").get<int>();
  c.max_sum_len = j.at("max_sum_len").get<int>();
  c.th = j.at("th").get<double>();
  return c;
}

namespace {

Mat init_mat(Rng& rng, long rows, long cols, double std) {
  Mat m(rows, cols);
  for (long c = 0; c < cols; ++c)
    for (long r = 0; r < rows; ++r) m(r, c) = rng.normal() * std;
  return m;
}

Mat xavier(Rng& rng, long rows, long cols) {
  return init_mat(rng, rows, cols,
                  std::sqrt(2.0 / static_cast<double>(rows + cols)));
}

void init_attention(Rng& rng, AttentionWeights& a, int d_h) {
  a.wq = xavier(rng, d_h, d_h);
  a.bq = Mat::Zero(1, d_h);
  a.wk = xavier(rng, d_h, d_h);
  a.bk = Mat::Zero(1, d_h);
  a.wv = xavier(rng, d_h, d_h);
  a.bv = Mat::Zero(1, d_h);
  a.wo = xavier(rng, d_h, d_h);
  a.bo = Mat::Zero(1, d_h);
}

void init_ln(LayerNormWeights& ln, int d_h) {
  ln.gamma = Mat::Ones(1, d_h);
  ln.beta = Mat::Zero(1, d_h);
}

void init_ffn(Rng& rng, FfnWeights& f, int d_h, int d_ff) {
  f.w1 = xavier(rng, d_h, d_ff);
  f.b1 = Mat::Zero(1, d_ff);
  f.w2 = xavier(rng, d_ff, d_h);
  f.b2 = Mat::Zero(1, d_h);
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  ModelParams p;
  p.config = cfg;
  Rng rng(seed);

  p.tok_emb = init_mat(rng, cfg.d_v, cfg.d_h, 0.02);
  p.encoder.resize(static_cast<size_t>(cfg.enc_layers));
  for (auto& l : p.encoder) {
    init_ln(l.ln1, cfg.d_h);
    init_attention(rng, l.attn, cfg.d_h);
    init_ln(l.ln2, cfg.d_h);
    init_ffn(rng, l.ffn, cfg.d_h, cfg.d_ff);
  }
  init_ln(p.enc_final_ln, cfg.d_h);

  auto init_decoder = [&](std::vector<DecoderLayerWeights>& dec,
                          LayerNormWeights& final_ln) {
    dec.resize(static_cast<size_t>(cfg.dec_layers));
    for (auto& l : dec) {
      init_ln(l.ln1, cfg.d_h);
      init_attention(rng, l.self_attn, cfg.d_h);
      init_ln(l.ln2, cfg.d_h);
      init_attention(rng, l.cross_attn, cfg.d_h);
      init_ln(l.ln3, cfg.d_h);
      init_ffn(rng, l.ffn, cfg.d_h, cfg.d_ff);
    }
    init_ln(final_ln, cfg.d_h);
  };
  init_decoder(p.recon_decoder, p.recon_final_ln);
  init_decoder(p.pred_decoder, p.pred_final_ln);

  p.confounder_emb = init_mat(rng, cfg.k_u, cfg.d_u, 0.02);
  p.topic_emb = init_mat(rng, cfg.k_u, cfg.d_core + cfg.d_side, 0.02);

  const int d_in = cfg.d_h + cfg.d_u;
  p.post_mean_w = xavier(rng, d_in, cfg.d_latent());
  p.post_mean_b = Mat::Zero(1, cfg.d_latent());
  p.post_logvar_w = xavier(rng, d_in, cfg.d_latent());
  p.post_logvar_b = Mat::Zero(1, cfg.d_latent());
  p.post_ss_mean_w = xavier(rng, d_in, cfg.d_sstyle);
  p.post_ss_mean_b = Mat::Zero(1, cfg.d_sstyle);
  p.post_ss_logvar_w = xavier(rng, d_in, cfg.d_sstyle);
  p.post_ss_logvar_b = Mat::Zero(1, cfg.d_sstyle);

  p.combine_doc_w = xavier(rng, cfg.d_latent(), cfg.d_h);
  p.combine_doc_b = Mat::Zero(1, cfg.d_h);
  p.combine_sum_w = xavier(rng, cfg.d_core + cfg.d_sstyle, cfg.d_h);
  p.combine_sum_b = Mat::Zero(1, cfg.d_h);

  p.vocab_doc_w = xavier(rng, cfg.d_h, cfg.d_v);
  p.vocab_doc_b = Mat::Zero(1, cfg.d_v);
  p.vocab_sum_w = xavier(rng, cfg.d_h, cfg.d_v);
  p.vocab_sum_b = Mat::Zero(1, cfg.d_v);
  return p;
}

namespace {

template <typename Self, typename Fn>
void visit_tensors(Self& p, const Fn& fn) {
  fn("tok_emb", p.tok_emb);
  auto visit_ln = [&fn](const std::string& prefix, auto& ln) {
    fn(prefix + ".gamma", ln.gamma);
    fn(prefix + ".beta", ln.beta);
  };
  auto visit_attn = [&fn](const std::string& prefix, auto& a) {
    fn(prefix + ".wq", a.wq);
    fn(prefix + ".bq", a.bq);
    fn(prefix + ".wk", a.wk);
    fn(prefix + ".bk", a.bk);
    fn(prefix + ".wv", a.wv);
    fn(prefix + ".bv", a.bv);
    fn(prefix + ".wo", a.wo);
    fn(prefix + ".bo", a.bo);
  };
  auto visit_ffn = [&fn](const std::string& prefix, auto& f) {
    fn(prefix + ".w1", f.w1);
    fn(prefix + ".b1", f.b1);
    fn(prefix + ".w2", f.w2);
    fn(prefix + ".b2", f.b2);
  };
  for (size_t i = 0; i < p.encoder.size(); ++i) {
    const std::string pre = "enc." + std::to_string(i);
    auto& l = p.encoder[i];
    visit_ln(pre + ".ln1", l.ln1);
    visit_attn(pre + ".attn", l.attn);
    visit_ln(pre + ".ln2", l.ln2);
    visit_ffn(pre + ".ffn", l.ffn);
  }
  visit_ln("enc.final_ln", p.enc_final_ln);
  auto visit_decoder = [&](const std::string& name, auto& dec,
                           auto& final_ln) {
    for (size_t i = 0; i < dec.size(); ++i) {
      const std::string pre = name + "." + std::to_string(i);
      auto& l = dec[i];
      visit_ln(pre + ".ln1", l.ln1);
      visit_attn(pre + ".self", l.self_attn);
      visit_ln(pre + ".ln2", l.ln2);
      visit_attn(pre + ".cross", l.cross_attn);
      visit_ln(pre + ".ln3", l.ln3);
      visit_ffn(pre + ".ffn", l.ffn);
    }
    visit_ln(name + ".final_ln", final_ln);
  };
  visit_decoder("dec_recon", p.recon_decoder, p.recon_final_ln);
  visit_decoder("dec_pred", p.pred_decoder, p.pred_final_ln);
  fn("confounder_emb", p.confounder_emb);
  fn("topic_emb", p.topic_emb);
  fn("post_mean_w", p.post_mean_w);
  fn("post_mean_b", p.post_mean_b);
  fn("post_logvar_w", p.post_logvar_w);
  fn("post_logvar_b", p.post_logvar_b);
  fn("post_ss_mean_w", p.post_ss_mean_w);
  fn("post_ss_mean_b", p.post_ss_mean_b);
  fn("post_ss_logvar_w", p.post_ss_logvar_w);
  fn("post_ss_logvar_b", p.post_ss_logvar_b);
  fn("combine_doc_w", p.combine_doc_w);
  fn("combine_doc_b", p.combine_doc_b);
  fn("combine_sum_w", p.combine_sum_w);
  fn("combine_sum_b", p.combine_sum_b);
  fn("vocab_doc_w", p.vocab_doc_w);
  fn("vocab_doc_b", p.vocab_doc_b);
  fn("vocab_sum_w", p.vocab_sum_w);
  fn("vocab_sum_b", p.vocab_sum_b);
}

}  // namespace

void ModelParams::for_each_tensor(
    const std::function<void(const std::string&, Mat&)>& fn) {
  visit_tensors(*this, fn);
}

void ModelParams::for_each_tensor(
    const std::function<void(const std::string&, const Mat&)>& fn) const {
  visit_tensors(*this, fn);
}

int64_t ModelParams::parameter_count() const {
  int64_t n = 0;
  for_each_tensor([&n](const std::string&, const Mat& m) { n += m.size(); });
  return n;
}

void save_checkpoint(const std::string& stem, const ModelParams& params,
                     const CheckpointMeta& meta) {
  std::vector<std::pair<std::string, const Mat*>> tensors;
  params.for_each_tensor([&tensors](const std::string& name, const Mat& m) {
    tensors.emplace_back(name, &m);
  });
  io::write_tensors(stem + ".bin", tensors);

  nlohmann::json j;
  j["model_config"] = nlohmann::json::parse(params.config.to_json());
  j["vocab_hash"] = meta.vocab_hash;
  j["topic_model_hash"] = meta.topic_model_hash;
  j["seed"] = meta.seed;
  j["step_count"] = meta.step_count;
  j["corpus_mean_cr"] = meta.corpus_mean_cr;
  j["train_config"] = meta.train_config;
  j["params_hash"] = to_hex(checkpoint_params_hash(params));
  std::ofstream out(stem + ".json");
  require(out.good(), "save_checkpoint: cannot write " + stem + ".json");
  out << j.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& stem) {
  std::ifstream jin(stem + ".json");
  require(jin.good(), "load_checkpoint: cannot open " + stem + ".json");
  nlohmann::json j;
  jin >> j;

  Checkpoint ck;
  ck.params.config = ModelConfig::from_json(j.at("model_config").dump());
  ck.params = ModelParams::init(ck.params.config, 0);
  auto tensors = io::read_tensors(stem + ".bin");
  ck.params.for_each_tensor([&tensors, &stem](const std::string& name, Mat& m) {
    auto it = tensors.find(name);
    require(it != tensors.end(),
            "load_checkpoint: missing tensor '" + name + "' in " + stem);
    require(it->second.rows() == m.rows() && it->second.cols() == m.cols(),
            "load_checkpoint: shape mismatch for tensor '" + name + "'");
    m = it->second;
  });
  ck.meta.vocab_hash = j.at("vocab_hash").get<std::string>();
  ck.meta.topic_model_hash = j.at("topic_model_hash").get<std::string>();
  ck.meta.seed = j.at("seed").get<uint64_t>();
  ck.meta.step_count = j.at("step_count").get<int64_t>();
  ck.meta.corpus_mean_cr = j.at("corpus_mean_cr").get<double>();
  if (j.contains("train_config"))
    ck.meta.train_config =
        j.at("train_config").get<std::map<std::string, std::string>>();
  return ck;
}

uint64_t checkpoint_params_hash(const ModelParams& params) {
  uint64_t h = 0xcbf29ce484222325ull;
  params.for_each_tensor([&h](const std::string& name, const Mat& m) {
    h ^= fnv1a64(name);
    h *= 0x100000001b3ull;
    h ^= fnv1a64(m.data(), sizeof(double) * static_cast<size_t>(m.size()));
    h *= 0x100000001b3ull;
  });
  return h;
}

// ---------------------------------------------------------------------------

Var ParamVars::at(const std::string& name) const {
  auto it = vars.find(name);
  require(it != vars.end(), "ParamVars: unknown tensor '" + name + "'");
  return it->second;
}

ParamVars ParamVars::leaves(Tape& tape, const ModelParams& params) {
  ParamVars pv;
  params.for_each_tensor([&](const std::string& name, const Mat& m) {
    pv.vars.emplace(name, tape.leaf(m));
  });
  return pv;
}

RowVec positional_row(int pos, int d_h) {
  RowVec r(d_h);
  for (int i = 0; i < d_h; ++i) {
    const double exponent = static_cast<double>(2 * (i / 2)) / d_h;
    const double angle = pos / std::pow(10000.0, exponent);
    r(i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
  }
  return r;
}

namespace {

Mat positional_block(int n, int d_h) {
  Mat m(n, d_h);
  for (int p = 0; p < n; ++p) m.row(p) = positional_row(p, d_h);
  return m;
}

struct AttnNames {
  std::string prefix;
};

/// Multi-head attention. `mask` (queries x keys additive, or empty) applies
/// to the scores; `kill_row0` zeroes the first query row's output so that
/// the latent slot never receives cross-attention context.
Var multihead_attention(Tape& tape, const ParamVars& pv,
                        const std::string& prefix, const ModelConfig& cfg,
                        Var x_q, Var x_kv, const Mat& mask, bool kill_row0,
                        std::vector<Mat>* attn_out) {
  Var q = ad::add_rowvec(ad::matmul(x_q, pv.at(prefix + ".wq")),
                         pv.at(prefix + ".bq"));
  Var k = ad::add_rowvec(ad::matmul(x_kv, pv.at(prefix + ".wk")),
                         pv.at(prefix + ".bk"));
  Var v = ad::add_rowvec(ad::matmul(x_kv, pv.at(prefix + ".wv")),
                         pv.at(prefix + ".bv"));
  const int dk = cfg.d_h / cfg.n_heads;
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  Var ctx{nullptr, -1};
  for (int h = 0; h < cfg.n_heads; ++h) {
    Var qh = ad::slice_cols(q, h * dk, dk);
    Var kh = ad::slice_cols(k, h * dk, dk);
    Var vh = ad::slice_cols(v, h * dk, dk);
    Var scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt_dk);
    if (mask.size() > 0) scores = ad::add_const(scores, mask);
    Var attn = ad::softmax_rows(scores);
    if (attn_out) attn_out->push_back(tape.val(attn));
    Var ctx_h = ad::matmul(attn, vh);
    ctx = (h == 0) ? ctx_h : ad::concat_cols(ctx, ctx_h);
  }
  Var out = ad::add_rowvec(ad::matmul(ctx, pv.at(prefix + ".wo")),
                           pv.at(prefix + ".bo"));
  if (kill_row0) {
    Mat rowmask = Mat::Ones(tape.val(out).rows(), 1);
    rowmask(0, 0) = 0.0;
    out = ad::mul_colvec(out, tape.constant(rowmask));
  }
  return out;
}

Var ffn_forward(Tape& tape, const ParamVars& pv, const std::string& prefix,
                Var x) {
  (void)tape;
  Var h = ad::gelu(ad::add_rowvec(ad::matmul(x, pv.at(prefix + ".w1")),
                                  pv.at(prefix + ".b1")));
  return ad::add_rowvec(ad::matmul(h, pv.at(prefix + ".w2")),
                        pv.at(prefix + ".b2"));
}

Var layer_norm_named(const ParamVars& pv, const std::string& prefix, Var x) {
  return ad::layer_norm(x, pv.at(prefix + ".gamma"), pv.at(prefix + ".beta"));
}

Mat causal_mask(int n) {
  Mat m = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) m(i, j) = -1e30;
  return m;
}

}  // namespace

EncodeGraph encoder_forward(Tape& tape, const ParamVars& pv,
                            const ModelConfig& cfg,
                            const std::vector<int>& doc_tokens) {
  require(!doc_tokens.empty(), "encoder_forward: empty document");
  require(doc_tokens[0] == corpus::kCls,
          "encoder_forward: document must begin with [CLS]");
  require(static_cast<int>(doc_tokens.size()) <= cfg.max_doc_len,
          "encoder_forward: document longer than max_doc_len");
  const int n = static_cast<int>(doc_tokens.size());
  Var x = ad::add_const(ad::gather_rows(pv.at("tok_emb"), doc_tokens),
                        positional_block(n, cfg.d_h));
  for (int i = 0; i < cfg.enc_layers; ++i) {
    const std::string pre = "enc." + std::to_string(i);
    Var a = layer_norm_named(pv, pre + ".ln1", x);
    x = ad::add(x, multihead_attention(tape, pv, pre + ".attn", cfg, a, a,
                                       Mat(), false, nullptr));
    Var f = layer_norm_named(pv, pre + ".ln2", x);
    x = ad::add(x, ffn_forward(tape, pv, pre + ".ffn", f));
  }
  x = layer_norm_named(pv, "enc.final_ln", x);
  EncodeGraph g;
  g.seq = x;
  g.h_doc = ad::slice_rows(x, 0, 1);
  return g;
}

PosteriorGraph posterior_forward(Tape& tape, const ParamVars& pv,
                                 const ModelConfig& cfg, Var h_doc, int tid,
                                 const LatentNoise& noise,
                                 const AblationFlags& flags) {
  require(tid >= 0 && tid < cfg.k_u,
          "posterior_forward: confounder id out of range");
  const int tid_eff = flags.no_confounder ? 0 : tid;
  Var h_u = ad::gather_rows(pv.at("confounder_emb"), {tid_eff});
  Var z = ad::concat_cols(h_doc, h_u);

  PosteriorGraph g;
  g.mu = ad::add_rowvec(ad::matmul(z, pv.at("post_mean_w")),
                        pv.at("post_mean_b"));
  g.logvar = ad::add_rowvec(ad::matmul(z, pv.at("post_logvar_w")),
                            pv.at("post_logvar_b"));

  auto sample_block = [&tape](Var mu, Var logvar, const RowVec& eps) -> Var {
    if (eps.size() == 0) return mu;
    Var sigma = ad::exp_(ad::scale(logvar, 0.5));
    return ad::add(mu, ad::mul(sigma, tape.constant(eps)));
  };

  Var mu_core = ad::slice_cols(g.mu, 0, cfg.d_core);
  Var mu_side = ad::slice_cols(g.mu, cfg.d_core, cfg.d_side);
  Var mu_dstyle = ad::slice_cols(g.mu, cfg.d_core + cfg.d_side, cfg.d_dstyle);
  Var lv_core = ad::slice_cols(g.logvar, 0, cfg.d_core);
  Var lv_side = ad::slice_cols(g.logvar, cfg.d_core, cfg.d_side);
  Var lv_dstyle =
      ad::slice_cols(g.logvar, cfg.d_core + cfg.d_side, cfg.d_dstyle);

  g.h_core = sample_block(mu_core, lv_core, noise.core);
  g.h_side = sample_block(mu_side, lv_side, noise.side);
  g.h_dstyle = sample_block(mu_dstyle, lv_dstyle, noise.dstyle);

  if (flags.no_style_guidance) {
    if (flags.style_mode == "copy_ds") {
      g.mu_ss = mu_dstyle;
      g.logvar_ss = lv_dstyle;
    } else {
      require(flags.style_mode == "own_head",
              "posterior_forward: style_mode must be own_head or copy_ds");
      g.mu_ss = ad::add_rowvec(ad::matmul(z, pv.at("post_ss_mean_w")),
                               pv.at("post_ss_mean_b"));
      g.logvar_ss = ad::add_rowvec(ad::matmul(z, pv.at("post_ss_logvar_w")),
                                   pv.at("post_ss_logvar_b"));
    }
    g.h_sstyle_own = sample_block(*g.mu_ss, *g.logvar_ss, noise.sstyle);
  }
  return g;
}

namespace {

DecodeGraph decode_common(Tape& tape, const ParamVars& pv,
                          const ModelConfig& cfg, const std::string& dec_name,
                          Var h_inject, const std::vector<int>& prefix_tokens,
                          Var enc_seq, const AblationFlags& flags,
                          const std::string& vocab_w,
                          const std::string& vocab_b, int max_len) {
  const int n = static_cast<int>(prefix_tokens.size()) + 1;
  require(n <= max_len, "decode: prefix longer than the configured maximum");

  Var row0 = flags.no_replacement
                 ? ad::gather_rows(pv.at("tok_emb"),
                                   std::vector<int>{corpus::kBos})
                 : h_inject;
  Var x = prefix_tokens.empty()
              ? row0
              : ad::concat_rows(row0,
                                ad::gather_rows(pv.at("tok_emb"),
                                                prefix_tokens));
  x = ad::add_const(x, positional_block(n, cfg.d_h));

  const Mat self_mask = causal_mask(n);
  DecodeGraph g;
  for (int i = 0; i < cfg.dec_layers; ++i) {
    const std::string pre = dec_name + "." + std::to_string(i);
    Var a = layer_norm_named(pv, pre + ".ln1", x);
    x = ad::add(x, multihead_attention(tape, pv, pre + ".self", cfg, a, a,
                                       self_mask, false, nullptr));
    Var b = layer_norm_named(pv, pre + ".ln2", x);
    x = ad::add(x, multihead_attention(tape, pv, pre + ".cross", cfg, b,
                                       enc_seq, Mat(), /*kill_row0=*/true,
                                       &g.cross_attn));
    Var c = layer_norm_named(pv, pre + ".ln3", x);
    x = ad::add(x, ffn_forward(tape, pv, pre + ".ffn", c));
  }
  x = layer_norm_named(pv, dec_name + ".final_ln", x);
  g.final_hidden = x;
  g.h_inject = h_inject;
  Var with_latent = flags.no_addition ? x : ad::add_rowvec(x, h_inject);
  g.logits = ad::add_rowvec(ad::matmul(with_latent, pv.at(vocab_w)),
                            pv.at(vocab_b));
  return g;
}

}  // namespace

DecodeGraph reconstruction_decode(Tape& tape, const ParamVars& pv,
                                  const ModelConfig& cfg, Var h_core,
                                  Var h_side, Var h_dstyle,
                                  const std::vector<int>& prefix_tokens,
                                  Var enc_seq, const AblationFlags& flags) {
  Var lat = ad::concat_cols(ad::concat_cols(h_core, h_side), h_dstyle);
  Var h_x = ad::add_rowvec(ad::matmul(lat, pv.at("combine_doc_w")),
                           pv.at("combine_doc_b"));
  return decode_common(tape, pv, cfg, "dec_recon", h_x, prefix_tokens,
                       enc_seq, flags, "vocab_doc_w", "vocab_doc_b",
                       cfg.max_doc_len);
}

DecodeGraph prediction_decode(Tape& tape, const ParamVars& pv,
                              const ModelConfig& cfg, Var h_core,
                              Var h_sstyle,
                              const std::vector<int>& prefix_tokens,
                              Var enc_seq, const AblationFlags& flags) {
  Var lat = ad::concat_cols(h_core, h_sstyle);
  Var h_y = ad::add_rowvec(ad::matmul(lat, pv.at("combine_sum_w")),
                           pv.at("combine_sum_b"));
  return decode_common(tape, pv, cfg, "dec_pred", h_y, prefix_tokens, enc_seq,
                       flags, "vocab_sum_w", "vocab_sum_b", cfg.max_sum_len);
}

// --- eval-mode wrappers ------------------------------------------------------

LatentNoise draw_noise(const ModelConfig& cfg, Rng& rng, bool with_sstyle) {
  LatentNoise n;
  auto draw = [&rng](int d) {
    RowVec v(d);
    for (int i = 0; i < d; ++i) v(i) = rng.normal();
    return v;
  };
  n.core = draw(cfg.d_core);
  n.side = draw(cfg.d_side);
  n.dstyle = draw(cfg.d_dstyle);
  if (with_sstyle) n.sstyle = draw(cfg.d_sstyle);
  return n;
}

LatentBundle encode_document(const ModelParams& params,
                             const std::vector<int>& doc_tokens, int tid,
                             Rng* rng, const AblationFlags& flags) {
  const ModelConfig& cfg = params.config;
  Tape tape;
  ParamVars pv = ParamVars::leaves(tape, params);
  EncodeGraph enc = encoder_forward(tape, pv, cfg, doc_tokens);
  LatentNoise noise;
  if (rng) noise = draw_noise(cfg, *rng, flags.no_style_guidance);
  PosteriorGraph post = posterior_forward(tape, pv, cfg, enc.h_doc, tid,
                                          noise, flags);
  LatentBundle b;
  b.tid = tid;
  b.h_doc = tape.val(enc.h_doc).row(0);
  const int tid_eff = flags.no_confounder ? 0 : tid;
  b.h_u = params.confounder_emb.row(tid_eff);
  b.h_core = tape.val(post.h_core).row(0);
  b.h_side = tape.val(post.h_side).row(0);
  b.h_dstyle = tape.val(post.h_dstyle).row(0);
  const Mat& mu = tape.val(post.mu);
  const Mat& lv = tape.val(post.logvar);
  b.posterior.mu_core = mu.row(0).segment(0, cfg.d_core);
  b.posterior.mu_side = mu.row(0).segment(cfg.d_core, cfg.d_side);
  b.posterior.mu_dstyle =
      mu.row(0).segment(cfg.d_core + cfg.d_side, cfg.d_dstyle);
  b.posterior.logv_core = lv.row(0).segment(0, cfg.d_core);
  b.posterior.logv_side = lv.row(0).segment(cfg.d_core, cfg.d_side);
  b.posterior.logv_dstyle =
      lv.row(0).segment(cfg.d_core + cfg.d_side, cfg.d_dstyle);
  if (post.mu_ss) {
    b.posterior.mu_sstyle = tape.val(*post.mu_ss).row(0);
    b.posterior.logv_sstyle = tape.val(*post.logvar_ss).row(0);
    b.h_sstyle = tape.val(*post.h_sstyle_own).row(0);
  }
  return b;
}

RowVec derive_summary_style(const RowVec& h_dstyle, double cr) {
  require(cr > 0.0, "derive_summary_style: cr must be positive");
  return h_dstyle * cr;
}

Mat decode_reconstruction(const ModelParams& params, const RowVec& h_core,
                          const RowVec& h_side, const RowVec& h_dstyle,
                          const std::vector<int>& prefix_tokens,
                          const std::vector<int>& doc_tokens,
                          const AblationFlags& flags) {
  Tape tape;
  ParamVars pv = ParamVars::leaves(tape, params);
  EncodeGraph enc = encoder_forward(tape, pv, params.config, doc_tokens);
  DecodeGraph g = reconstruction_decode(
      tape, pv, params.config, tape.leaf(h_core), tape.leaf(h_side),
      tape.leaf(h_dstyle), prefix_tokens, enc.seq, flags);
  return tape.val(g.logits);
}

Mat decode_prediction(const ModelParams& params, const RowVec& h_core,
                      const RowVec& h_sstyle,
                      const std::vector<int>& prefix_tokens,
                      const std::vector<int>& doc_tokens,
                      const AblationFlags& flags) {
  Tape tape;
  ParamVars pv = ParamVars::leaves(tape, params);
  EncodeGraph enc = encoder_forward(tape, pv, params.config, doc_tokens);
  DecodeGraph g = prediction_decode(tape, pv, params.config,
                                    tape.leaf(h_core), tape.leaf(h_sstyle),
                                    prefix_tokens, enc.seq, flags);
  return tape.val(g.logits);
}

namespace {

struct BeamState {
  std::vector<int> tokens;
  double logp = 0.0;
  bool finished = false;
};

}  // namespace

std::vector<int> generate(const ModelParams& params, const RowVec& h_core,
                          const RowVec& h_sstyle,
                          const std::vector<int>& doc_tokens, int max_len,
                          const GenStrategy& strategy,
                          const AblationFlags& flags) {
  require(max_len >= 1, "generate: max_len must be at least 1");
  const int width = strategy.kind == GenStrategy::kGreedy
                        ? 1
                        : std::max(1, strategy.beam_width);
  const ModelConfig& cfg = params.config;
  const int cap = std::min(max_len, cfg.max_sum_len - 1);

  std::vector<BeamState> beams{BeamState{}};
  for (int step = 0; step < cap; ++step) {
    bool all_done = true;
    for (const auto& b : beams)
      if (!b.finished) all_done = false;
    if (all_done) break;

    struct Cand {
      double score;
      size_t beam;
      int token;
    };
    std::vector<Cand> cands;
    std::vector<BeamState> kept;
    for (size_t bi = 0; bi < beams.size(); ++bi) {
      const BeamState& b = beams[bi];
      if (b.finished) {
        kept.push_back(b);
        continue;
      }
      Tape tape;
      ParamVars pv = ParamVars::leaves(tape, params);
      EncodeGraph enc = encoder_forward(tape, pv, cfg, doc_tokens);
      DecodeGraph g = prediction_decode(tape, pv, cfg, tape.leaf(h_core),
                                        tape.leaf(h_sstyle), b.tokens,
                                        enc.seq, flags);
      const Mat& logits = tape.val(g.logits);
      const Eigen::RowVectorXd row = logits.row(logits.rows() - 1);
      // log softmax of the last row
      const double m = row.maxCoeff();
      const double lse = std::log((row.array() - m).exp().sum()) + m;
      for (int tok = 0; tok < cfg.d_v; ++tok)
        cands.push_back(Cand{b.logp + row(tok) - lse, bi, tok});
    }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Cand& a, const Cand& b) {
                       if (a.score != b.score) return a.score > b.score;
                       if (a.beam != b.beam) return a.beam < b.beam;
                       return a.token < b.token;
                     });
    for (const Cand& c : cands) {
      if (static_cast<int>(kept.size()) >= width) break;
      BeamState nb = beams[c.beam];
      nb.logp = c.score;
      if (c.token == corpus::kEos) {
        nb.finished = true;
      } else {
        nb.tokens.push_back(c.token);
        if (static_cast<int>(nb.tokens.size()) >= cap) nb.finished = true;
      }
      kept.push_back(std::move(nb));
    }
    beams = std::move(kept);
  }

  const BeamState* best = &beams.front();
  for (const auto& b : beams)
    if (b.logp > best->logp) best = &b;
  return best->tokens;
}

}  // namespace ciseq::model
