#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ciseq/common.hpp"
#include "ciseq/tape.hpp"

namespace ciseq::model {

using Mat = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;

/// Ablation switches. Each flag changes exactly one edge of the
/// computation graph; see the trainer for the loss-side effects.
struct AblationFlags {
  bool no_addition = false;         // drop the +h_x / +h_y term on outputs
  bool no_replacement = false;      // feed BOS at position 0 instead of h_x/h_y
  bool no_confounder = false;       // single shared confounder embedding row
  bool no_content_guidance = false; // L_LDA = 0
  bool no_style_guidance = false;   // sum-style latent gets its own posterior
  // How the sum-style latent is sampled under no_style_guidance:
  // "own_head" uses a dedicated projection; "copy_ds" reuses the
  // doc-style posterior with fresh noise.
  std::string style_mode = "own_head";
};

struct ModelConfig {
  int d_v = 0;       // vocabulary size
  int d_h = 64;      // hidden size
  int d_u = 8;       // confounder embedding size
  int d_core = 16;   // core-content latent size
  int d_side = 32;   // side-content latent size
  int d_dstyle = 16; // document-style latent size
  int d_sstyle = 16; // summary-style latent size (must equal d_dstyle)
  int k_u = 5;
  int enc_layers = 2;
  int dec_layers = 2;
  int n_heads = 4;
  int d_ff = 256;
  int max_doc_len = 64;
  int max_sum_len = 24;
  double th = 0.25;  // core/side topic threshold

  /// Desk-scale profile used across tests and experiments.
  static ModelConfig toy(int vocab_size);
  /// Reference profile: d_h 1024, d_u 16, core 128, side 256, styles 128,
  /// k_u 5, lengths 512/64. Not trained here; recorded for completeness.
  static ModelConfig reference(int vocab_size);

  void validate() const;
  int d_latent() const { return d_core + d_side + d_dstyle; }

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

struct AttentionWeights {
  Mat wq, bq, wk, bk, wv, bv, wo, bo;
};
struct LayerNormWeights {
  Mat gamma, beta;  // 1 x d_h
};
struct FfnWeights {
  Mat w1, b1, w2, b2;
};
struct EncoderLayerWeights {
  LayerNormWeights ln1;
  AttentionWeights attn;
  LayerNormWeights ln2;
  FfnWeights ffn;
};
struct DecoderLayerWeights {
  LayerNormWeights ln1;
  AttentionWeights self_attn;
  LayerNormWeights ln2;
  AttentionWeights cross_attn;
  LayerNormWeights ln3;
  FfnWeights ffn;
};

struct GaussianPosterior {
  RowVec mu_core, mu_side, mu_dstyle;
  RowVec logv_core, logv_side, logv_dstyle;
  // present only when the summary-style latent has its own head
  std::optional<RowVec> mu_sstyle, logv_sstyle;
};

struct LatentBundle {
  RowVec h_doc;    // d_h, encoder state at [CLS]
  RowVec h_u;      // d_u
  RowVec h_core;   // d_core
  RowVec h_side;   // d_side
  RowVec h_dstyle; // d_dstyle
  RowVec h_sstyle; // d_sstyle; empty until derive_summary_style
  GaussianPosterior posterior;
  double cr = 0.0;
  int tid = 0;
};

/// All trainable tensors. The two decoder stacks never share weights.
struct ModelParams {
  ModelConfig config;

  Mat tok_emb;  // d_v x d_h, shared by encoder and both decoders
  std::vector<EncoderLayerWeights> encoder;
  LayerNormWeights enc_final_ln;
  std::vector<DecoderLayerWeights> recon_decoder;
  LayerNormWeights recon_final_ln;
  std::vector<DecoderLayerWeights> pred_decoder;
  LayerNormWeights pred_final_ln;

  Mat confounder_emb;  // k_u x d_u
  Mat topic_emb;       // k_u x (d_core + d_side); first block targets the
                       // core latent, second block the side latent
  Mat post_mean_w, post_mean_b;      // (d_h+d_u) x d_latent, 1 x d_latent
  Mat post_logvar_w, post_logvar_b;
  Mat post_ss_mean_w, post_ss_mean_b;      // (d_h+d_u) x d_sstyle
  Mat post_ss_logvar_w, post_ss_logvar_b;
  Mat combine_doc_w, combine_doc_b;  // (d_core+d_side+d_dstyle) x d_h
  Mat combine_sum_w, combine_sum_b;  // (d_core+d_sstyle) x d_h
  Mat vocab_doc_w, vocab_doc_b;      // d_h x d_v
  Mat vocab_sum_w, vocab_sum_b;      // d_h x d_v

  static ModelParams init(const ModelConfig& cfg, uint64_t seed);

  /// Visits every tensor in a fixed order under stable names; the order
  /// defines the checkpoint layout and the optimizer state layout.
  void for_each_tensor(
      const std::function<void(const std::string&, Mat&)>& fn);
  void for_each_tensor(
      const std::function<void(const std::string&, const Mat&)>& fn) const;
  int64_t parameter_count() const;
};

/// Checkpoint = <stem>.bin tensor blob + <stem>.json manifest.
struct CheckpointMeta {
  std::string vocab_hash;
  std::string topic_model_hash;
  uint64_t seed = 0;
  int64_t step_count = 0;
  double corpus_mean_cr = 0.0;
  std::map<std::string, std::string> train_config;
};
void save_checkpoint(const std::string& stem, const ModelParams& params,
                     const CheckpointMeta& meta);
struct Checkpoint {
  ModelParams params;
  CheckpointMeta meta;
};
Checkpoint load_checkpoint(const std::string& stem);
uint64_t checkpoint_params_hash(const ModelParams& params);

// --- tape-level forward builders ------------------------------------------

/// Parameter tensors registered as tape leaves, in for_each_tensor order.
struct ParamVars {
  std::map<std::string, ad::Var> vars;
  ad::Var at(const std::string& name) const;
  static ParamVars leaves(ad::Tape& tape, const ModelParams& params);
};

struct EncodeGraph {
  ad::Var seq;    // doc_len x d_h encoder outputs
  ad::Var h_doc;  // 1 x d_h, row at [CLS]
};
EncodeGraph encoder_forward(ad::Tape& tape, const ParamVars& pv,
                            const ModelConfig& cfg,
                            const std::vector<int>& doc_tokens);

/// Pre-drawn reparametrization noise; empty matrices mean eval mode
/// (latents = posterior means).
struct LatentNoise {
  RowVec core, side, dstyle, sstyle;
  bool empty() const { return core.size() == 0; }
};

/// Draws one noise vector per latent block, in a fixed block order.
LatentNoise draw_noise(const ModelConfig& cfg, Rng& rng, bool with_sstyle);

struct PosteriorGraph {
  ad::Var mu, logvar;              // 1 x d_latent
  ad::Var h_core, h_side, h_dstyle;
  std::optional<ad::Var> mu_ss, logvar_ss, h_sstyle_own;
};
PosteriorGraph posterior_forward(ad::Tape& tape, const ParamVars& pv,
                                 const ModelConfig& cfg, ad::Var h_doc,
                                 int tid, const LatentNoise& noise,
                                 const AblationFlags& flags);

struct DecodeGraph {
  ad::Var logits;        // prefix_len x d_v
  ad::Var final_hidden;  // prefix_len x d_h, before the latent addition
  ad::Var h_inject;      // 1 x d_h combined latent
  std::vector<Mat> cross_attn;  // per layer*head attention (prefix x src)
};

/// Teacher-forced decoder pass. Position 0 carries the combined latent (or
/// BOS under no_replacement); positions >= 1 carry prefix_tokens embeddings.
/// Self-attention is causal; position 0 never cross-attends.
DecodeGraph reconstruction_decode(ad::Tape& tape, const ParamVars& pv,
                                  const ModelConfig& cfg, ad::Var h_core,
                                  ad::Var h_side, ad::Var h_dstyle,
                                  const std::vector<int>& prefix_tokens,
                                  ad::Var enc_seq,
                                  const AblationFlags& flags = {});
DecodeGraph prediction_decode(ad::Tape& tape, const ParamVars& pv,
                              const ModelConfig& cfg, ad::Var h_core,
                              ad::Var h_sstyle,
                              const std::vector<int>& prefix_tokens,
                              ad::Var enc_seq,
                              const AblationFlags& flags = {});

// --- plain (eval-mode) convenience API -------------------------------------

/// Runs the encoder and posterior heads. rng == nullptr means eval mode;
/// otherwise one reparametrization sample per latent block is drawn from it.
/// The returned bundle has no h_sstyle yet.
LatentBundle encode_document(const ModelParams& params,
                             const std::vector<int>& doc_tokens, int tid,
                             Rng* rng, const AblationFlags& flags = {});

/// h_ss = cr * h_ds (elementwise scalar multiplication).
RowVec derive_summary_style(const RowVec& h_dstyle, double cr);

/// Teacher-forced logits for the document decoder.
Mat decode_reconstruction(const ModelParams& params, const RowVec& h_core,
                          const RowVec& h_side, const RowVec& h_dstyle,
                          const std::vector<int>& prefix_tokens,
                          const std::vector<int>& doc_tokens,
                          const AblationFlags& flags = {});
/// Teacher-forced logits for the summary decoder.
Mat decode_prediction(const ModelParams& params, const RowVec& h_core,
                      const RowVec& h_sstyle,
                      const std::vector<int>& prefix_tokens,
                      const std::vector<int>& doc_tokens,
                      const AblationFlags& flags = {});

struct GenStrategy {
  enum Kind { kGreedy, kBeam } kind = kGreedy;
  int beam_width = 1;
  static GenStrategy greedy() { return {kGreedy, 1}; }
  static GenStrategy beam(int k) { return {kBeam, k}; }
};

/// Autoregressive summary generation from the injected latents. Stops at
/// EOS or after max_len generated tokens; EOS is not included in the output.
std::vector<int> generate(const ModelParams& params, const RowVec& h_core,
                          const RowVec& h_sstyle,
                          const std::vector<int>& doc_tokens, int max_len,
                          const GenStrategy& strategy,
                          const AblationFlags& flags = {});

/// Sinusoidal positional row (1 x d_h).
RowVec positional_row(int pos, int d_h);

}  // namespace ciseq::model
