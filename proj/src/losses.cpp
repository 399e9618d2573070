#include <cmath>

#include "ciseq/common.hpp"
#include "ciseq/train.hpp"

namespace ciseq::train {

using ad::Tape;
using ad::Var;

void TrainConfig::validate() const {
  require(lambda_kl >= 0.0 && lambda_lda >= 0.0,
          "TrainConfig: loss weights must be nonnegative");
  require(lr > 0.0, "TrainConfig: learning rate must be positive");
  require(batch_size >= 1 && steps >= 0, "TrainConfig: bad sizes");
}

std::map<std::string, std::string> TrainConfig::as_map() const {
  std::map<std::string, std::string> m;
  auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  m["lambda_kl"] = num(lambda_kl);
  m["lambda_lda"] = num(lambda_lda);
  m["lr"] = num(lr);
  m["batch_size"] = std::to_string(batch_size);
  m["steps"] = std::to_string(steps);
  m["seed"] = std::to_string(seed);
  m["warmup_steps"] = std::to_string(warmup_steps);
  m["kl_anneal_steps"] = std::to_string(kl_anneal_steps);
  m["no_addition"] = flags.no_addition ? "true" : "false";
  m["no_replacement"] = flags.no_replacement ? "true" : "false";
  m["no_confounder"] = flags.no_confounder ? "true" : "false";
  m["no_content_guidance"] = flags.no_content_guidance ? "true" : "false";
  m["no_style_guidance"] = flags.no_style_guidance ? "true" : "false";
  m["style_mode"] = flags.style_mode;
  return m;
}

TopicArtifacts make_topic_artifacts(const topics::TopicModel& tm,
                                    const std::vector<int>& doc_tokens,
                                    double th) {
  TopicArtifacts a;
  const topics::TopicDistribution dist = tm.infer(doc_tokens);
  a.tid = topics::confounder_id(dist);
  const topics::CoreSideSplit split = topics::core_side_split(dist, th);
  a.p_ct = split.p_ct.probs.transpose();
  a.p_st = split.p_st.probs.transpose();
  return a;
}

double analytic_kl_standard_normal(const Eigen::RowVectorXd& mu,
                                   const Eigen::RowVectorXd& logvar) {
  require(mu.size() == logvar.size(),
          "analytic_kl_standard_normal: size mismatch");
  return -0.5 * (1.0 + logvar.array() - mu.array().square() -
                 logvar.array().exp())
                    .sum();
}

namespace {

/// Tape version of the same analytic formula.
Var kl_standard_normal(Tape& tape, Var mu, Var logvar) {
  const Mat ones = Mat::Ones(tape.val(logvar).rows(), tape.val(logvar).cols());
  Var inner = ad::sub(ad::sub(ad::add_const(logvar, ones), ad::square(mu)),
                      ad::exp_(logvar));
  return ad::scale(ad::sum_all(inner), -0.5);
}

struct SampleLoss {
  double l_r, l_p, l_kl, l_lda, total;
};

SampleLoss sample_loss_graph(const model::ModelParams& params,
                             const Example& ex, const model::LatentNoise& noise,
                             const TrainConfig& cfg, double lambda_kl_eff,
                             GradMap* grads) {
  const model::ModelConfig& mc = params.config;
  const model::AblationFlags& flags = cfg.flags;
  const auto& doc = ex.pair.doc_tokens;
  const auto& sum = ex.pair.sum_tokens;
  require(doc.size() >= 2 && sum.size() >= 1,
          "loss: degenerate encoded pair");

  Tape tape;
  model::ParamVars pv = model::ParamVars::leaves(tape, params);
  model::EncodeGraph enc = model::encoder_forward(tape, pv, mc, doc);
  model::PosteriorGraph post = model::posterior_forward(
      tape, pv, mc, enc.h_doc, ex.topics.tid, noise, flags);

  // document reconstruction: inputs [latent, w1..wn], targets [w1..wn, EOS]
  std::vector<int> doc_prefix(doc.begin() + 1, doc.end() - 1);
  std::vector<int> doc_targets(doc.begin() + 1, doc.end());
  model::DecodeGraph recon = model::reconstruction_decode(
      tape, pv, mc, post.h_core, post.h_side, post.h_dstyle, doc_prefix,
      enc.seq, flags);
  Var l_r = ad::cross_entropy_mean(recon.logits, doc_targets);

  // summary-style latent
  Var h_sstyle{nullptr, -1};
  if (flags.no_style_guidance) {
    h_sstyle = *post.h_sstyle_own;
  } else {
    require(ex.pair.cr > 0.0, "loss: compression rate must be positive");
    h_sstyle = ad::scale(post.h_dstyle, ex.pair.cr);
  }

  // summary prediction: inputs [latent, s1..sm-1], targets [s1..sm(EOS)]
  std::vector<int> sum_prefix(sum.begin(), sum.end() - 1);
  std::vector<int> sum_targets(sum.begin(), sum.end());
  model::DecodeGraph pred = model::prediction_decode(
      tape, pv, mc, post.h_core, h_sstyle, sum_prefix, enc.seq, flags);
  Var l_p = ad::cross_entropy_mean(pred.logits, sum_targets);

  // KL over the three posterior blocks (plus the summary-style head when it
  // is a separate projection; copy_ds reuses the doc-style block already
  // counted)
  Var l_kl = kl_standard_normal(tape, post.mu, post.logvar);
  if (flags.no_style_guidance && flags.style_mode == "own_head")
    l_kl = ad::add(l_kl, kl_standard_normal(tape, *post.mu_ss,
                                            *post.logvar_ss));

  Var total = ad::add(l_r, l_p);
  if (lambda_kl_eff != 0.0)
    total = ad::add(total, ad::scale(l_kl, lambda_kl_eff));

  double l_lda_val = 0.0;
  if (!flags.no_content_guidance) {
    require(ex.topics.p_ct.size() == mc.k_u && ex.topics.p_st.size() == mc.k_u,
            "loss: topic artifacts must cover k_u topics");
    Var topic_tab = pv.at("topic_emb");
    Var core_tab = ad::slice_cols(topic_tab, 0, mc.d_core);
    Var side_tab = ad::slice_cols(topic_tab, mc.d_core, mc.d_side);
    Var h_ct = ad::matmul(tape.constant(ex.topics.p_ct), core_tab);
    Var h_st = ad::matmul(tape.constant(ex.topics.p_st), side_tab);
    Var l_lda = ad::add(ad::l2_distance(post.h_core, h_ct),
                        ad::l2_distance(post.h_side, h_st));
    l_lda_val = ad::scalar(tape, l_lda);
    if (cfg.lambda_lda != 0.0)
      total = ad::add(total, ad::scale(l_lda, cfg.lambda_lda));
  }

  SampleLoss out;
  out.l_r = ad::scalar(tape, l_r);
  out.l_p = ad::scalar(tape, l_p);
  out.l_kl = ad::scalar(tape, l_kl);
  out.l_lda = l_lda_val;
  out.total = ad::scalar(tape, total);

  if (grads) {
    tape.backward(total);
    for (auto& [name, g] : *grads) g += tape.grad(pv.at(name));
  }
  return out;
}

}  // namespace

LossBreakdown loss_components(const std::vector<Example>& batch,
                              const model::ModelParams& params, Rng& rng,
                              const TrainConfig& cfg, int step,
                              GradMap* grads, bool train) {
  require(!batch.empty(), "loss_components: empty batch");
  const model::ModelConfig& mc = params.config;

  double lambda_kl_eff = cfg.lambda_kl;
  if (cfg.kl_anneal_steps > 0) {
    const double ramp =
        std::min(1.0, static_cast<double>(step + 1) / cfg.kl_anneal_steps);
    lambda_kl_eff *= ramp;
  }

  const bool need_ss = cfg.flags.no_style_guidance;
  std::vector<model::LatentNoise> noise(batch.size());
  if (train)
    for (auto& n : noise) n = model::draw_noise(mc, rng, need_ss);

  std::vector<SampleLoss> per_sample(batch.size());
  std::vector<GradMap> per_grads;
  if (grads) {
    per_grads.resize(batch.size());
    for (auto& g : per_grads) {
      params.for_each_tensor([&g](const std::string& name, const Mat& m) {
        g.emplace(name, Mat::Zero(m.rows(), m.cols()));
      });
    }
  }

  parallel_for(static_cast<int>(batch.size()), [&](int i) {
    per_sample[static_cast<size_t>(i)] = sample_loss_graph(
        params, batch[static_cast<size_t>(i)], noise[static_cast<size_t>(i)],
        cfg, lambda_kl_eff, grads ? &per_grads[static_cast<size_t>(i)] : nullptr);
  });

  const double inv_n = 1.0 / static_cast<double>(batch.size());
  LossBreakdown out;
  for (const auto& s : per_sample) {
    out.l_r += s.l_r * inv_n;
    out.l_p += s.l_p * inv_n;
    out.l_kl += s.l_kl * inv_n;
    out.l_lda += s.l_lda * inv_n;
  }
  out.total = out.l_r + out.l_p + lambda_kl_eff * out.l_kl +
              cfg.lambda_lda * out.l_lda;

  if (grads) {
    grads->clear();
    params.for_each_tensor([&](const std::string& name, const Mat& m) {
      Mat g = Mat::Zero(m.rows(), m.cols());
      for (const auto& pg : per_grads) g += pg.at(name);
      (*grads)[name] = g * inv_n;
    });
  }
  return out;
}

}  // namespace ciseq::train
