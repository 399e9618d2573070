#include "ciseq/infer.hpp"

#include <cmath>

#include "ciseq/common.hpp"
#include "ciseq/tape.hpp"

namespace ciseq::infer {

using ad::Tape;
using ad::Var;
using model::Mat;

void InferConfig::validate() const {
  require(n_candidates >= 1, "InferConfig: need at least one candidate");
  require(opt_steps >= 0, "InferConfig: opt_steps must be nonnegative");
  require(step_size > 0.0, "InferConfig: step_size must be positive");
  require(lambda_core >= 0.0 && lambda_side >= 0.0 && lambda_dstyle >= 0.0,
          "InferConfig: penalty weights must be nonnegative");
}

namespace {

struct Objective {
  double j = 0.0;
  double loglik = 0.0;
  RowVec g_core, g_side, g_dstyle;  // empty unless gradients requested
};

/// Penalized objective J and optionally its gradient w.r.t. the latents.
/// The document encoding is rebuilt on each call's tape; at desk scale this
/// costs little next to the decoder pass.
Objective eval_objective(const model::ModelParams& params,
                         const std::vector<int>& doc_tokens,
                         const InferConfig& cfg, const RowVec& core,
                         const RowVec& side, const RowVec& dstyle,
                         bool with_grad) {
  const model::ModelConfig& mc = params.config;
  Tape tape;
  model::ParamVars pv = model::ParamVars::leaves(tape, params);
  model::EncodeGraph enc = model::encoder_forward(tape, pv, mc, doc_tokens);

  Var v_core = tape.leaf(core);
  Var v_side = tape.leaf(side);
  Var v_dstyle = tape.leaf(dstyle);

  std::vector<int> doc_prefix(doc_tokens.begin() + 1, doc_tokens.end() - 1);
  std::vector<int> doc_targets(doc_tokens.begin() + 1, doc_tokens.end());
  model::DecodeGraph dec = model::reconstruction_decode(
      tape, pv, mc, v_core, v_side, v_dstyle, doc_prefix, enc.seq);

  Var lsm = ad::log_softmax_rows(dec.logits);
  Var loglik = ad::sum_all(ad::pick_per_row(lsm, doc_targets));

  const double sign = cfg.literal_sign ? 1.0 : -1.0;
  Var j = loglik;
  j = ad::add(j, ad::scale(ad::sum_squares(v_core), sign * cfg.lambda_core));
  j = ad::add(j, ad::scale(ad::sum_squares(v_side), sign * cfg.lambda_side));
  j = ad::add(j,
              ad::scale(ad::sum_squares(v_dstyle), sign * cfg.lambda_dstyle));

  Objective out;
  out.j = ad::scalar(tape, j);
  out.loglik = ad::scalar(tape, loglik);
  if (with_grad) {
    tape.backward(j);
    out.g_core = tape.grad(v_core).row(0);
    out.g_side = tape.grad(v_side).row(0);
    out.g_dstyle = tape.grad(v_dstyle).row(0);
  }
  return out;
}

}  // namespace

double document_log_likelihood(const model::ModelParams& params,
                               const std::vector<int>& doc_tokens,
                               const RowVec& core, const RowVec& side,
                               const RowVec& dstyle) {
  InferConfig cfg;
  cfg.lambda_core = cfg.lambda_side = cfg.lambda_dstyle = 0.0;
  return eval_objective(params, doc_tokens, cfg, core, side, dstyle, false)
      .loglik;
}

OptimizedLatents infer_document_latents(const model::ModelParams& params,
                                        const std::vector<int>& doc_tokens,
                                        const InferConfig& cfg, Rng& rng) {
  cfg.validate();
  const model::ModelConfig& mc = params.config;

  auto draw = [&rng](int d) {
    RowVec v(d);
    for (int i = 0; i < d; ++i) v(i) = rng.normal();
    return v;
  };

  // candidate sampling from N(0, I)
  struct Candidate {
    RowVec core, side, dstyle;
  };
  std::vector<Candidate> cands(static_cast<size_t>(cfg.n_candidates));
  for (auto& c : cands) {
    c.core = draw(mc.d_core);
    c.side = draw(mc.d_side);
    c.dstyle = draw(mc.d_dstyle);
  }

  OptimizedLatents out;
  out.candidate_scores.resize(cands.size());
  out.candidate_logliks.resize(cands.size());
  parallel_for(static_cast<int>(cands.size()), [&](int i) {
    const auto& c = cands[static_cast<size_t>(i)];
    const Objective obj = eval_objective(params, doc_tokens, cfg, c.core,
                                         c.side, c.dstyle, false);
    out.candidate_scores[static_cast<size_t>(i)] = obj.j;
    out.candidate_logliks[static_cast<size_t>(i)] = obj.loglik;
  });

  int best = -1;
  for (size_t i = 0; i < cands.size(); ++i) {
    if (!std::isfinite(out.candidate_scores[i])) continue;
    if (best < 0 ||
        out.candidate_scores[i] > out.candidate_scores[static_cast<size_t>(best)])
      best = static_cast<int>(i);
  }
  require(best >= 0,
          "infer_document_latents: every candidate scored non-finite");

  out.picked_candidate = best;
  out.core = cands[static_cast<size_t>(best)].core;
  out.side = cands[static_cast<size_t>(best)].side;
  out.dstyle = cands[static_cast<size_t>(best)].dstyle;
  double j_cur = out.candidate_scores[static_cast<size_t>(best)];
  double loglik_cur = out.candidate_logliks[static_cast<size_t>(best)];
  out.trace.push_back(j_cur);

  for (int step = 0; step < cfg.opt_steps; ++step) {
    const Objective obj = eval_objective(params, doc_tokens, cfg, out.core,
                                         out.side, out.dstyle, true);
    double alpha = cfg.step_size;
    bool accepted = false;
    for (int bt = 0; bt <= cfg.backtrack_max; ++bt) {
      const RowVec core_try = out.core + alpha * obj.g_core;
      const RowVec side_try = out.side + alpha * obj.g_side;
      const RowVec dstyle_try = out.dstyle + alpha * obj.g_dstyle;
      const Objective trial = eval_objective(params, doc_tokens, cfg,
                                             core_try, side_try, dstyle_try,
                                             false);
      if (std::isfinite(trial.j) && trial.j >= j_cur) {
        out.core = core_try;
        out.side = side_try;
        out.dstyle = dstyle_try;
        j_cur = trial.j;
        loglik_cur = trial.loglik;
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    (void)accepted;  // a rejected step keeps the current iterate
    out.trace.push_back(j_cur);
  }

  out.objective = j_cur;
  out.log_likelihood = loglik_cur;
  return out;
}

std::vector<int> controlled_summarize(const model::ModelParams& params,
                                      const std::vector<int>& doc_tokens,
                                      double cr, const InferConfig& cfg,
                                      Rng& rng, int max_len,
                                      const model::GenStrategy& strategy) {
  require(cr > 0.0, "controlled_summarize: cr must be positive");
  const OptimizedLatents lat =
      infer_document_latents(params, doc_tokens, cfg, rng);
  const RowVec sstyle = model::derive_summary_style(lat.dstyle, cr);
  return model::generate(params, lat.core, sstyle, doc_tokens, max_len,
                         strategy);
}

double resolve_cr(const std::string& requested, double corpus_mean_cr) {
  if (requested == "auto") {
    require(corpus_mean_cr > 0.0,
            "resolve_cr: checkpoint lacks a positive corpus mean cr");
    return corpus_mean_cr;
  }
  size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(requested, &pos);
  } catch (const std::exception&) {
    require(false, "resolve_cr: cr must be a number or \"auto\"");
  }
  require(pos == requested.size() && v > 0.0,
          "resolve_cr: cr must be positive");
  return v;
}

}  // namespace ciseq::infer
