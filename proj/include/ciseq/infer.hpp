#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ciseq/model.hpp"

namespace ciseq::infer {

using RowVec = Eigen::RowVectorXd;

struct InferConfig {
  int n_candidates = 10;   // searched range [5, 20]
  int opt_steps = 40;      // searched range [20, 100]
  double lambda_core = 0.01;    // penalty weights, searched [0.001, 0.5]
  double lambda_side = 0.01;
  double lambda_dstyle = 0.01;
  double step_size = 0.05;
  int backtrack_max = 10;
  // The printed objective adds the norm terms to a maximization, which is
  // unbounded; the default subtracts them as penalties. literal_sign
  // restores the additive form for comparison runs.
  bool literal_sign = false;

  void validate() const;
};

struct OptimizedLatents {
  RowVec core, side, dstyle;
  std::vector<double> trace;          // objective after each accepted step
  double objective = 0.0;             // final value
  int picked_candidate = -1;
  std::vector<double> candidate_scores;    // penalized objective per candidate
  std::vector<double> candidate_logliks;   // raw log p(x|latents) per candidate
  double log_likelihood = 0.0;        // teacher-forced log p(x|latents)
};

/// Samples n_candidates latent triples from N(0,I), scores each by the
/// penalized document log-likelihood, then runs backtracking gradient
/// ascent from the best one. The trace is non-decreasing by construction.
OptimizedLatents infer_document_latents(const model::ModelParams& params,
                                        const std::vector<int>& doc_tokens,
                                        const InferConfig& cfg, Rng& rng);

/// Teacher-forced log p(x | latents) under the reconstruction decoder
/// (sum of token log-probabilities).
double document_log_likelihood(const model::ModelParams& params,
                               const std::vector<int>& doc_tokens,
                               const RowVec& core, const RowVec& side,
                               const RowVec& dstyle);

/// Infers latents, sets the summary-style latent to cr * dstyle, and
/// generates with the prediction decoder.
std::vector<int> controlled_summarize(const model::ModelParams& params,
                                      const std::vector<int>& doc_tokens,
                                      double cr, const InferConfig& cfg,
                                      Rng& rng, int max_len,
                                      const model::GenStrategy& strategy =
                                          model::GenStrategy::greedy());

/// Resolves a cr request: a positive number passes through; "auto" uses
/// the checkpoint's recorded corpus mean.
double resolve_cr(const std::string& requested, double corpus_mean_cr);

}  // namespace ciseq::infer
