#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ciseq/corpus.hpp"
#include "ciseq/lda.hpp"
#include "ciseq/model.hpp"

namespace ciseq::train {

using Mat = Eigen::MatrixXd;

struct LossBreakdown {
  double l_r = 0.0;    // document reconstruction, token-mean NLL
  double l_p = 0.0;    // summary prediction, token-mean NLL
  double l_kl = 0.0;   // analytic KL to the standard-normal prior
  double l_lda = 0.0;  // content guidance, L2 distances to topic targets
  double total = 0.0;
};

struct TrainConfig {
  double lambda_kl = 1.0;
  double lambda_lda = 1.0;
  double lr = 1e-3;
  int batch_size = 8;
  int steps = 1000;
  uint64_t seed = 1;
  int warmup_steps = 0;     // linear warmup, 0 = constant lr
  int kl_anneal_steps = 0;  // linear ramp of lambda_kl, 0 = off
  int checkpoint_interval = 0;  // 0 = final checkpoint only
  model::AblationFlags flags;

  void validate() const;
  std::map<std::string, std::string> as_map() const;
};

/// Per-example topic guidance inputs: confounder id plus the core/side
/// topic distributions (constants during training; the trainable topic
/// embedding table turns them into target vectors on the tape).
struct TopicArtifacts {
  int tid = 0;
  Eigen::RowVectorXd p_ct;  // k_u
  Eigen::RowVectorXd p_st;  // k_u
};

struct Example {
  corpus::DocumentSummaryPair pair;
  TopicArtifacts topics;
};

/// Builds per-example topic artifacts from a fitted topic model.
TopicArtifacts make_topic_artifacts(const topics::TopicModel& tm,
                                    const std::vector<int>& doc_tokens,
                                    double th);

using GradMap = std::map<std::string, Mat>;

/// Analytic KL(N(mu, diag exp(logvar)) || N(0, I)) summed over dimensions;
/// the same formula the loss graph uses.
double analytic_kl_standard_normal(const Eigen::RowVectorXd& mu,
                                   const Eigen::RowVectorXd& logvar);

/// Four-part loss over a batch, mean over examples. When `grads` is given,
/// per-tensor gradients of the total are accumulated into it (replacing the
/// previous contents). Reparametrization noise comes from `rng`, one draw
/// per latent block per example; pass train=false for the mean path.
LossBreakdown loss_components(const std::vector<Example>& batch,
                              const model::ModelParams& params, Rng& rng,
                              const TrainConfig& cfg, int step = 0,
                              GradMap* grads = nullptr, bool train = true);

class Adam {
 public:
  Adam(model::ModelParams& params, double lr, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8);
  void step(const GradMap& grads, double lr_scale = 1.0);
  int64_t steps_taken() const { return t_; }

 private:
  model::ModelParams* params_;
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::map<std::string, std::pair<Mat, Mat>> state_;  // first/second moments
};

struct TrainResult {
  model::ModelParams params;
  double corpus_mean_cr = 0.0;
  int64_t steps = 0;
};

/// Seeded training loop: shuffled batches, Adam updates, per-step CSV log
/// (`step,L_R,L_P,L_KL,L_LDA,total`). Aborts with a diagnostic when the
/// total loss turns non-finite. When `checkpoint_stem` is set, interval
/// checkpoints go to <stem>_step<k>; the final parameters are returned.
TrainResult train(const TrainConfig& cfg,
                  const std::vector<Example>& examples,
                  const model::ModelConfig& model_cfg,
                  const std::string& log_csv_path,
                  const std::optional<std::string>& checkpoint_stem =
                      std::nullopt,
                  const model::CheckpointMeta* meta_template = nullptr);

}  // namespace ciseq::train
