#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ciseq/scm.hpp"

namespace ciseq::eval {

using Mat = Eigen::MatrixXd;

/// Fit settings for the vector-observation conditional VAE used in the
/// latent-recovery experiment. The prior is a learned per-confounder
/// diagonal Gaussian table; with a single confounder value it reduces to
/// one unconditional prior.
struct CvaeConfig {
  int hidden = 64;
  int epochs = 30;
  int batch_size = 256;
  double lr = 2e-3;
  uint64_t seed = 1;
  double obs_sigma = 0.05;  // reconstruction scale, clamped to >= 0.01
};

struct CvaeFit {
  Mat latent_means;  // n x (core+side+dstyle) posterior means
  double final_loss = 0.0;
};

/// Trains q(z | x, o_ct, o_st, u) with decoder heads p(x | z),
/// p(o_ct | z_core), p(o_st | z_side) and a per-u Gaussian prior, then
/// returns eval-mode posterior means for every sample.
CvaeFit fit_conditional_vae(const scm::SCMDataset& data,
                            const CvaeConfig& cfg);

struct IdentifiabilityArm {
  int k_u = 0;
  bool variety_pass = false;
  std::vector<double> seed_mcc;
  double mean_mcc = 0.0;
  double std_mcc = 0.0;
  std::vector<scm::IdentifiabilityReport> reports;
};

struct IdentifiabilityExperiment {
  scm::BlockDims dims;
  int n_per_u = 0;
  double sigma_eps = 0.0;
  int n_seeds = 0;
  std::vector<IdentifiabilityArm> arms;
  std::string to_json() const;
};

/// For each arm's confounder count and each seed: draw a generative
/// configuration, record its variety check, generate data, fit the
/// conditional VAE, and score recovery. Arms with a failed variety check
/// are labeled, not rejected.
IdentifiabilityExperiment run_identifiability_experiment(
    const scm::BlockDims& dims, const std::vector<int>& arm_k_u, int n_seeds,
    int n_per_u, double sigma_eps, const CvaeConfig& fit_cfg,
    uint64_t base_seed);

}  // namespace ciseq::eval
