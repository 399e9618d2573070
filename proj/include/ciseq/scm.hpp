#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ciseq/common.hpp"

namespace ciseq::scm {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Latent block sizes. The four blocks mirror the summarization latents:
/// core content, side content, document style, summary style.
struct BlockDims {
  int core = 4;
  int side = 4;
  int dstyle = 4;
  int sstyle = 4;
};

/// Gaussian family per block: one mean/logvar row per confounder value.
struct GaussianBlockParams {
  Mat mean;    // k_u x d
  Mat logvar;  // k_u x d
  /// Natural parameters (mu/sigma^2, -1/(2 sigma^2)) per dimension,
  /// flattened to one row per confounder value (k_u x 2d).
  Mat natural_params() const;
};

/// Invertible mixing f(v) = A * psi(v) + b with psi(t) = t + alpha*tanh(t).
/// A is built from random orthogonal factors and bounded singular values,
/// so the condition number stays small; psi is strictly increasing, so the
/// inverse is a per-coordinate Newton solve.
struct InvertibleMap {
  Mat a;
  Mat a_inv;
  Vec b;
  double alpha = 0.5;
  Vec forward(const Vec& v) const;
  Vec inverse(const Vec& x) const;
  int dim() const { return static_cast<int>(a.rows()); }
};

struct SCMParams {
  BlockDims dims;
  int k_u = 0;
  double sigma_eps = 0.0;
  uint64_t seed = 0;
  GaussianBlockParams core, side, dstyle, sstyle;
  InvertibleMap f_x;    // (side+core+dstyle) -> x
  InvertibleMap f_y;    // (sstyle+core) -> y
  InvertibleMap f_oct;  // core -> o_ct
  InvertibleMap f_ost;  // side -> o_st
};

/// Seeded draw of the whole generative configuration (Gaussian family).
SCMParams sample_scm(const BlockDims& dims, int k_u, uint64_t seed,
                     double sigma_eps = 0.05,
                     const std::string& family = "gaussian");

struct TableRank {
  int rank = 0;
  int columns = 0;
  bool full_column_rank = false;  // columns >= 1 and rank == columns
};

/// Rank of L = [lambda(u_1)-lambda(u_0), ..., lambda(u_{k-1})-lambda(u_0)]
/// where `lambda_by_u` holds one natural-parameter row per confounder value.
/// Singular values below 1e-10 * sigma_max count as zero.
TableRank rank_of_differences(const Mat& lambda_by_u, int base = 0);

struct VarietyCheck {
  bool pass = false;  // every block has full column rank (and k_u >= 2)
  std::vector<std::string> block_names;
  std::vector<TableRank> blocks;
  TableRank stacked;  // all blocks' natural parameters stacked
};
VarietyCheck check_variety(const SCMParams& params, int base = 0);

struct SCMSample {
  int u = 0;
  Vec l_core, l_side, l_dstyle, l_sstyle;
  Vec x, y, o_ct, o_st;
};

struct SCMDataset {
  BlockDims dims;
  int k_u = 0;
  double sigma_eps = 0.0;
  uint64_t seed = 0;
  std::vector<SCMSample> samples;

  /// Stacked matrices (one row per sample).
  Mat latents_block(const std::string& name) const;  // core|side|dstyle|sstyle
  Mat observations(const std::string& name) const;   // x|y|o_ct|o_st
  std::vector<int> u_values() const;

  void save(const std::string& stem) const;
  static SCMDataset load(const std::string& stem);
};

/// Draws n_per_u samples per confounder value in u-major order.
SCMDataset generate_scm_dataset(const SCMParams& params, int n_per_u,
                                uint64_t seed);

/// Max-score assignment (one column per row) via the Hungarian method.
std::vector<int> hungarian_max(const Mat& score);

struct IdentifiabilityReport {
  double mcc = 0.0;                   // mean matched |corr| over all dims
  std::vector<double> block_mcc;      // per block
  std::vector<std::string> block_names;
  std::vector<std::vector<int>> permutation;  // per block: learned index
                                              // matched to each true dim
  std::vector<double> shift;          // per true dim, least-squares shift
  std::string to_json() const;
};

/// Correlation-based recovery score: per block, the permutation of learned
/// dimensions maximizing total |Pearson corr| against the true dimensions;
/// MCC is the mean matched |corr|. Zero-variance dimensions count as 0.
IdentifiabilityReport evaluate_identifiability(
    const Mat& learned, const Mat& truth, const std::vector<int>& block_dims,
    const std::vector<std::string>& block_names = {});

}  // namespace ciseq::scm
