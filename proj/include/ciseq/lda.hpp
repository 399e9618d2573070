#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ciseq::topics {

struct TopicDistribution {
  Eigen::VectorXd probs;  // k_u entries, >= 0, summing to 1
  bool degenerate = false;  // true when produced by the uniform fallback
};

struct CoreSideSplit {
  std::vector<int> g;       // binary indicator, 1 = core
  TopicDistribution p_ct;   // renormalized over core topics
  TopicDistribution p_st;   // renormalized over side topics
  bool fallback_fired = false;
};

/// Collapsed-Gibbs LDA over token-id documents. Special ids (0..4) are
/// skipped during fitting and inference. Deterministic given the seed.
class TopicModel {
 public:
  static TopicModel fit(const std::vector<std::vector<int>>& docs, int k_u,
                        double alpha, double beta, int n_iters, uint64_t seed,
                        int vocab_size);

  /// Fold-in inference: topic-word counts stay fixed, Gibbs runs over the
  /// new document's assignments only. The sweep rng is derived from the
  /// model seed and the token content, so identical calls are identical.
  /// Documents with no usable tokens yield the uniform distribution with
  /// `degenerate` set.
  TopicDistribution infer(const std::vector<int>& doc_tokens,
                          int n_iters = 50) const;

  int k_u() const { return k_u_; }
  double alpha() const { return alpha_; }
  double beta() const { return beta_; }
  uint64_t seed() const { return seed_; }
  int n_iters() const { return n_iters_; }
  int vocab_size() const { return vocab_size_; }

  /// k_u x vocab_size assignment counts from the final sweep.
  const Eigen::MatrixXd& topic_word_counts() const { return topic_word_; }
  /// Smoothed topic-word distribution; rows sum to 1.
  Eigen::MatrixXd topic_word_distribution() const;
  /// Per-document smoothed topic distribution from the final sweep.
  TopicDistribution doc_distribution(int doc_index) const;
  int num_docs() const { return static_cast<int>(doc_topic_.rows()); }

  /// Writes <stem>.bin (counts) and <stem>.json (manifest with k_u, alpha,
  /// beta, seed, n_iters, vocab_hash).
  void save(const std::string& stem, const std::string& vocab_hash) const;
  static TopicModel load(const std::string& stem);
  const std::string& vocab_hash() const { return vocab_hash_; }
  uint64_t state_hash() const;

 private:
  TopicModel() = default;

  int k_u_ = 0;
  double alpha_ = 0.0;
  double beta_ = 0.0;
  int n_iters_ = 0;
  uint64_t seed_ = 0;
  int vocab_size_ = 0;
  std::string vocab_hash_;
  Eigen::MatrixXd topic_word_;   // k_u x vocab_size
  Eigen::VectorXd topic_total_;  // k_u
  Eigen::MatrixXd doc_topic_;    // docs x k_u (training-set assignments)
};

/// Argmax topic id; ties go to the lowest index.
int confounder_id(const TopicDistribution& dist);

/// Splits topics into core (prob > th) and side, renormalizing each part.
/// Degenerate masks fall back so both distributions stay well-defined:
/// all-side promotes the argmax topic to core, all-core demotes the
/// min-probability topic to side.
CoreSideSplit core_side_split(const TopicDistribution& dist, double th);

/// Probability-weighted combination of embedding rows: p * table.
Eigen::RowVectorXd guidance_vector(const Eigen::MatrixXd& table,
                                   const TopicDistribution& p);

}  // namespace ciseq::topics
