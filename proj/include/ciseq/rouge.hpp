#pragma once

#include <vector>

namespace ciseq::eval {

struct RougeTriple {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct RougeScores {
  RougeTriple r1;  // unigram overlap
  RougeTriple r2;  // bigram overlap
  RougeTriple rl;  // longest common subsequence
};

/// Multiset n-gram overlap for R1/R2 and LCS for RL over token ids.
/// Either side empty yields all-zero scores.
RougeScores rouge_scores(const std::vector<int>& candidate,
                         const std::vector<int>& reference);

}  // namespace ciseq::eval
