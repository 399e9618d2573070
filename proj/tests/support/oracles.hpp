#pragma once

// Brute-force scoring routes kept independent of the library implementations.

#include <algorithm>
#include <map>
#include <vector>

#include "ciseq/rouge.hpp"

namespace testsupport {

inline long oracle_ngram_overlap(const std::vector<int>& cand,
                                 const std::vector<int>& ref, int n) {
  const long nc = static_cast<long>(cand.size()) - (n - 1);
  const long nr = static_cast<long>(ref.size()) - (n - 1);
  if (nc <= 0 || nr <= 0) return 0;
  std::vector<char> used(static_cast<size_t>(nr), 0);
  long overlap = 0;
  for (long i = 0; i < nc; ++i) {
    for (long j = 0; j < nr; ++j) {
      if (used[static_cast<size_t>(j)]) continue;
      bool same = true;
      for (int t = 0; t < n; ++t)
        if (cand[static_cast<size_t>(i + t)] !=
            ref[static_cast<size_t>(j + t)])
          same = false;
      if (same) {
        used[static_cast<size_t>(j)] = 1;
        ++overlap;
        break;
      }
    }
  }
  return overlap;
}

inline long oracle_lcs(const std::vector<int>& a, const std::vector<int>& b,
                       size_t i, size_t j,
                       std::map<std::pair<size_t, size_t>, long>& memo) {
  if (i == a.size() || j == b.size()) return 0;
  const auto key = std::make_pair(i, j);
  auto it = memo.find(key);
  if (it != memo.end()) return it->second;
  long best;
  if (a[i] == b[j]) {
    best = 1 + oracle_lcs(a, b, i + 1, j + 1, memo);
  } else {
    best = std::max(oracle_lcs(a, b, i + 1, j, memo),
                    oracle_lcs(a, b, i, j + 1, memo));
  }
  memo[key] = best;
  return best;
}

inline ciseq::eval::RougeScores oracle_rouge(const std::vector<int>& cand,
                                             const std::vector<int>& ref) {
  ciseq::eval::RougeScores s;
  if (cand.empty() || ref.empty()) return s;
  auto triple = [](double overlap, double nc, double nr) {
    ciseq::eval::RougeTriple t;
    if (nc > 0) t.precision = overlap / nc;
    if (nr > 0) t.recall = overlap / nr;
    if (t.precision + t.recall > 0)
      t.f1 = 2 * t.precision * t.recall / (t.precision + t.recall);
    return t;
  };
  s.r1 = triple(static_cast<double>(oracle_ngram_overlap(cand, ref, 1)),
                static_cast<double>(cand.size()),
                static_cast<double>(ref.size()));
  s.r2 = triple(static_cast<double>(oracle_ngram_overlap(cand, ref, 2)),
                std::max(0.0, static_cast<double>(cand.size()) - 1),
                std::max(0.0, static_cast<double>(ref.size()) - 1));
  std::map<std::pair<size_t, size_t>, long> memo;
  s.rl = triple(static_cast<double>(oracle_lcs(cand, ref, 0, 0, memo)),
                static_cast<double>(cand.size()),
                static_cast<double>(ref.size()));
  return s;
}

}  // namespace testsupport
