#include "ciseq/rouge.hpp"

#include <algorithm>
#include <map>

namespace ciseq::eval {
namespace {

RougeTriple from_counts(double overlap, double cand_total, double ref_total) {
  RougeTriple t;
  if (cand_total > 0.0) t.precision = overlap / cand_total;
  if (ref_total > 0.0) t.recall = overlap / ref_total;
  if (t.precision + t.recall > 0.0)
    t.f1 = 2.0 * t.precision * t.recall / (t.precision + t.recall);
  return t;
}

RougeTriple ngram_overlap(const std::vector<int>& cand,
                          const std::vector<int>& ref, int n) {
  const long nc = static_cast<long>(cand.size()) - (n - 1);
  const long nr = static_cast<long>(ref.size()) - (n - 1);
  if (nc <= 0 || nr <= 0) return {};
  std::map<std::vector<int>, long> counts;
  for (long i = 0; i < nr; ++i)
    ++counts[std::vector<int>(ref.begin() + i, ref.begin() + i + n)];
  long overlap = 0;
  for (long i = 0; i < nc; ++i) {
    auto it = counts.find(std::vector<int>(cand.begin() + i,
                                           cand.begin() + i + n));
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  return from_counts(static_cast<double>(overlap), static_cast<double>(nc),
                     static_cast<double>(nr));
}

long lcs_length(const std::vector<int>& a, const std::vector<int>& b) {
  const size_t n = a.size(), m = b.size();
  if (n == 0 || m == 0) return 0;
  std::vector<long> prev(m + 1, 0), cur(m + 1, 0);
  for (size_t i = 1; i <= n; ++i) {
    for (size_t j = 1; j <= m; ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1
                                    : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
    std::fill(cur.begin(), cur.end(), 0);
  }
  return prev[m];
}

}  // namespace

RougeScores rouge_scores(const std::vector<int>& candidate,
                         const std::vector<int>& reference) {
  RougeScores s;
  if (candidate.empty() || reference.empty()) return s;
  s.r1 = ngram_overlap(candidate, reference, 1);
  s.r2 = ngram_overlap(candidate, reference, 2);
  const long lcs = lcs_length(candidate, reference);
  s.rl = from_counts(static_cast<double>(lcs),
                     static_cast<double>(candidate.size()),
                     static_cast<double>(reference.size()));
  return s;
}

}  // namespace ciseq::eval
