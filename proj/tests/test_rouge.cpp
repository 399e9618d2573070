#include <doctest.h>

#include <map>
#include <vector>

#include "ciseq/common.hpp"
#include "ciseq/rouge.hpp"

using ciseq::Rng;
using namespace ciseq::eval;

namespace {

// Independent brute-force route: greedy mark-and-match n-gram overlap and
// memoized recursive LCS.
long brute_ngram_overlap(const std::vector<int>& cand,
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
        if (cand[static_cast<size_t>(i + t)] != ref[static_cast<size_t>(j + t)])
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

long brute_lcs(const std::vector<int>& a, const std::vector<int>& b, size_t i,
               size_t j, std::map<std::pair<size_t, size_t>, long>& memo) {
  if (i == a.size() || j == b.size()) return 0;
  const auto key = std::make_pair(i, j);
  auto it = memo.find(key);
  if (it != memo.end()) return it->second;
  long best;
  if (a[i] == b[j]) {
    best = 1 + brute_lcs(a, b, i + 1, j + 1, memo);
  } else {
    best = std::max(brute_lcs(a, b, i + 1, j, memo),
                    brute_lcs(a, b, i, j + 1, memo));
  }
  memo[key] = best;
  return best;
}

RougeScores brute_rouge(const std::vector<int>& cand,
                        const std::vector<int>& ref) {
  RougeScores s;
  if (cand.empty() || ref.empty()) return s;
  auto triple = [](double overlap, double nc, double nr) {
    RougeTriple t;
    if (nc > 0) t.precision = overlap / nc;
    if (nr > 0) t.recall = overlap / nr;
    if (t.precision + t.recall > 0)
      t.f1 = 2 * t.precision * t.recall / (t.precision + t.recall);
    return t;
  };
  s.r1 = triple(static_cast<double>(brute_ngram_overlap(cand, ref, 1)),
                static_cast<double>(cand.size()),
                static_cast<double>(ref.size()));
  const long nc2 = static_cast<long>(cand.size()) - 1;
  const long nr2 = static_cast<long>(ref.size()) - 1;
  s.r2 = triple(static_cast<double>(brute_ngram_overlap(cand, ref, 2)),
                static_cast<double>(std::max(0l, nc2)),
                static_cast<double>(std::max(0l, nr2)));
  std::map<std::pair<size_t, size_t>, long> memo;
  s.rl = triple(static_cast<double>(brute_lcs(cand, ref, 0, 0, memo)),
                static_cast<double>(cand.size()),
                static_cast<double>(ref.size()));
  return s;
}

void check_equal(const RougeScores& a, const RougeScores& b) {
  for (auto get : {&RougeScores::r1, &RougeScores::r2, &RougeScores::rl}) {
    CHECK((a.*get).precision == doctest::Approx((b.*get).precision).epsilon(1e-12));
    CHECK((a.*get).recall == doctest::Approx((b.*get).recall).epsilon(1e-12));
    CHECK((a.*get).f1 == doctest::Approx((b.*get).f1).epsilon(1e-12));
  }
}

}  // namespace

TEST_CASE("identical non-empty sequences score perfect f1") {
  const std::vector<int> toks{5, 8, 9, 8};
  RougeScores s = rouge_scores(toks, toks);
  CHECK(s.r1.f1 == 1.0);
  CHECK(s.r2.f1 == 1.0);
  CHECK(s.rl.f1 == 1.0);
}

TEST_CASE("hand-derived unigram case: the cat sat vs the cat") {
  // token ids: the=1, cat=2, sat=3
  RougeScores s = rouge_scores({1, 2, 3}, {1, 2});
  CHECK(s.r1.precision == doctest::Approx(2.0 / 3.0));
  CHECK(s.r1.recall == doctest::Approx(1.0));
  CHECK(s.r1.f1 == doctest::Approx(0.8));
}

TEST_CASE("empty sequences score zero") {
  RougeScores s = rouge_scores({}, {1, 2});
  CHECK(s.r1.f1 == 0.0);
  CHECK(s.rl.f1 == 0.0);
  s = rouge_scores({1, 2}, {});
  CHECK(s.r1.precision == 0.0);
  CHECK(s.r2.f1 == 0.0);
  s = rouge_scores({}, {});
  CHECK(s.rl.recall == 0.0);
}

TEST_CASE("repeated tokens clip by multiset counts") {
  // candidate has three 7s, reference has one
  RougeScores s = rouge_scores({7, 7, 7}, {7, 5});
  CHECK(s.r1.precision == doctest::Approx(1.0 / 3.0));
  CHECK(s.r1.recall == doctest::Approx(0.5));
}

TEST_CASE("implementation matches the brute-force oracle on random pairs") {
  Rng rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    const int nc = rng.uniform_int(13);
    const int nr = rng.uniform_int(13);
    std::vector<int> cand(static_cast<size_t>(nc)), ref(static_cast<size_t>(nr));
    for (auto& t : cand) t = rng.uniform_int(6);
    for (auto& t : ref) t = rng.uniform_int(6);
    check_equal(rouge_scores(cand, ref), brute_rouge(cand, ref));
  }
}

TEST_CASE("identity property over random sequences") {
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 1 + rng.uniform_int(12);
    std::vector<int> toks(static_cast<size_t>(n));
    for (auto& t : toks) t = rng.uniform_int(9);
    RougeScores s = rouge_scores(toks, toks);
    CHECK(s.r1.f1 == doctest::Approx(1.0));
    CHECK(s.rl.f1 == doctest::Approx(1.0));
    if (n >= 2) CHECK(s.r2.f1 == doctest::Approx(1.0));
  }
}
