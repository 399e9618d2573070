#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ciseq/scm.hpp"

using namespace ciseq;
using namespace ciseq::scm;

namespace {

// brute-force assignment oracle for small score matrices
double best_assignment_score(const Mat& score) {
  const int n = static_cast<int>(score.rows());
  std::vector<int> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  double best = -1e300;
  do {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += score(i, perm[static_cast<size_t>(i)]);
    best = std::max(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace

TEST_CASE("scm sampling is deterministic") {
  const BlockDims dims{3, 4, 2, 2};
  SCMParams a = sample_scm(dims, 4, 123);
  SCMParams b = sample_scm(dims, 4, 123);
  CHECK((a.core.natural_params() - b.core.natural_params())
            .cwiseAbs()
            .maxCoeff() == 0.0);
  CHECK((a.f_x.a - b.f_x.a).cwiseAbs().maxCoeff() == 0.0);
  SCMParams c = sample_scm(dims, 4, 124);
  CHECK((a.f_x.a - c.f_x.a).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("mixing maps invert to high precision") {
  const BlockDims dims{4, 4, 4, 4};
  SCMParams p = sample_scm(dims, 5, 7);
  Rng rng(3);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    Vec v(p.f_x.dim());
    for (long i = 0; i < v.size(); ++i) v(i) = rng.normal() * 2.0;
    const Vec back = p.f_x.inverse(p.f_x.forward(v));
    worst = std::max(worst, (back - v).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("mixing matrices stay well conditioned") {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    SCMParams p = sample_scm({4, 4, 4, 4}, 5, seed);
    Eigen::JacobiSVD<Mat> svd(p.f_x.a);
    const double cond = svd.singularValues()(0) /
                        svd.singularValues()(svd.singularValues().size() - 1);
    CHECK(cond < 20.0);
  }
}

TEST_CASE("variety check on hand-built natural-parameter tables") {
  // identity difference columns: pass
  Mat ident(3, 2);
  ident << 0, 0, 1, 0, 0, 1;
  TableRank r = rank_of_differences(ident);
  CHECK(r.columns == 2);
  CHECK(r.rank == 2);
  CHECK(r.full_column_rank);

  // all parameters equal: rank 0
  Mat equal = Mat::Ones(3, 2);
  r = rank_of_differences(equal);
  CHECK(r.rank == 0);
  CHECK(!r.full_column_rank);

  // collinear: lambda(u2) = 2 lambda(u1), base zero
  Mat collinear(3, 2);
  collinear << 0, 0, 1, 2, 2, 4;
  r = rank_of_differences(collinear);
  CHECK(r.columns == 2);
  CHECK(r.rank == 1);
  CHECK(!r.full_column_rank);

  // single confounder value: zero columns, fail
  Mat single = Mat::Random(1, 4);
  r = rank_of_differences(single);
  CHECK(r.columns == 0);
  CHECK(!r.full_column_rank);
}

TEST_CASE("k_u = 1 fails the variety check; sampled k_u = 5 passes") {
  SCMParams lone = sample_scm({4, 4, 4, 4}, 1, 11);
  CHECK(!check_variety(lone).pass);
  SCMParams five = sample_scm({4, 4, 4, 4}, 5, 11);
  VarietyCheck v = check_variety(five);
  CHECK(v.pass);
  CHECK(v.blocks.size() == 4);
  for (const auto& b : v.blocks) {
    CHECK(b.columns == 4);
    CHECK(b.full_column_rank);
  }
}

TEST_CASE("variety pass/fail is invariant to the base confounder value") {
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    SCMParams p = sample_scm({3, 3, 2, 2}, 4, seed);
    const bool base0 = check_variety(p, 0).pass;
    for (int base = 1; base < 4; ++base)
      CHECK(check_variety(p, base).pass == base0);
  }
  // degenerate table stays degenerate from every base
  Mat collinear(3, 2);
  collinear << 0, 0, 1, 2, 2, 4;
  const bool base0 = rank_of_differences(collinear, 0).full_column_rank;
  for (int base = 1; base < 3; ++base)
    CHECK(rank_of_differences(collinear, base).full_column_rank == base0);
}

TEST_CASE("noiseless generation is exactly the mixing output and invertible") {
  const BlockDims dims{3, 3, 2, 2};
  SCMParams p = sample_scm(dims, 3, 21, /*sigma_eps=*/0.0);
  SCMDataset data = generate_scm_dataset(p, 50, 9);
  for (const auto& s : data.samples) {
    Vec x_in(dims.side + dims.core + dims.dstyle);
    x_in << s.l_side, s.l_core, s.l_dstyle;
    CHECK((s.x - p.f_x.forward(x_in)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((p.f_x.inverse(s.x) - x_in).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((p.f_oct.inverse(s.o_ct) - s.l_core).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("sample moments match the configured family") {
  const BlockDims dims{4, 2, 2, 2};
  SCMParams p = sample_scm(dims, 3, 33, 0.05);
  const int n = 10000;
  SCMDataset data = generate_scm_dataset(p, n, 77);
  for (int u = 0; u < 3; ++u) {
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(dims.core);
    for (int i = 0; i < n; ++i)
      mean += data.samples[static_cast<size_t>(u * n + i)].l_core.transpose();
    mean /= n;
    for (int d = 0; d < dims.core; ++d) {
      const double sigma = std::exp(0.5 * p.core.logvar(u, d));
      const double se = sigma / std::sqrt(static_cast<double>(n));
      CHECK(std::abs(mean(d) - p.core.mean(u, d)) < 3.0 * se);
    }
  }
}

TEST_CASE("dataset generation is deterministic and round trips through disk") {
  const BlockDims dims{2, 2, 2, 2};
  SCMParams p = sample_scm(dims, 2, 5, 0.1);
  SCMDataset a = generate_scm_dataset(p, 20, 3);
  SCMDataset b = generate_scm_dataset(p, 20, 3);
  CHECK((a.observations("x") - b.observations("x")).cwiseAbs().maxCoeff() ==
        0.0);

  const std::string stem = "/tmp/ciseq_scm_test";
  a.save(stem);
  SCMDataset loaded = SCMDataset::load(stem);
  CHECK(loaded.samples.size() == a.samples.size());
  CHECK((loaded.observations("y") - a.observations("y"))
            .cwiseAbs()
            .maxCoeff() == 0.0);
  CHECK((loaded.latents_block("sstyle") - a.latents_block("sstyle"))
            .cwiseAbs()
            .maxCoeff() == 0.0);
  CHECK(loaded.k_u == 2);
  CHECK(loaded.sigma_eps == 0.1);
}

TEST_CASE("hungarian assignment matches brute force") {
  Rng rng(8);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 1 + rng.uniform_int(4);
    Mat score(n, n);
    for (long i = 0; i < score.size(); ++i) score(i) = rng.uniform(-1, 1);
    const auto match = hungarian_max(score);
    double total = 0.0;
    std::vector<char> used(static_cast<size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
      REQUIRE(match[static_cast<size_t>(i)] >= 0);
      REQUIRE(!used[static_cast<size_t>(match[static_cast<size_t>(i)])]);
      used[static_cast<size_t>(match[static_cast<size_t>(i)])] = 1;
      total += score(i, match[static_cast<size_t>(i)]);
    }
    CHECK(total == doctest::Approx(best_assignment_score(score)).epsilon(1e-9));
  }
}

TEST_CASE("mcc detects exact recovery up to permutation and shift") {
  Rng rng(12);
  const int n = 400;
  Mat truth(n, 8);
  for (long i = 0; i < truth.size(); ++i) truth(i) = rng.normal();

  // blocks (3, 5): permute within blocks, flip one sign, add shifts
  Mat learned(n, 8);
  learned.col(0) = truth.col(2);
  learned.col(1) = truth.col(0).array() + 3.0;
  learned.col(2) = -truth.col(1);
  learned.col(3) = truth.col(6);
  learned.col(4) = truth.col(3).array() - 1.0;
  learned.col(5) = truth.col(7);
  learned.col(6) = truth.col(4);
  learned.col(7) = truth.col(5).array() * -2.0;

  IdentifiabilityReport rep =
      evaluate_identifiability(learned, truth, {3, 5}, {"a", "b"});
  CHECK(rep.mcc == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(rep.block_mcc[0] == doctest::Approx(1.0));
  CHECK(rep.block_mcc[1] == doctest::Approx(1.0));
  CHECK(rep.permutation[0] == std::vector<int>{1, 2, 0});
}

TEST_CASE("mcc of independent noise stays near zero") {
  Rng rng(13);
  const int n = 10000;
  Mat truth(n, 6), learned(n, 6);
  for (long i = 0; i < truth.size(); ++i) truth(i) = rng.normal();
  for (long i = 0; i < learned.size(); ++i) learned(i) = rng.normal();
  IdentifiabilityReport rep =
      evaluate_identifiability(learned, truth, {3, 3});
  CHECK(rep.mcc < 0.2);
}

TEST_CASE("mcc is invariant under per-dimension permutation and shift") {
  Rng rng(14);
  const int n = 500;
  Mat truth(n, 4), learned(n, 4);
  for (long i = 0; i < truth.size(); ++i) truth(i) = rng.normal();
  for (long i = 0; i < learned.size(); ++i)
    learned(i) = 0.7 * truth(i) + 0.3 * rng.normal();
  const double base =
      evaluate_identifiability(learned, truth, {4}).mcc;

  Mat shuffled(n, 4);
  shuffled.col(0) = learned.col(3).array() + 5.0;
  shuffled.col(1) = learned.col(0).array() - 2.0;
  shuffled.col(2) = learned.col(1);
  shuffled.col(3) = learned.col(2).array() + 0.1;
  CHECK(evaluate_identifiability(shuffled, truth, {4}).mcc ==
        doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("zero-variance dimensions score zero correlation") {
  const int n = 100;
  Mat truth = Mat::Random(n, 2);
  Mat learned(n, 2);
  learned.col(0).setConstant(3.0);
  learned.col(1) = truth.col(1);
  IdentifiabilityReport rep = evaluate_identifiability(learned, truth, {2});
  CHECK(rep.mcc == doctest::Approx(0.5).epsilon(0.2));
}
