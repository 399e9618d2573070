#include "ciseq/scm.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "ciseq/tensor_io.hpp"

namespace ciseq::scm {

Mat GaussianBlockParams::natural_params() const {
  const long k = mean.rows(), d = mean.cols();
  Mat out(k, 2 * d);
  for (long u = 0; u < k; ++u) {
    for (long i = 0; i < d; ++i) {
      const double var = std::exp(logvar(u, i));
      out(u, 2 * i) = mean(u, i) / var;
      out(u, 2 * i + 1) = -0.5 / var;
    }
  }
  return out;
}

Vec InvertibleMap::forward(const Vec& v) const {
  Vec psi(v.size());
  for (long i = 0; i < v.size(); ++i) psi(i) = v(i) + alpha * std::tanh(v(i));
  return a * psi + b;
}

Vec InvertibleMap::inverse(const Vec& x) const {
  const Vec target = a_inv * (x - b);
  Vec v(target.size());
  for (long i = 0; i < target.size(); ++i) {
    // solve t + alpha*tanh(t) = y; strictly increasing with slope >= 1
    const double y = target(i);
    double t = y;
    for (int it = 0; it < 60; ++it) {
      const double th = std::tanh(t);
      const double f = t + alpha * th - y;
      if (std::abs(f) < 1e-15) break;
      t -= f / (1.0 + alpha * (1.0 - th * th));
    }
    v(i) = t;
  }
  return v;
}

namespace {

Mat random_gaussian(Rng& rng, long rows, long cols) {
  Mat m(rows, cols);
  for (long c = 0; c < cols; ++c)
    for (long r = 0; r < rows; ++r) m(r, c) = rng.normal();
  return m;
}

Mat random_orthogonal(Rng& rng, int n) {
  const Mat g = random_gaussian(rng, n, n);
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ();
  // fix signs so the factor is deterministic up to the rng stream
  const Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int i = 0; i < n; ++i)
    if (r(i, i) < 0) q.col(i) = -q.col(i);
  return q;
}

InvertibleMap sample_map(Rng& rng, int n) {
  InvertibleMap f;
  const Mat u = random_orthogonal(rng, n);
  const Mat v = random_orthogonal(rng, n);
  Vec s(n);
  for (int i = 0; i < n; ++i)
    s(i) = std::exp(rng.uniform(std::log(0.7), std::log(1.6)));
  f.a = u * s.asDiagonal() * v.transpose();
  f.a_inv = v * s.cwiseInverse().asDiagonal() * u.transpose();
  f.b = random_gaussian(rng, n, 1) * 0.5;
  f.alpha = 0.5;
  return f;
}

GaussianBlockParams sample_block(Rng& rng, int k_u, int d) {
  GaussianBlockParams b;
  b.mean = Mat(k_u, d);
  b.logvar = Mat(k_u, d);
  for (int u = 0; u < k_u; ++u) {
    for (int i = 0; i < d; ++i) {
      b.mean(u, i) = rng.uniform(-2.0, 2.0);
      b.logvar(u, i) = rng.uniform(std::log(0.1), std::log(2.0));
    }
  }
  return b;
}

}  // namespace

SCMParams sample_scm(const BlockDims& dims, int k_u, uint64_t seed,
                     double sigma_eps, const std::string& family) {
  require(family == "gaussian", "sample_scm: only the gaussian family exists");
  require(dims.core >= 1 && dims.side >= 1 && dims.dstyle >= 1 &&
              dims.sstyle >= 1,
          "sample_scm: dims must be positive");
  require(k_u >= 1, "sample_scm: k_u must be >= 1");
  require(sigma_eps >= 0.0, "sample_scm: sigma_eps must be nonnegative");

  SCMParams p;
  p.dims = dims;
  p.k_u = k_u;
  p.sigma_eps = sigma_eps;
  p.seed = seed;
  Rng rng(seed);
  p.core = sample_block(rng, k_u, dims.core);
  p.side = sample_block(rng, k_u, dims.side);
  p.dstyle = sample_block(rng, k_u, dims.dstyle);
  p.sstyle = sample_block(rng, k_u, dims.sstyle);
  p.f_x = sample_map(rng, dims.side + dims.core + dims.dstyle);
  p.f_y = sample_map(rng, dims.sstyle + dims.core);
  p.f_oct = sample_map(rng, dims.core);
  p.f_ost = sample_map(rng, dims.side);
  return p;
}

TableRank rank_of_differences(const Mat& lambda_by_u, int base) {
  const int k = static_cast<int>(lambda_by_u.rows());
  require(base >= 0 && base < k, "rank_of_differences: bad base index");
  TableRank out;
  out.columns = k - 1;
  if (out.columns == 0) {
    out.rank = 0;
    out.full_column_rank = false;
    return out;
  }
  Mat l(lambda_by_u.cols(), out.columns);
  int col = 0;
  for (int u = 0; u < k; ++u) {
    if (u == base) continue;
    l.col(col++) = (lambda_by_u.row(u) - lambda_by_u.row(base)).transpose();
  }
  Eigen::JacobiSVD<Mat> svd(l);
  const Vec sv = svd.singularValues();
  const double tol = sv.size() > 0 ? 1e-10 * sv(0) : 0.0;
  out.rank = 0;
  for (long i = 0; i < sv.size(); ++i)
    if (sv(i) > tol && sv(i) > 0.0) ++out.rank;
  out.full_column_rank = out.rank == out.columns;
  return out;
}

VarietyCheck check_variety(const SCMParams& params, int base) {
  VarietyCheck v;
  v.block_names = {"core", "side", "dstyle", "sstyle"};
  const GaussianBlockParams* blocks[4] = {&params.core, &params.side,
                                          &params.dstyle, &params.sstyle};
  Mat stacked(params.k_u, 0);
  bool all_ok = true;
  for (const auto* b : blocks) {
    const Mat nat = b->natural_params();
    v.blocks.push_back(rank_of_differences(nat, base));
    all_ok = all_ok && v.blocks.back().full_column_rank;
    Mat wider(params.k_u, stacked.cols() + nat.cols());
    wider << stacked, nat;
    stacked = std::move(wider);
  }
  v.stacked = rank_of_differences(stacked, base);
  v.pass = all_ok && params.k_u >= 2;
  return v;
}

SCMDataset generate_scm_dataset(const SCMParams& params, int n_per_u,
                                uint64_t seed) {
  require(n_per_u >= 1, "generate_scm_dataset: n_per_u must be >= 1");
  SCMDataset data;
  data.dims = params.dims;
  data.k_u = params.k_u;
  data.sigma_eps = params.sigma_eps;
  data.seed = seed;
  data.samples.reserve(static_cast<size_t>(params.k_u) *
                       static_cast<size_t>(n_per_u));
  Rng rng(seed);

  auto draw_block = [&rng](const GaussianBlockParams& b, int u) {
    Vec v(b.mean.cols());
    for (long i = 0; i < v.size(); ++i)
      v(i) = b.mean(u, i) + std::exp(0.5 * b.logvar(u, i)) * rng.normal();
    return v;
  };
  auto noise = [&rng, &params](long d) {
    Vec v(d);
    for (long i = 0; i < d; ++i) v(i) = params.sigma_eps * rng.normal();
    return v;
  };

  for (int u = 0; u < params.k_u; ++u) {
    for (int i = 0; i < n_per_u; ++i) {
      SCMSample s;
      s.u = u;
      s.l_core = draw_block(params.core, u);
      s.l_side = draw_block(params.side, u);
      s.l_dstyle = draw_block(params.dstyle, u);
      s.l_sstyle = draw_block(params.sstyle, u);

      Vec x_in(s.l_side.size() + s.l_core.size() + s.l_dstyle.size());
      x_in << s.l_side, s.l_core, s.l_dstyle;
      Vec y_in(s.l_sstyle.size() + s.l_core.size());
      y_in << s.l_sstyle, s.l_core;

      s.x = params.f_x.forward(x_in) + noise(x_in.size());
      s.y = params.f_y.forward(y_in) + noise(y_in.size());
      s.o_ct = params.f_oct.forward(s.l_core) + noise(s.l_core.size());
      s.o_st = params.f_ost.forward(s.l_side) + noise(s.l_side.size());
      data.samples.push_back(std::move(s));
    }
  }
  return data;
}

namespace {

Mat stack(const std::vector<SCMSample>& samples,
          const std::function<const Vec&(const SCMSample&)>& get) {
  require(!samples.empty(), "SCMDataset: empty sample set");
  const long d = get(samples.front()).size();
  Mat out(static_cast<long>(samples.size()), d);
  for (size_t i = 0; i < samples.size(); ++i)
    out.row(static_cast<long>(i)) = get(samples[i]).transpose();
  return out;
}

}  // namespace

Mat SCMDataset::latents_block(const std::string& name) const {
  if (name == "core")
    return stack(samples, [](const SCMSample& s) -> const Vec& { return s.l_core; });
  if (name == "side")
    return stack(samples, [](const SCMSample& s) -> const Vec& { return s.l_side; });
  if (name == "dstyle")
    return stack(samples,
                 [](const SCMSample& s) -> const Vec& { return s.l_dstyle; });
  if (name == "sstyle")
    return stack(samples,
                 [](const SCMSample& s) -> const Vec& { return s.l_sstyle; });
  throw std::runtime_error("SCMDataset: unknown latent block " + name);
}

Mat SCMDataset::observations(const std::string& name) const {
  if (name == "x")
    return stack(samples, [](const SCMSample& s) -> const Vec& { return s.x; });
  if (name == "y")
    return stack(samples, [](const SCMSample& s) -> const Vec& { return s.y; });
  if (name == "o_ct")
    return stack(samples, [](const SCMSample& s) -> const Vec& { return s.o_ct; });
  if (name == "o_st")
    return stack(samples, [](const SCMSample& s) -> const Vec& { return s.o_st; });
  throw std::runtime_error("SCMDataset: unknown observation " + name);
}

std::vector<int> SCMDataset::u_values() const {
  std::vector<int> out(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) out[i] = samples[i].u;
  return out;
}

void SCMDataset::save(const std::string& stem) const {
  Mat u(static_cast<long>(samples.size()), 1);
  for (size_t i = 0; i < samples.size(); ++i)
    u(static_cast<long>(i), 0) = samples[i].u;
  const Mat l_core = latents_block("core");
  const Mat l_side = latents_block("side");
  const Mat l_dstyle = latents_block("dstyle");
  const Mat l_sstyle = latents_block("sstyle");
  const Mat x = observations("x");
  const Mat y = observations("y");
  const Mat o_ct = observations("o_ct");
  const Mat o_st = observations("o_st");
  io::write_tensors(stem + ".bin", {
                                       {"u", &u},
                                       {"l_core", &l_core},
                                       {"l_side", &l_side},
                                       {"l_dstyle", &l_dstyle},
                                       {"l_sstyle", &l_sstyle},
                                       {"x", &x},
                                       {"y", &y},
                                       {"o_ct", &o_ct},
                                       {"o_st", &o_st},
                                   });
  nlohmann::json j;
  j["dims"] = {{"core", dims.core},
               {"side", dims.side},
               {"dstyle", dims.dstyle},
               {"sstyle", dims.sstyle}};
  j["k_u"] = k_u;
  j["seed"] = seed;
  j["family"] = "gaussian";
  j["sigma_eps"] = sigma_eps;
  j["n_samples"] = samples.size();
  std::ofstream out(stem + ".json");
  require(out.good(), "SCMDataset::save: cannot write " + stem + ".json");
  out << j.dump(2) << "\n";
}

SCMDataset SCMDataset::load(const std::string& stem) {
  std::ifstream jin(stem + ".json");
  require(jin.good(), "SCMDataset::load: cannot open " + stem + ".json");
  nlohmann::json j;
  jin >> j;
  SCMDataset d;
  d.dims.core = j.at("dims").at("core").get<int>();
  d.dims.side = j.at("dims").at("side").get<int>();
  d.dims.dstyle = j.at("dims").at("dstyle").get<int>();
  d.dims.sstyle = j.at("dims").at("sstyle").get<int>();
  d.k_u = j.at("k_u").get<int>();
  d.seed = j.at("seed").get<uint64_t>();
  d.sigma_eps = j.at("sigma_eps").get<double>();

  auto tensors = io::read_tensors(stem + ".bin");
  const Mat& u = tensors.at("u");
  const long n = u.rows();
  d.samples.resize(static_cast<size_t>(n));
  for (long i = 0; i < n; ++i) {
    SCMSample& s = d.samples[static_cast<size_t>(i)];
    s.u = static_cast<int>(u(i, 0));
    s.l_core = tensors.at("l_core").row(i).transpose();
    s.l_side = tensors.at("l_side").row(i).transpose();
    s.l_dstyle = tensors.at("l_dstyle").row(i).transpose();
    s.l_sstyle = tensors.at("l_sstyle").row(i).transpose();
    s.x = tensors.at("x").row(i).transpose();
    s.y = tensors.at("y").row(i).transpose();
    s.o_ct = tensors.at("o_ct").row(i).transpose();
    s.o_st = tensors.at("o_st").row(i).transpose();
  }
  return d;
}

std::vector<int> hungarian_max(const Mat& score) {
  require(score.rows() == score.cols() && score.rows() >= 1,
          "hungarian_max: square matrix required");
  const int n = static_cast<int>(score.rows());
  const double kInf = 1e100;
  // classic potentials formulation over the negated (minimization) costs
  std::vector<double> u(static_cast<size_t>(n) + 1, 0.0);
  std::vector<double> v(static_cast<size_t>(n) + 1, 0.0);
  std::vector<int> p(static_cast<size_t>(n) + 1, 0);
  std::vector<int> way(static_cast<size_t>(n) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<size_t>(n) + 1, kInf);
    std::vector<char> used(static_cast<size_t>(n) + 1, 0);
    do {
      used[static_cast<size_t>(j0)] = 1;
      const int i0 = p[static_cast<size_t>(j0)];
      int j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        const double cur = -score(i0 - 1, j - 1) - u[static_cast<size_t>(i0)] -
                           v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<size_t>(j0)];
      p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(static_cast<size_t>(n), -1);
  for (int j = 1; j <= n; ++j)
    if (p[static_cast<size_t>(j)] > 0)
      row_to_col[static_cast<size_t>(p[static_cast<size_t>(j)]) - 1] = j - 1;
  return row_to_col;
}

namespace {

double pearson_abs(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double n = static_cast<double>(a.size());
  const double ma = a.mean(), mb = b.mean();
  const Eigen::ArrayXd ca = a.array() - ma;
  const Eigen::ArrayXd cb = b.array() - mb;
  const double va = (ca * ca).sum() / n;
  const double vb = (cb * cb).sum() / n;
  if (va <= 0.0 || vb <= 0.0) return 0.0;
  const double cov = (ca * cb).sum() / n;
  return std::abs(cov / std::sqrt(va * vb));
}

}  // namespace

IdentifiabilityReport evaluate_identifiability(
    const Mat& learned, const Mat& truth, const std::vector<int>& block_dims,
    const std::vector<std::string>& block_names) {
  require(learned.rows() == truth.rows(),
          "evaluate_identifiability: sample counts differ");
  int total = 0;
  for (int d : block_dims) total += d;
  require(learned.cols() == total && truth.cols() == total,
          "evaluate_identifiability: block dims must cover all columns");

  IdentifiabilityReport rep;
  rep.shift.assign(static_cast<size_t>(total), 0.0);
  double mcc_sum = 0.0;
  int offset = 0;
  for (size_t b = 0; b < block_dims.size(); ++b) {
    const int d = block_dims[b];
    Mat corr(d, d);  // truth dim x learned dim
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        corr(i, j) = pearson_abs(truth.col(offset + i),
                                 learned.col(offset + j));
    const std::vector<int> match = hungarian_max(corr);
    std::vector<int> perm(static_cast<size_t>(d));
    double block_sum = 0.0;
    for (int i = 0; i < d; ++i) {
      perm[static_cast<size_t>(i)] = match[static_cast<size_t>(i)];
      block_sum += corr(i, match[static_cast<size_t>(i)]);
      // least-squares shift after sign-corrected alignment
      const Eigen::VectorXd t = truth.col(offset + i);
      const Eigen::VectorXd l = learned.col(offset + match[static_cast<size_t>(i)]);
      const double n = static_cast<double>(t.size());
      const double cov =
          ((t.array() - t.mean()) * (l.array() - l.mean())).sum() / n;
      const double sign = cov >= 0.0 ? 1.0 : -1.0;
      rep.shift[static_cast<size_t>(offset + i)] = (t - sign * l).mean();
    }
    rep.block_mcc.push_back(block_sum / d);
    rep.permutation.push_back(std::move(perm));
    rep.block_names.push_back(b < block_names.size()
                                  ? block_names[b]
                                  : "block" + std::to_string(b));
    mcc_sum += block_sum;
    offset += d;
  }
  rep.mcc = mcc_sum / total;
  return rep;
}

std::string IdentifiabilityReport::to_json() const {
  nlohmann::json j;
  j["mcc"] = mcc;
  j["block_mcc"] = block_mcc;
  j["block_names"] = block_names;
  j["permutation"] = permutation;
  j["shift"] = shift;
  return j.dump(2);
}

}  // namespace ciseq::scm
