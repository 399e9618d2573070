#include "ciseq/identify.hpp"

#include <cmath>

#include <json.hpp>

#include "ciseq/common.hpp"
#include "ciseq/tape.hpp"

namespace ciseq::eval {

using ad::Tape;
using ad::Var;

namespace {

struct Tensors {
  std::vector<std::string> names;
  std::vector<Mat> mats;
  Mat& add(const std::string& name, Mat m) {
    names.push_back(name);
    mats.push_back(std::move(m));
    return mats.back();
  }
  int index(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    throw std::runtime_error("cvae: unknown tensor " + name);
  }
};

struct TensorAdam {
  double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  int64_t t = 0;
  std::vector<Mat> m, v;
  explicit TensorAdam(const Tensors& ts, double lr_in) : lr(lr_in) {
    for (const auto& p : ts.mats) {
      m.push_back(Mat::Zero(p.rows(), p.cols()));
      v.push_back(Mat::Zero(p.rows(), p.cols()));
    }
  }
  void step(Tensors& ts, const std::vector<Mat>& grads) {
    ++t;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (size_t i = 0; i < ts.mats.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * grads[i];
      v[i] = b2 * v[i] + (1.0 - b2) * grads[i].cwiseProduct(grads[i]);
      ts.mats[i].array() -=
          lr * (m[i] / bc1).array() / ((v[i] / bc2).array().sqrt() + eps);
    }
  }
};

Mat glorot(Rng& rng, long rows, long cols) {
  Mat m(rows, cols);
  const double std = std::sqrt(2.0 / static_cast<double>(rows + cols));
  for (long c = 0; c < cols; ++c)
    for (long r = 0; r < rows; ++r) m(r, c) = rng.normal() * std;
  return m;
}

struct CvaeModel {
  Tensors ts;
  int d_x, d_ct, d_st, d_z, d_in, k_u, hidden;
  int z_core, z_side, z_dstyle;

  CvaeModel(const scm::SCMDataset& data, const CvaeConfig& cfg, Rng& rng) {
    d_x = static_cast<int>(data.observations("x").cols());
    d_ct = static_cast<int>(data.observations("o_ct").cols());
    d_st = static_cast<int>(data.observations("o_st").cols());
    z_core = data.dims.core;
    z_side = data.dims.side;
    z_dstyle = data.dims.dstyle;
    d_z = z_core + z_side + z_dstyle;
    k_u = data.k_u;
    hidden = cfg.hidden;
    d_in = d_x + d_ct + d_st + k_u;

    ts.add("enc_w1", glorot(rng, d_in, hidden));
    ts.add("enc_b1", Mat::Zero(1, hidden));
    ts.add("enc_w2", glorot(rng, hidden, hidden));
    ts.add("enc_b2", Mat::Zero(1, hidden));
    ts.add("enc_mu_w", glorot(rng, hidden, d_z));
    ts.add("enc_mu_b", Mat::Zero(1, d_z));
    ts.add("enc_lv_w", glorot(rng, hidden, d_z));
    ts.add("enc_lv_b", Mat::Zero(1, d_z));

    ts.add("dx_w1", glorot(rng, d_z, hidden));
    ts.add("dx_b1", Mat::Zero(1, hidden));
    ts.add("dx_w2", glorot(rng, hidden, hidden));
    ts.add("dx_b2", Mat::Zero(1, hidden));
    ts.add("dx_w3", glorot(rng, hidden, d_x));
    ts.add("dx_b3", Mat::Zero(1, d_x));

    ts.add("dct_w1", glorot(rng, z_core, hidden));
    ts.add("dct_b1", Mat::Zero(1, hidden));
    ts.add("dct_w2", glorot(rng, hidden, d_ct));
    ts.add("dct_b2", Mat::Zero(1, d_ct));

    ts.add("dst_w1", glorot(rng, z_side, hidden));
    ts.add("dst_b1", Mat::Zero(1, hidden));
    ts.add("dst_w2", glorot(rng, hidden, d_st));
    ts.add("dst_b2", Mat::Zero(1, d_st));

    ts.add("prior_mu", Mat::Zero(k_u, d_z));
    ts.add("prior_lv", Mat::Zero(k_u, d_z));
  }
};

struct BatchData {
  Mat enc_in;  // B x d_in
  Mat x, o_ct, o_st;
  std::vector<int> u_ids;
};

BatchData gather_batch(const scm::SCMDataset& data, const CvaeModel& m,
                       const std::vector<int>& idx) {
  BatchData b;
  const long n = static_cast<long>(idx.size());
  b.enc_in = Mat::Zero(n, m.d_in);
  b.x = Mat(n, m.d_x);
  b.o_ct = Mat(n, m.d_ct);
  b.o_st = Mat(n, m.d_st);
  b.u_ids.resize(idx.size());
  for (long i = 0; i < n; ++i) {
    const auto& s = data.samples[static_cast<size_t>(idx[static_cast<size_t>(i)])];
    b.x.row(i) = s.x.transpose();
    b.o_ct.row(i) = s.o_ct.transpose();
    b.o_st.row(i) = s.o_st.transpose();
    b.enc_in.block(i, 0, 1, m.d_x) = s.x.transpose();
    b.enc_in.block(i, m.d_x, 1, m.d_ct) = s.o_ct.transpose();
    b.enc_in.block(i, m.d_x + m.d_ct, 1, m.d_st) = s.o_st.transpose();
    b.enc_in(i, m.d_x + m.d_ct + m.d_st + s.u) = 1.0;
    b.u_ids[static_cast<size_t>(i)] = s.u;
  }
  return b;
}

struct Forward {
  Var mu, logvar;
  Var loss;  // valid only in training graphs
};

Var mlp2(std::vector<Var>& leaves, const CvaeModel& m, Var in,
         const std::string& w1, const std::string& b1, const std::string& w2,
         const std::string& b2) {
  Var h = ad::tanh_(ad::add_rowvec(
      ad::matmul(in, leaves[static_cast<size_t>(m.ts.index(w1))]),
      leaves[static_cast<size_t>(m.ts.index(b1))]));
  return ad::add_rowvec(
      ad::matmul(h, leaves[static_cast<size_t>(m.ts.index(w2))]),
      leaves[static_cast<size_t>(m.ts.index(b2))]);
}

}  // namespace

CvaeFit fit_conditional_vae(const scm::SCMDataset& data,
                            const CvaeConfig& cfg) {
  require(!data.samples.empty(), "fit_conditional_vae: empty dataset");
  Rng rng(cfg.seed);
  CvaeModel m(data, cfg, rng);
  TensorAdam opt(m.ts, cfg.lr);

  const int n = static_cast<int>(data.samples.size());
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

  const double sigma = std::max(cfg.obs_sigma, 0.01);
  const double recon_w = 1.0 / (2.0 * sigma * sigma);

  double last_loss = 0.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int len = std::min(cfg.batch_size, n - start);
      std::vector<int> idx(order.begin() + start, order.begin() + start + len);
      const BatchData batch = gather_batch(data, m, idx);

      Mat eps(len, m.d_z);
      for (long i = 0; i < eps.size(); ++i) eps(i) = rng.normal();

      Tape tape;
      std::vector<Var> leaves;
      leaves.reserve(m.ts.mats.size());
      for (const auto& p : m.ts.mats) leaves.push_back(tape.leaf(p));

      Var in = tape.constant(batch.enc_in);
      Var h = mlp2(leaves, m, in, "enc_w1", "enc_b1", "enc_w2", "enc_b2");
      h = ad::tanh_(h);
      Var mu = ad::add_rowvec(
          ad::matmul(h, leaves[static_cast<size_t>(m.ts.index("enc_mu_w"))]),
          leaves[static_cast<size_t>(m.ts.index("enc_mu_b"))]);
      Var lv = ad::add_rowvec(
          ad::matmul(h, leaves[static_cast<size_t>(m.ts.index("enc_lv_w"))]),
          leaves[static_cast<size_t>(m.ts.index("enc_lv_b"))]);
      Var z = ad::add(mu, ad::mul(ad::exp_(ad::scale(lv, 0.5)),
                                  tape.constant(eps)));

      // decoder heads
      Var hx = ad::tanh_(mlp2(leaves, m, z, "dx_w1", "dx_b1", "dx_w2",
                              "dx_b2"));
      Var x_hat = ad::add_rowvec(
          ad::matmul(hx, leaves[static_cast<size_t>(m.ts.index("dx_w3"))]),
          leaves[static_cast<size_t>(m.ts.index("dx_b3"))]);
      Var z_core = ad::slice_cols(z, 0, m.z_core);
      Var z_side = ad::slice_cols(z, m.z_core, m.z_side);
      Var ct_hat = mlp2(leaves, m, z_core, "dct_w1", "dct_b1", "dct_w2",
                        "dct_b2");
      Var st_hat = mlp2(leaves, m, z_side, "dst_w1", "dst_b1", "dst_w2",
                        "dst_b2");

      const double inv_b = 1.0 / static_cast<double>(len);
      Var recon = ad::sum_squares(ad::sub(x_hat, tape.constant(batch.x)));
      recon = ad::add(recon, ad::sum_squares(ad::sub(
                                 ct_hat, tape.constant(batch.o_ct))));
      recon = ad::add(recon, ad::sum_squares(ad::sub(
                                 st_hat, tape.constant(batch.o_st))));
      recon = ad::scale(recon, recon_w * inv_b);

      // KL(q || prior(u)) for diagonal Gaussians
      Var p_mu = ad::gather_rows(
          leaves[static_cast<size_t>(m.ts.index("prior_mu"))], batch.u_ids);
      Var p_lv = ad::gather_rows(
          leaves[static_cast<size_t>(m.ts.index("prior_lv"))], batch.u_ids);
      Var term1 = ad::exp_(ad::sub(lv, p_lv));
      Var term2 = ad::mul(ad::square(ad::sub(mu, p_mu)),
                          ad::exp_(ad::scale(p_lv, -1.0)));
      const Mat ones = Mat::Ones(len, m.d_z);
      Var inner = ad::add(ad::add(term1, term2), ad::sub(p_lv, lv));
      inner = ad::add_const(inner, -ones);
      Var kl = ad::scale(ad::sum_all(inner), 0.5 * inv_b);

      Var loss = ad::add(recon, kl);
      last_loss = ad::scalar(tape, loss);
      require(std::isfinite(last_loss),
              "fit_conditional_vae: non-finite loss at epoch " +
                  std::to_string(epoch));
      tape.backward(loss);

      std::vector<Mat> grads;
      grads.reserve(leaves.size());
      for (const auto& leaf : leaves) grads.push_back(tape.grad(leaf));
      opt.step(m.ts, grads);
    }
  }

  // eval-mode posterior means over every sample, in chunks
  CvaeFit fit;
  fit.final_loss = last_loss;
  fit.latent_means = Mat(n, m.d_z);
  const int chunk = 4096;
  for (int start = 0; start < n; start += chunk) {
    const int len = std::min(chunk, n - start);
    std::vector<int> idx(static_cast<size_t>(len));
    for (int i = 0; i < len; ++i) idx[static_cast<size_t>(i)] = start + i;
    const BatchData batch = gather_batch(data, m, idx);
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& p : m.ts.mats) leaves.push_back(tape.leaf(p));
    Var in = tape.constant(batch.enc_in);
    Var h = mlp2(leaves, m, in, "enc_w1", "enc_b1", "enc_w2", "enc_b2");
    h = ad::tanh_(h);
    Var mu = ad::add_rowvec(
        ad::matmul(h, leaves[static_cast<size_t>(m.ts.index("enc_mu_w"))]),
        leaves[static_cast<size_t>(m.ts.index("enc_mu_b"))]);
    fit.latent_means.middleRows(start, len) = tape.val(mu);
  }
  return fit;
}

IdentifiabilityExperiment run_identifiability_experiment(
    const scm::BlockDims& dims, const std::vector<int>& arm_k_u, int n_seeds,
    int n_per_u, double sigma_eps, const CvaeConfig& fit_cfg,
    uint64_t base_seed) {
  require(n_seeds >= 1, "run_identifiability_experiment: need seeds");
  IdentifiabilityExperiment exp;
  exp.dims = dims;
  exp.n_per_u = n_per_u;
  exp.sigma_eps = sigma_eps;
  exp.n_seeds = n_seeds;

  for (size_t a = 0; a < arm_k_u.size(); ++a) {
    const int k_u = arm_k_u[a];
    IdentifiabilityArm arm;
    arm.k_u = k_u;
    arm.seed_mcc.resize(static_cast<size_t>(n_seeds));
    arm.reports.resize(static_cast<size_t>(n_seeds));
    std::vector<char> variety(static_cast<size_t>(n_seeds), 0);

    parallel_for(n_seeds, [&](int s) {
      const uint64_t seed =
          base_seed + 100000ull * static_cast<uint64_t>(a + 1) +
          static_cast<uint64_t>(s);
      const scm::SCMParams params =
          scm::sample_scm(dims, k_u, seed, sigma_eps);
      variety[static_cast<size_t>(s)] =
          scm::check_variety(params).pass ? 1 : 0;
      const scm::SCMDataset data =
          scm::generate_scm_dataset(params, n_per_u, seed ^ 0x5bd1e995ull);
      CvaeConfig cfg = fit_cfg;
      cfg.seed = seed ^ 0xc2b2ae3d27d4eb4full;
      cfg.obs_sigma = sigma_eps;
      const CvaeFit fit = fit_conditional_vae(data, cfg);

      Mat truth(static_cast<long>(data.samples.size()),
                dims.core + dims.side + dims.dstyle);
      truth << data.latents_block("core"), data.latents_block("side"),
          data.latents_block("dstyle");
      arm.reports[static_cast<size_t>(s)] = scm::evaluate_identifiability(
          fit.latent_means, truth, {dims.core, dims.side, dims.dstyle},
          {"core", "side", "dstyle"});
      arm.seed_mcc[static_cast<size_t>(s)] =
          arm.reports[static_cast<size_t>(s)].mcc;
    });

    arm.variety_pass = true;
    for (char v : variety) arm.variety_pass = arm.variety_pass && v;
    double sum = 0.0;
    for (double v : arm.seed_mcc) sum += v;
    arm.mean_mcc = sum / n_seeds;
    double sq = 0.0;
    for (double v : arm.seed_mcc)
      sq += (v - arm.mean_mcc) * (v - arm.mean_mcc);
    arm.std_mcc = n_seeds > 1 ? std::sqrt(sq / (n_seeds - 1)) : 0.0;
    exp.arms.push_back(std::move(arm));
  }
  return exp;
}

std::string IdentifiabilityExperiment::to_json() const {
  nlohmann::json j;
  j["dims"] = {{"core", dims.core},
               {"side", dims.side},
               {"dstyle", dims.dstyle},
               {"sstyle", dims.sstyle}};
  j["n_per_u"] = n_per_u;
  j["sigma_eps"] = sigma_eps;
  j["n_seeds"] = n_seeds;
  j["arms"] = nlohmann::json::array();
  for (const auto& arm : arms) {
    nlohmann::json a;
    a["k_u"] = arm.k_u;
    a["variety_pass"] = arm.variety_pass;
    a["seed_mcc"] = arm.seed_mcc;
    a["mean_mcc"] = arm.mean_mcc;
    a["std_mcc"] = arm.std_mcc;
    nlohmann::json reports = nlohmann::json::array();
    for (const auto& r : arm.reports)
      reports.push_back(nlohmann::json::parse(r.to_json()));
    a["reports"] = reports;
    j["arms"].push_back(a);
  }
  return j.dump(2);
}

}  // namespace ciseq::eval
