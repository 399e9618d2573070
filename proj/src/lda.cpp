#include "ciseq/lda.hpp"

#include <fstream>

#include <json.hpp>

#include "ciseq/common.hpp"
#include "ciseq/corpus.hpp"

namespace ciseq::topics {
namespace {

bool usable(int token, int vocab_size) {
  return token >= corpus::kNumSpecials && token < vocab_size;
}

std::vector<int> usable_tokens(const std::vector<int>& doc, int vocab_size) {
  std::vector<int> out;
  for (int t : doc)
    if (usable(t, vocab_size)) out.push_back(t);
  return out;
}

int sample_discrete(const std::vector<double>& weights, Rng& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  double u = rng.uniform() * total;
  for (size_t i = 0; i < weights.size(); ++i) {
    u -= weights[i];
    if (u < 0.0) return static_cast<int>(i);
  }
  return static_cast<int>(weights.size()) - 1;
}

}  // namespace

TopicModel TopicModel::fit(const std::vector<std::vector<int>>& docs, int k_u,
                           double alpha, double beta, int n_iters,
                           uint64_t seed, int vocab_size) {
  require(k_u >= 1, "TopicModel::fit: k_u must be >= 1");
  require(n_iters >= 1, "TopicModel::fit: n_iters must be >= 1");
  require(!docs.empty(), "TopicModel::fit: empty corpus");
  require(alpha > 0 && beta > 0, "TopicModel::fit: priors must be positive");

  TopicModel m;
  m.k_u_ = k_u;
  m.alpha_ = alpha;
  m.beta_ = beta;
  m.n_iters_ = n_iters;
  m.seed_ = seed;
  m.vocab_size_ = vocab_size;

  const int n_docs = static_cast<int>(docs.size());
  std::vector<std::vector<int>> words(docs.size());
  for (int d = 0; d < n_docs; ++d)
    words[static_cast<size_t>(d)] =
        usable_tokens(docs[static_cast<size_t>(d)], vocab_size);

  m.topic_word_ = Eigen::MatrixXd::Zero(k_u, vocab_size);
  m.topic_total_ = Eigen::VectorXd::Zero(k_u);
  m.doc_topic_ = Eigen::MatrixXd::Zero(n_docs, k_u);

  Rng rng(seed);
  std::vector<std::vector<int>> assign(docs.size());
  for (int d = 0; d < n_docs; ++d) {
    const auto& ws = words[static_cast<size_t>(d)];
    auto& zs = assign[static_cast<size_t>(d)];
    zs.resize(ws.size());
    for (size_t i = 0; i < ws.size(); ++i) {
      const int z = rng.uniform_int(k_u);
      zs[i] = z;
      m.topic_word_(z, ws[i]) += 1.0;
      m.topic_total_(z) += 1.0;
      m.doc_topic_(d, z) += 1.0;
    }
  }

  const double vbeta = beta * vocab_size;
  std::vector<double> weights(static_cast<size_t>(k_u));
  for (int it = 0; it < n_iters; ++it) {
    for (int d = 0; d < n_docs; ++d) {
      const auto& ws = words[static_cast<size_t>(d)];
      auto& zs = assign[static_cast<size_t>(d)];
      for (size_t i = 0; i < ws.size(); ++i) {
        const int w = ws[i];
        const int old_z = zs[i];
        m.topic_word_(old_z, w) -= 1.0;
        m.topic_total_(old_z) -= 1.0;
        m.doc_topic_(d, old_z) -= 1.0;
        for (int k = 0; k < k_u; ++k) {
          weights[static_cast<size_t>(k)] =
              (m.doc_topic_(d, k) + alpha) * (m.topic_word_(k, w) + beta) /
              (m.topic_total_(k) + vbeta);
        }
        const int new_z = sample_discrete(weights, rng);
        zs[i] = new_z;
        m.topic_word_(new_z, w) += 1.0;
        m.topic_total_(new_z) += 1.0;
        m.doc_topic_(d, new_z) += 1.0;
      }
    }
  }
  return m;
}

TopicDistribution TopicModel::infer(const std::vector<int>& doc_tokens,
                                    int n_iters) const {
  require(k_u_ >= 1, "TopicModel::infer: model not fitted");
  TopicDistribution dist;
  dist.probs = Eigen::VectorXd::Constant(k_u_, 1.0 / k_u_);

  const std::vector<int> ws = usable_tokens(doc_tokens, vocab_size_);
  if (ws.empty()) {
    dist.degenerate = true;
    return dist;
  }
  if (k_u_ == 1) {
    dist.probs = Eigen::VectorXd::Ones(1);
    return dist;
  }

  uint64_t h = fnv1a64(ws.data(), ws.size() * sizeof(int));
  Rng rng(seed_ ^ (h | 1ull));

  const double vbeta = beta_ * vocab_size_;
  Eigen::VectorXd doc_topic = Eigen::VectorXd::Zero(k_u_);
  std::vector<int> zs(ws.size());
  std::vector<double> weights(static_cast<size_t>(k_u_));
  for (size_t i = 0; i < ws.size(); ++i) {
    const int z = rng.uniform_int(k_u_);
    zs[i] = z;
    doc_topic(z) += 1.0;
  }
  // burn-in sweeps plus averaged sweeps; topic-word counts are frozen
  const int burn = n_iters / 2;
  Eigen::VectorXd accum = Eigen::VectorXd::Zero(k_u_);
  int n_accum = 0;
  for (int it = 0; it < n_iters; ++it) {
    for (size_t i = 0; i < ws.size(); ++i) {
      const int w = ws[i];
      doc_topic(zs[i]) -= 1.0;
      for (int k = 0; k < k_u_; ++k) {
        weights[static_cast<size_t>(k)] =
            (doc_topic(k) + alpha_) * (topic_word_(k, w) + beta_) /
            (topic_total_(k) + vbeta);
      }
      const int z = sample_discrete(weights, rng);
      zs[i] = z;
      doc_topic(z) += 1.0;
    }
    if (it >= burn) {
      accum += doc_topic;
      ++n_accum;
    }
  }
  Eigen::VectorXd mean = accum / std::max(1, n_accum);
  dist.probs = (mean.array() + alpha_) /
               (mean.sum() + alpha_ * static_cast<double>(k_u_));
  dist.probs /= dist.probs.sum();
  return dist;
}

Eigen::MatrixXd TopicModel::topic_word_distribution() const {
  Eigen::MatrixXd out = topic_word_;
  out.array() += beta_;
  for (int k = 0; k < k_u_; ++k) out.row(k) /= out.row(k).sum();
  return out;
}

TopicDistribution TopicModel::doc_distribution(int doc_index) const {
  require(doc_index >= 0 && doc_index < num_docs(),
          "TopicModel::doc_distribution: index out of range");
  TopicDistribution dist;
  Eigen::VectorXd row = doc_topic_.row(doc_index).transpose();
  dist.probs = (row.array() + alpha_) /
               (row.sum() + alpha_ * static_cast<double>(k_u_));
  dist.probs /= dist.probs.sum();
  return dist;
}

void TopicModel::save(const std::string& stem,
                      const std::string& vocab_hash) const {
  {
    std::ofstream out(stem + ".bin", std::ios::binary);
    require(out.good(), "TopicModel::save: cannot write " + stem + ".bin");
    const char magic[8] = {'C', 'S', 'Q', 'L', 'D', 'A', '0', '1'};
    out.write(magic, 8);
    auto write_mat = [&out](const Eigen::MatrixXd& m) {
      const uint64_t r = static_cast<uint64_t>(m.rows());
      const uint64_t c = static_cast<uint64_t>(m.cols());
      out.write(reinterpret_cast<const char*>(&r), 8);
      out.write(reinterpret_cast<const char*>(&c), 8);
      out.write(reinterpret_cast<const char*>(m.data()),
                static_cast<std::streamsize>(sizeof(double) * m.size()));
    };
    write_mat(topic_word_);
    write_mat(topic_total_);
    write_mat(doc_topic_);
  }
  nlohmann::json j;
  j["k_u"] = k_u_;
  j["alpha"] = alpha_;
  j["beta"] = beta_;
  j["seed"] = seed_;
  j["n_iters"] = n_iters_;
  j["vocab_size"] = vocab_size_;
  j["vocab_hash"] = vocab_hash;
  std::ofstream out(stem + ".json");
  require(out.good(), "TopicModel::save: cannot write " + stem + ".json");
  out << j.dump(2) << "\n";
}

TopicModel TopicModel::load(const std::string& stem) {
  std::ifstream jin(stem + ".json");
  require(jin.good(), "TopicModel::load: cannot open " + stem + ".json");
  nlohmann::json j;
  jin >> j;

  TopicModel m;
  m.k_u_ = j.at("k_u").get<int>();
  m.alpha_ = j.at("alpha").get<double>();
  m.beta_ = j.at("beta").get<double>();
  m.seed_ = j.at("seed").get<uint64_t>();
  m.n_iters_ = j.at("n_iters").get<int>();
  m.vocab_size_ = j.at("vocab_size").get<int>();
  m.vocab_hash_ = j.at("vocab_hash").get<std::string>();

  std::ifstream in(stem + ".bin", std::ios::binary);
  require(in.good(), "TopicModel::load: cannot open " + stem + ".bin");
  char magic[8];
  in.read(magic, 8);
  require(std::string(magic, 8) == "CSQLDA01",
          "TopicModel::load: bad magic in " + stem + ".bin");
  auto read_mat = [&in](Eigen::MatrixXd& m) {
    uint64_t r = 0, c = 0;
    in.read(reinterpret_cast<char*>(&r), 8);
    in.read(reinterpret_cast<char*>(&c), 8);
    m.resize(static_cast<long>(r), static_cast<long>(c));
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
    require(in.good(), "TopicModel::load: truncated binary file");
  };
  read_mat(m.topic_word_);
  Eigen::MatrixXd tt;
  read_mat(tt);
  m.topic_total_ = tt.col(0);
  read_mat(m.doc_topic_);
  return m;
}

uint64_t TopicModel::state_hash() const {
  std::string blob;
  auto append = [&blob](const Eigen::MatrixXd& m) {
    blob.append(reinterpret_cast<const char*>(m.data()),
                sizeof(double) * static_cast<size_t>(m.size()));
  };
  append(topic_word_);
  Eigen::MatrixXd tt = topic_total_;
  append(tt);
  append(doc_topic_);
  return fnv1a64(blob);
}

int confounder_id(const TopicDistribution& dist) {
  require(dist.probs.size() > 0, "confounder_id: empty distribution");
  int best = 0;
  for (int i = 1; i < dist.probs.size(); ++i)
    if (dist.probs(i) > dist.probs(best)) best = i;
  return best;
}

CoreSideSplit core_side_split(const TopicDistribution& dist, double th) {
  require(th > 0.0 && th < 1.0, "core_side_split: th must lie in (0,1)");
  const int k = static_cast<int>(dist.probs.size());
  CoreSideSplit s;
  if (k == 1) {
    // no disjoint split exists; both parts collapse to the single topic
    s.g = {1};
    s.p_ct.probs = Eigen::VectorXd::Ones(1);
    s.p_st.probs = Eigen::VectorXd::Ones(1);
    s.fallback_fired = true;
    return s;
  }
  s.g.assign(static_cast<size_t>(k), 0);
  for (int i = 0; i < k; ++i)
    if (dist.probs(i) > th) s.g[static_cast<size_t>(i)] = 1;

  int n_core = 0;
  for (int v : s.g) n_core += v;
  if (n_core == 0) {
    // all side: promote the argmax topic to core
    s.g[static_cast<size_t>(confounder_id(dist))] = 1;
    s.fallback_fired = true;
    n_core = 1;
  } else if (n_core == k) {
    // all core: demote the min-probability topic to side
    int worst = 0;
    for (int i = 1; i < k; ++i)
      if (dist.probs(i) < dist.probs(worst)) worst = i;
    s.g[static_cast<size_t>(worst)] = 0;
    s.fallback_fired = true;
    n_core = k - 1;
  }

  s.p_ct.probs = Eigen::VectorXd::Zero(k);
  s.p_st.probs = Eigen::VectorXd::Zero(k);
  for (int i = 0; i < k; ++i) {
    if (s.g[static_cast<size_t>(i)])
      s.p_ct.probs(i) = dist.probs(i);
    else
      s.p_st.probs(i) = dist.probs(i);
  }
  const double ct_sum = s.p_ct.probs.sum();
  const double st_sum = s.p_st.probs.sum();
  if (ct_sum > 0.0)
    s.p_ct.probs /= ct_sum;
  else  // core topics all carry zero mass: spread uniformly over the mask
    for (int i = 0; i < k; ++i)
      s.p_ct.probs(i) = s.g[static_cast<size_t>(i)] ? 1.0 / n_core : 0.0;
  if (st_sum > 0.0)
    s.p_st.probs /= st_sum;
  else
    for (int i = 0; i < k; ++i)
      s.p_st.probs(i) =
          s.g[static_cast<size_t>(i)] ? 0.0 : 1.0 / (k - n_core);
  return s;
}

Eigen::RowVectorXd guidance_vector(const Eigen::MatrixXd& table,
                                   const TopicDistribution& p) {
  require(table.rows() == p.probs.size(),
          "guidance_vector: table rows must match topic count");
  return p.probs.transpose() * table;
}

}  // namespace ciseq::topics
