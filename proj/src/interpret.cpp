#include "ciseq/interpret.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "ciseq/common.hpp"

namespace ciseq::eval {

Eigen::MatrixXd prediction_cross_attention(
    const model::ModelParams& params, const std::vector<int>& doc_tokens,
    int tid, double cr, const std::vector<int>& generated_tokens) {
  const model::ModelConfig& cfg = params.config;
  ad::Tape tape;
  model::ParamVars pv = model::ParamVars::leaves(tape, params);
  model::EncodeGraph enc = model::encoder_forward(tape, pv, cfg, doc_tokens);
  model::PosteriorGraph post = model::posterior_forward(
      tape, pv, cfg, enc.h_doc, tid, model::LatentNoise{}, {});
  ad::Var h_sstyle = ad::scale(post.h_dstyle, cr);
  model::DecodeGraph dec = model::prediction_decode(
      tape, pv, cfg, post.h_core, h_sstyle, generated_tokens, enc.seq, {});

  require(!dec.cross_attn.empty(), "prediction_cross_attention: no layers");
  Eigen::MatrixXd avg = Eigen::MatrixXd::Zero(dec.cross_attn[0].rows(),
                                              dec.cross_attn[0].cols());
  for (const auto& a : dec.cross_attn) avg += a;
  avg /= static_cast<double>(dec.cross_attn.size());
  // drop the latent slot row; row t then belongs to generated token t
  return avg.bottomRows(avg.rows() - 1);
}

std::vector<std::vector<AttendedToken>> attention_topk(
    const model::ModelParams& params, const std::vector<int>& doc_tokens,
    int tid, double cr, const std::vector<int>& generated_tokens, int k) {
  require(k >= 1, "attention_topk: k must be at least 1");
  const Eigen::MatrixXd attn = prediction_cross_attention(
      params, doc_tokens, tid, cr, generated_tokens);
  const int src_len = static_cast<int>(attn.cols());
  const int keep = std::min(k, src_len);

  std::vector<std::vector<AttendedToken>> out(
      static_cast<size_t>(attn.rows()));
  for (long r = 0; r < attn.rows(); ++r) {
    std::vector<int> order(static_cast<size_t>(src_len));
    for (int i = 0; i < src_len; ++i) order[static_cast<size_t>(i)] = i;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      if (attn(r, a) != attn(r, b)) return attn(r, a) > attn(r, b);
      return a < b;
    });
    auto& row = out[static_cast<size_t>(r)];
    for (int i = 0; i < keep; ++i) {
      AttendedToken t;
      t.source_position = order[static_cast<size_t>(i)];
      t.token_id = doc_tokens[static_cast<size_t>(t.source_position)];
      t.weight = attn(r, t.source_position);
      row.push_back(t);
    }
  }
  return out;
}

void export_latents(const model::ModelParams& params,
                    const std::vector<std::vector<int>>& docs,
                    const std::vector<int>& tids, const std::string& path) {
  require(docs.size() == tids.size(),
          "export_latents: one confounder id per document required");
  std::ofstream out(path);
  require(out.good(), "export_latents: cannot write " + path);
  out << "doc_id,kind,components\n";
  char buf[32];
  auto write_row = [&out, &buf](size_t id, const char* kind,
                                const Eigen::RowVectorXd& v) {
    out << id << ',' << kind << ',';
    for (long i = 0; i < v.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", v(i));
      if (i) out << ' ';
      out << buf;
    }
    out << '\n';
  };
  for (size_t i = 0; i < docs.size(); ++i) {
    const model::LatentBundle b =
        model::encode_document(params, docs[i], tids[i], nullptr);
    write_row(i, "doc", b.h_doc);
    write_row(i, "cc", b.h_core);
    write_row(i, "sc", b.h_side);
  }
  require(out.good(), "export_latents: write failed for " + path);
}

}  // namespace ciseq::eval
