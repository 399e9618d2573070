#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ciseq/model.hpp"

namespace ciseq::eval {

/// Cross-attention of the summary decoder, teacher-forced over the given
/// generated tokens and averaged over layers and heads. Row t is the
/// attention of the position whose input embedding is generated token t;
/// rows are normalized distributions over source positions.
Eigen::MatrixXd prediction_cross_attention(
    const model::ModelParams& params, const std::vector<int>& doc_tokens,
    int tid, double cr, const std::vector<int>& generated_tokens);

struct AttendedToken {
  int source_position = 0;
  int token_id = 0;
  double weight = 0.0;
};

/// Per generated token, the k highest-weight source tokens (clamped to the
/// source length), by averaged cross-attention.
std::vector<std::vector<AttendedToken>> attention_topk(
    const model::ModelParams& params, const std::vector<int>& doc_tokens,
    int tid, double cr, const std::vector<int>& generated_tokens, int k);

/// Writes `doc_id,kind,components` CSV rows with kinds doc/cc/sc, one row
/// per kind per document; components are space-separated. Eval mode, so the
/// export is deterministic.
void export_latents(const model::ModelParams& params,
                    const std::vector<std::vector<int>>& docs,
                    const std::vector<int>& tids, const std::string& path);

}  // namespace ciseq::eval
