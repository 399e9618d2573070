#include <cmath>
#include <fstream>

#include "ciseq/common.hpp"
#include "ciseq/train.hpp"

namespace ciseq::train {

Adam::Adam(model::ModelParams& params, double lr, double beta1, double beta2,
           double eps)
    : params_(&params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  params.for_each_tensor([this](const std::string& name, const Mat& m) {
    state_.emplace(name, std::make_pair(Mat::Zero(m.rows(), m.cols()),
                                        Mat::Zero(m.rows(), m.cols())));
  });
}

void Adam::step(const GradMap& grads, double lr_scale) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const double alpha = lr_ * lr_scale;
  params_->for_each_tensor([&](const std::string& name, Mat& p) {
    auto git = grads.find(name);
    require(git != grads.end(), "Adam::step: missing gradient for " + name);
    const Mat& g = git->second;
    auto& [m, v] = state_.at(name);
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    const Mat m_hat = m / bc1;
    const Mat v_hat = v / bc2;
    p.array() -= alpha * m_hat.array() / (v_hat.array().sqrt() + eps_);
  });
}

TrainResult train(const TrainConfig& cfg,
                  const std::vector<Example>& examples,
                  const model::ModelConfig& model_cfg,
                  const std::string& log_csv_path,
                  const std::optional<std::string>& checkpoint_stem,
                  const model::CheckpointMeta* meta_template) {
  cfg.validate();
  require(!examples.empty(), "train: empty corpus");

  TrainResult result;
  result.params = model::ModelParams::init(model_cfg, cfg.seed);
  Adam opt(result.params, cfg.lr);
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);

  std::ofstream log;
  if (!log_csv_path.empty()) {
    log.open(log_csv_path);
    require(log.good(), "train: cannot write log " + log_csv_path);
    log << "step,L_R,L_P,L_KL,L_LDA,total\n";
  }

  std::vector<int> order(examples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);
  size_t cursor = 0;

  GradMap grads;
  char line[256];
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<Example> batch;
    batch.reserve(static_cast<size_t>(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor >= order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(examples[static_cast<size_t>(order[cursor++])]);
    }

    const LossBreakdown loss =
        loss_components(batch, result.params, rng, cfg, step, &grads);
    if (!std::isfinite(loss.total)) {
      throw std::runtime_error(
          "train: non-finite total loss at step " + std::to_string(step) +
          " (L_R=" + std::to_string(loss.l_r) +
          ", L_P=" + std::to_string(loss.l_p) +
          ", L_KL=" + std::to_string(loss.l_kl) +
          ", L_LDA=" + std::to_string(loss.l_lda) + ")");
    }

    double lr_scale = 1.0;
    if (cfg.warmup_steps > 0)
      lr_scale = std::min(1.0, static_cast<double>(step + 1) /
                                   cfg.warmup_steps);
    opt.step(grads, lr_scale);

    if (log.is_open()) {
      std::snprintf(line, sizeof(line),
                    "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", step, loss.l_r,
                    loss.l_p, loss.l_kl, loss.l_lda, loss.total);
      log << line;
    }

    if (checkpoint_stem && cfg.checkpoint_interval > 0 &&
        (step + 1) % cfg.checkpoint_interval == 0 && step + 1 < cfg.steps) {
      model::CheckpointMeta meta;
      if (meta_template) meta = *meta_template;
      meta.seed = cfg.seed;
      meta.step_count = step + 1;
      meta.train_config = cfg.as_map();
      save_checkpoint(*checkpoint_stem + "_step" + std::to_string(step + 1),
                      result.params, meta);
    }
  }

  double cr_sum = 0.0;
  for (const auto& ex : examples) cr_sum += ex.pair.cr;
  result.corpus_mean_cr = cr_sum / static_cast<double>(examples.size());
  result.steps = cfg.steps;
  return result;
}

}  // namespace ciseq::train
