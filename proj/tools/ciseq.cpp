// Command-line entry point: lda-fit, train, infer, eval, scm-gen, identify.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "ciseq/common.hpp"
#include "ciseq/config.hpp"
#include "ciseq/corpus.hpp"
#include "ciseq/identify.hpp"
#include "ciseq/infer.hpp"
#include "ciseq/interpret.hpp"
#include "ciseq/lda.hpp"
#include "ciseq/model.hpp"
#include "ciseq/rouge.hpp"
#include "ciseq/scm.hpp"
#include "ciseq/train.hpp"

namespace fs = std::filesystem;
using ciseq::Config;
using ciseq::require;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
};

Config resolve_config(const CommonArgs& args) {
  Config cfg;
  if (!args.config_path.empty()) cfg = Config::load(args.config_path);
  cfg.apply_overrides(args.overrides);
  return cfg;
}

std::string out_dir(const Config& cfg) {
  const std::string dir = cfg.str("out_dir");
  fs::create_directories(dir);
  return dir;
}

void write_snapshot(const Config& cfg, const std::string& dir) {
  cfg.write_snapshot(dir + "/resolved.cfg");
}

// --- shared model/train key handling ---------------------------------------

const std::set<std::string> kModelKeys{
    "d_h",      "d_u",          "d_core",   "d_side",   "d_dstyle",
    "d_sstyle", "k_u",          "enc_layers", "dec_layers", "n_heads",
    "d_ff",     "max_doc_len",  "max_sum_len", "th"};

ciseq::model::ModelConfig model_config_from(const Config& cfg, int vocab) {
  ciseq::model::ModelConfig mc = ciseq::model::ModelConfig::toy(vocab);
  mc.d_h = static_cast<int>(cfg.integer_or("d_h", mc.d_h));
  mc.d_u = static_cast<int>(cfg.integer_or("d_u", mc.d_u));
  mc.d_core = static_cast<int>(cfg.integer_or("d_core", mc.d_core));
  mc.d_side = static_cast<int>(cfg.integer_or("d_side", mc.d_side));
  mc.d_dstyle = static_cast<int>(cfg.integer_or("d_dstyle", mc.d_dstyle));
  mc.d_sstyle = static_cast<int>(cfg.integer_or("d_sstyle", mc.d_dstyle));
  mc.k_u = static_cast<int>(cfg.integer_or("k_u", mc.k_u));
  mc.enc_layers = static_cast<int>(cfg.integer_or("enc_layers", mc.enc_layers));
  mc.dec_layers = static_cast<int>(cfg.integer_or("dec_layers", mc.dec_layers));
  mc.n_heads = static_cast<int>(cfg.integer_or("n_heads", mc.n_heads));
  mc.d_ff = static_cast<int>(cfg.integer_or("d_ff", mc.d_ff));
  mc.max_doc_len =
      static_cast<int>(cfg.integer_or("max_doc_len", mc.max_doc_len));
  mc.max_sum_len =
      static_cast<int>(cfg.integer_or("max_sum_len", mc.max_sum_len));
  mc.th = cfg.num_or("th", mc.th);
  mc.validate();
  return mc;
}

const std::set<std::string> kTrainKeys{
    "corpus",        "limit",           "vocab",
    "vocab_max_size", "topics",          "out_dir",
    "lambda_kl",     "lambda_lda",      "lr",
    "batch_size",    "steps",           "seed",
    "warmup_steps",  "kl_anneal_steps", "checkpoint_interval",
    "no_addition",   "no_replacement",  "no_confounder",
    "no_content_guidance", "no_style_guidance", "style_mode",
    "lda_alpha",     "lda_beta",        "lda_iters"};

ciseq::train::TrainConfig train_config_from(const Config& cfg) {
  ciseq::train::TrainConfig tc;
  tc.lambda_kl = cfg.num_or("lambda_kl", tc.lambda_kl);
  tc.lambda_lda = cfg.num_or("lambda_lda", tc.lambda_lda);
  tc.lr = cfg.num_or("lr", tc.lr);
  tc.batch_size = static_cast<int>(cfg.integer_or("batch_size", tc.batch_size));
  tc.steps = static_cast<int>(cfg.integer_or("steps", tc.steps));
  tc.seed = static_cast<uint64_t>(cfg.integer_or("seed", 1));
  tc.warmup_steps =
      static_cast<int>(cfg.integer_or("warmup_steps", tc.warmup_steps));
  tc.kl_anneal_steps =
      static_cast<int>(cfg.integer_or("kl_anneal_steps", tc.kl_anneal_steps));
  tc.checkpoint_interval = static_cast<int>(
      cfg.integer_or("checkpoint_interval", tc.checkpoint_interval));
  tc.flags.no_addition = cfg.flag_or("no_addition", false);
  tc.flags.no_replacement = cfg.flag_or("no_replacement", false);
  tc.flags.no_confounder = cfg.flag_or("no_confounder", false);
  tc.flags.no_content_guidance = cfg.flag_or("no_content_guidance", false);
  tc.flags.no_style_guidance = cfg.flag_or("no_style_guidance", false);
  tc.flags.style_mode = cfg.str_or("style_mode", "own_head");
  tc.validate();
  return tc;
}

std::optional<int64_t> limit_from(const Config& cfg) {
  if (!cfg.has("limit")) return std::nullopt;
  return cfg.integer("limit");
}

// --- subcommands ------------------------------------------------------------

int run_lda_fit(const Config& cfg) {
  std::set<std::string> known{"corpus", "limit", "vocab_max_size", "k_u",
                              "lda_alpha", "lda_beta", "lda_iters", "seed",
                              "out_dir"};
  cfg.check_known(known);
  const std::string dir = out_dir(cfg);

  const auto raw = ciseq::corpus::load_corpus(cfg.str("corpus"),
                                              limit_from(cfg));
  require(!raw.empty(), "lda-fit: corpus is empty");
  const int max_size = static_cast<int>(cfg.integer_or("vocab_max_size", 2000));
  ciseq::corpus::Vocabulary vocab =
      ciseq::corpus::Vocabulary::build(raw, max_size);
  vocab.save(dir + "/vocab.tsv");

  const int k_u = static_cast<int>(cfg.integer_or("k_u", 5));
  const double alpha = cfg.num_or("lda_alpha", 50.0 / k_u);
  const double beta = cfg.num_or("lda_beta", 0.01);
  const int iters = static_cast<int>(cfg.integer_or("lda_iters", 200));
  const uint64_t seed = static_cast<uint64_t>(cfg.integer_or("seed", 1));

  std::vector<std::vector<int>> docs;
  docs.reserve(raw.size());
  for (const auto& p : raw) docs.push_back(vocab.encode(p.doc_text));
  ciseq::topics::TopicModel tm = ciseq::topics::TopicModel::fit(
      docs, k_u, alpha, beta, iters, seed, vocab.size());
  tm.save(dir + "/topics", ciseq::to_hex(vocab.hash()));

  write_snapshot(cfg, dir);
  std::cout << "fitted " << k_u << " topics over " << raw.size()
            << " documents -> " << dir << "\n";
  return 0;
}

struct LoadedCorpus {
  ciseq::corpus::Vocabulary vocab;
  std::vector<ciseq::corpus::DocumentSummaryPair> pairs;
};

LoadedCorpus load_and_encode(const Config& cfg,
                             const ciseq::model::ModelConfig* mc_hint,
                             int max_doc_len, int max_sum_len) {
  (void)mc_hint;
  const auto raw =
      ciseq::corpus::load_corpus(cfg.str("corpus"), limit_from(cfg));
  require(!raw.empty(), "corpus is empty");
  LoadedCorpus out{
      cfg.has("vocab")
          ? ciseq::corpus::Vocabulary::load(cfg.str("vocab"))
          : ciseq::corpus::Vocabulary::build(
                raw, static_cast<int>(cfg.integer_or("vocab_max_size", 2000))),
      {}};
  out.pairs.reserve(raw.size());
  for (const auto& p : raw)
    out.pairs.push_back(ciseq::corpus::encode_pair(
        p.doc_text, p.sum_text, out.vocab, max_doc_len, max_sum_len));
  return out;
}

int run_train(const Config& cfg) {
  std::set<std::string> known = kTrainKeys;
  known.insert(kModelKeys.begin(), kModelKeys.end());
  cfg.check_known(known);
  const std::string dir = out_dir(cfg);

  // vocabulary + encoded pairs
  Config probe = cfg;  // model dims needed before vocab size is known
  ciseq::model::ModelConfig dims_probe = model_config_from(probe, 1000);
  LoadedCorpus corpus = load_and_encode(cfg, nullptr, dims_probe.max_doc_len,
                                        dims_probe.max_sum_len);
  corpus.vocab.save(dir + "/vocab.tsv");
  ciseq::model::ModelConfig mc = model_config_from(cfg, corpus.vocab.size());

  // topic model: load from stem or fit on this corpus
  ciseq::topics::TopicModel tm = [&]() {
    if (cfg.has("topics"))
      return ciseq::topics::TopicModel::load(cfg.str("topics"));
    std::vector<std::vector<int>> docs;
    docs.reserve(corpus.pairs.size());
    for (const auto& p : corpus.pairs) docs.push_back(p.doc_tokens);
    const double alpha = cfg.num_or("lda_alpha", 50.0 / mc.k_u);
    const double beta = cfg.num_or("lda_beta", 0.01);
    const int iters = static_cast<int>(cfg.integer_or("lda_iters", 200));
    return ciseq::topics::TopicModel::fit(
        docs, mc.k_u, alpha, beta, iters,
        static_cast<uint64_t>(cfg.integer_or("seed", 1)),
        corpus.vocab.size());
  }();
  require(tm.k_u() == mc.k_u, "train: topic model k_u differs from config");
  tm.save(dir + "/topics", ciseq::to_hex(corpus.vocab.hash()));

  std::vector<ciseq::train::Example> examples;
  examples.reserve(corpus.pairs.size());
  for (const auto& p : corpus.pairs) {
    ciseq::train::Example ex;
    ex.pair = p;
    ex.topics =
        ciseq::train::make_topic_artifacts(tm, p.doc_tokens, mc.th);
    examples.push_back(std::move(ex));
  }

  ciseq::train::TrainConfig tc = train_config_from(cfg);
  ciseq::model::CheckpointMeta meta;
  meta.vocab_hash = ciseq::to_hex(corpus.vocab.hash());
  meta.topic_model_hash = ciseq::to_hex(tm.state_hash());
  const std::string ckpt_stem = dir + "/checkpoint";
  ciseq::train::TrainResult result = ciseq::train::train(
      tc, examples, mc, dir + "/log.csv", ckpt_stem, &meta);

  meta.seed = tc.seed;
  meta.step_count = result.steps;
  meta.corpus_mean_cr = result.corpus_mean_cr;
  meta.train_config = tc.as_map();
  ciseq::model::save_checkpoint(ckpt_stem, result.params, meta);

  write_snapshot(cfg, dir);
  std::cout << "trained " << tc.steps << " steps over " << examples.size()
            << " pairs -> " << ckpt_stem << ".bin\n";
  return 0;
}

ciseq::infer::InferConfig infer_config_from(const Config& cfg) {
  ciseq::infer::InferConfig ic;
  ic.n_candidates =
      static_cast<int>(cfg.integer_or("candidates", ic.n_candidates));
  ic.opt_steps = static_cast<int>(cfg.integer_or("opt_steps", ic.opt_steps));
  ic.lambda_core = cfg.num_or("lambda_cc", ic.lambda_core);
  ic.lambda_side = cfg.num_or("lambda_sc", ic.lambda_side);
  ic.lambda_dstyle = cfg.num_or("lambda_ds", ic.lambda_dstyle);
  ic.step_size = cfg.num_or("step_size", ic.step_size);
  ic.literal_sign = cfg.flag_or("literal_sign", false);
  ic.validate();
  return ic;
}

const std::set<std::string> kInferKeys{
    "checkpoint", "vocab",     "input",     "out_dir",   "cr",
    "candidates", "opt_steps", "lambda_cc", "lambda_sc", "lambda_ds",
    "step_size",  "literal_sign", "seed",   "max_len",   "beam",
    "limit"};

int run_infer(const Config& cfg) {
  cfg.check_known(kInferKeys);
  const std::string dir = out_dir(cfg);

  ciseq::model::Checkpoint ckpt =
      ciseq::model::load_checkpoint(cfg.str("checkpoint"));
  ciseq::corpus::Vocabulary vocab =
      ciseq::corpus::Vocabulary::load(cfg.str("vocab"));
  require(ciseq::to_hex(vocab.hash()) == ckpt.meta.vocab_hash,
          "infer: vocabulary does not match the checkpoint");

  const auto raw =
      ciseq::corpus::load_documents(cfg.str("input"), limit_from(cfg));
  const double cr = ciseq::infer::resolve_cr(cfg.str_or("cr", "auto"),
                                             ckpt.meta.corpus_mean_cr);
  ciseq::infer::InferConfig ic = infer_config_from(cfg);
  const uint64_t seed = static_cast<uint64_t>(cfg.integer_or("seed", 1));
  const int max_len = static_cast<int>(
      cfg.integer_or("max_len", ckpt.params.config.max_sum_len - 1));
  ciseq::model::GenStrategy strategy = ciseq::model::GenStrategy::greedy();
  if (cfg.has("beam"))
    strategy =
        ciseq::model::GenStrategy::beam(static_cast<int>(cfg.integer("beam")));

  fs::create_directories(dir + "/traces");
  struct Row {
    std::string doc_text, summary, trace_file;
  };
  std::vector<Row> rows(raw.size());
  ciseq::parallel_for(static_cast<int>(raw.size()), [&](int i) {
    const auto& doc_text = raw[static_cast<size_t>(i)].doc_text;
    std::vector<int> doc_tokens = vocab.encode(doc_text);
    require(!doc_tokens.empty(), "infer: document " + std::to_string(i) +
                                     " tokenizes to nothing");
    // assemble [CLS] ... [EOS] capped to the model maximum
    const size_t keep = std::min(
        doc_tokens.size(),
        static_cast<size_t>(ckpt.params.config.max_doc_len - 2));
    std::vector<int> full{ciseq::corpus::kCls};
    full.insert(full.end(), doc_tokens.begin(),
                doc_tokens.begin() + static_cast<long>(keep));
    full.push_back(ciseq::corpus::kEos);

    ciseq::Rng rng(seed + static_cast<uint64_t>(i) * 0x9e3779b9ull);
    ciseq::infer::OptimizedLatents lat =
        ciseq::infer::infer_document_latents(ckpt.params, full, ic, rng);
    const Eigen::RowVectorXd sstyle =
        ciseq::model::derive_summary_style(lat.dstyle, cr);
    const std::vector<int> out_tokens = ciseq::model::generate(
        ckpt.params, lat.core, sstyle, full, max_len, strategy);

    Row& row = rows[static_cast<size_t>(i)];
    row.doc_text = doc_text;
    row.summary = vocab.decode(out_tokens);
    row.trace_file = "traces/doc" + std::to_string(i) + ".csv";
    std::ofstream trace(dir + "/" + row.trace_file);
    trace << "step,objective\n";
    char buf[64];
    for (size_t s = 0; s < lat.trace.size(); ++s) {
      std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", s, lat.trace[s]);
      trace << buf;
    }
  });

  std::ofstream out(dir + "/summaries.jsonl");
  require(out.good(), "infer: cannot write summaries");
  for (const auto& row : rows) {
    nlohmann::json j;
    j["document"] = row.doc_text;
    j["cr"] = cr;
    j["summary"] = row.summary;
    j["objective_trace_file"] = row.trace_file;
    out << j.dump() << "\n";
  }
  write_snapshot(cfg, dir);
  std::cout << "summarized " << rows.size() << " documents -> " << dir
            << "/summaries.jsonl\n";
  return 0;
}

const std::set<std::string> kEvalKeys{
    "checkpoint", "vocab",     "corpus",    "limit",    "out_dir",
    "cr",         "cr_mode",   "candidates", "opt_steps", "lambda_cc",
    "lambda_sc",  "lambda_ds", "step_size",  "seed",     "max_len",
    "attention_k", "export_latents", "topics", "literal_sign"};

int run_eval(const Config& cfg) {
  cfg.check_known(kEvalKeys);
  const std::string dir = out_dir(cfg);

  ciseq::model::Checkpoint ckpt =
      ciseq::model::load_checkpoint(cfg.str("checkpoint"));
  ciseq::corpus::Vocabulary vocab =
      ciseq::corpus::Vocabulary::load(cfg.str("vocab"));
  require(ciseq::to_hex(vocab.hash()) == ckpt.meta.vocab_hash,
          "eval: vocabulary does not match the checkpoint");
  const ciseq::model::ModelConfig& mc = ckpt.params.config;

  const auto raw =
      ciseq::corpus::load_corpus(cfg.str("corpus"), limit_from(cfg));
  require(!raw.empty(), "eval: empty corpus");
  std::vector<ciseq::corpus::DocumentSummaryPair> pairs;
  for (const auto& p : raw)
    pairs.push_back(ciseq::corpus::encode_pair(p.doc_text, p.sum_text, vocab,
                                               mc.max_doc_len,
                                               mc.max_sum_len));

  const std::string cr_mode = cfg.str_or("cr_mode", "auto");
  require(cr_mode == "auto" || cr_mode == "oracle" || cr_mode == "fixed",
          "eval: cr_mode must be auto, oracle, or fixed");
  ciseq::infer::InferConfig ic = infer_config_from(cfg);
  const uint64_t seed = static_cast<uint64_t>(cfg.integer_or("seed", 1));
  const int max_len =
      static_cast<int>(cfg.integer_or("max_len", mc.max_sum_len - 1));

  std::vector<ciseq::eval::RougeScores> scores(pairs.size());
  ciseq::parallel_for(static_cast<int>(pairs.size()), [&](int i) {
    const auto& p = pairs[static_cast<size_t>(i)];
    double cr = ckpt.meta.corpus_mean_cr;
    if (cr_mode == "oracle")
      cr = p.cr;
    else if (cr_mode == "fixed")
      cr = ciseq::infer::resolve_cr(cfg.str("cr"), ckpt.meta.corpus_mean_cr);
    require(cr > 0.0, "eval: resolved cr must be positive");
    ciseq::Rng rng(seed + static_cast<uint64_t>(i) * 0x9e3779b9ull);
    ciseq::infer::OptimizedLatents lat =
        ciseq::infer::infer_document_latents(ckpt.params, p.doc_tokens, ic,
                                             rng);
    const Eigen::RowVectorXd sstyle =
        ciseq::model::derive_summary_style(lat.dstyle, cr);
    const std::vector<int> gen =
        ciseq::model::generate(ckpt.params, lat.core, sstyle, p.doc_tokens,
                               max_len, ciseq::model::GenStrategy::greedy());
    scores[static_cast<size_t>(i)] = ciseq::eval::rouge_scores(
        gen, ciseq::corpus::strip_specials(p.sum_tokens));
  });

  auto mean_triple = [&](auto get) {
    ciseq::eval::RougeTriple t;
    for (const auto& s : scores) {
      t.precision += get(s).precision;
      t.recall += get(s).recall;
      t.f1 += get(s).f1;
    }
    const double n = static_cast<double>(scores.size());
    t.precision /= n;
    t.recall /= n;
    t.f1 /= n;
    return t;
  };
  const auto r1 = mean_triple([](const auto& s) { return s.r1; });
  const auto r2 = mean_triple([](const auto& s) { return s.r2; });
  const auto rl = mean_triple([](const auto& s) { return s.rl; });
  nlohmann::json j;
  j["r1"] = {{"p", r1.precision}, {"r", r1.recall}, {"f1", r1.f1}};
  j["r2"] = {{"p", r2.precision}, {"r", r2.recall}, {"f1", r2.f1}};
  j["rl"] = {{"p", rl.precision}, {"r", rl.recall}, {"f1", rl.f1}};
  j["examples"] = pairs.size();
  std::ofstream(dir + "/metrics.json") << j.dump(2) << "\n";

  const int attention_k = static_cast<int>(cfg.integer_or("attention_k", 0));
  const bool export_lat = cfg.flag_or("export_latents", false);
  if (attention_k > 0 || export_lat) {
    require(cfg.has("topics"),
            "eval: attention/latent dumps need a topics stem for tids");
    ciseq::topics::TopicModel tm =
        ciseq::topics::TopicModel::load(cfg.str("topics"));
    std::vector<int> tids(pairs.size());
    std::vector<std::vector<int>> docs(pairs.size());
    for (size_t i = 0; i < pairs.size(); ++i) {
      docs[i] = pairs[i].doc_tokens;
      tids[i] = ciseq::topics::confounder_id(tm.infer(docs[i]));
    }
    if (export_lat)
      ciseq::eval::export_latents(ckpt.params, docs, tids,
                                  dir + "/latents.csv");
    if (attention_k > 0) {
      nlohmann::json dump = nlohmann::json::array();
      for (size_t i = 0; i < pairs.size(); ++i) {
        ciseq::Rng rng(seed + static_cast<uint64_t>(i) * 0x9e3779b9ull);
        ciseq::infer::OptimizedLatents lat =
            ciseq::infer::infer_document_latents(ckpt.params, docs[i], ic,
                                                 rng);
        const Eigen::RowVectorXd sstyle = ciseq::model::derive_summary_style(
            lat.dstyle, ckpt.meta.corpus_mean_cr);
        const std::vector<int> gen = ciseq::model::generate(
            ckpt.params, lat.core, sstyle, docs[i], max_len,
            ciseq::model::GenStrategy::greedy());
        if (gen.empty()) continue;
        auto top = ciseq::eval::attention_topk(
            ckpt.params, docs[i], tids[i], ckpt.meta.corpus_mean_cr, gen,
            attention_k);
        nlohmann::json entry;
        entry["doc_id"] = i;
        entry["tokens"] = nlohmann::json::array();
        for (size_t t = 0; t < gen.size(); ++t) {
          nlohmann::json tok;
          tok["token"] = vocab.token(gen[t]);
          tok["attended"] = nlohmann::json::array();
          for (const auto& a : top[t])
            tok["attended"].push_back(
                {{"token", vocab.token(a.token_id)}, {"weight", a.weight}});
          entry["tokens"].push_back(tok);
        }
        dump.push_back(entry);
      }
      std::ofstream(dir + "/attention.json") << dump.dump(2) << "\n";
    }
  }

  write_snapshot(cfg, dir);
  std::cout << "evaluated " << pairs.size() << " pairs: R1 f1 " << r1.f1
            << ", R2 f1 " << r2.f1 << ", RL f1 " << rl.f1 << "\n";
  return 0;
}

const std::set<std::string> kScmGenKeys{
    "d_core", "d_side", "d_dstyle", "d_sstyle", "k_u",
    "n_per_u", "sigma_eps", "seed", "out_dir"};

ciseq::scm::BlockDims dims_from(const Config& cfg) {
  ciseq::scm::BlockDims dims;
  dims.core = static_cast<int>(cfg.integer_or("d_core", 4));
  dims.side = static_cast<int>(cfg.integer_or("d_side", 4));
  dims.dstyle = static_cast<int>(cfg.integer_or("d_dstyle", 4));
  dims.sstyle = static_cast<int>(cfg.integer_or("d_sstyle", dims.dstyle));
  return dims;
}

int run_scm_gen(const Config& cfg) {
  cfg.check_known(kScmGenKeys);
  const std::string dir = out_dir(cfg);
  const ciseq::scm::BlockDims dims = dims_from(cfg);
  const int k_u = static_cast<int>(cfg.integer_or("k_u", 5));
  const int n_per_u = static_cast<int>(cfg.integer_or("n_per_u", 1000));
  const double sigma_eps = cfg.num_or("sigma_eps", 0.05);
  const uint64_t seed = static_cast<uint64_t>(cfg.integer_or("seed", 1));

  const ciseq::scm::SCMParams params =
      ciseq::scm::sample_scm(dims, k_u, seed, sigma_eps);
  const ciseq::scm::VarietyCheck variety = ciseq::scm::check_variety(params);
  const ciseq::scm::SCMDataset data =
      ciseq::scm::generate_scm_dataset(params, n_per_u, seed ^ 0xabcdefull);
  data.save(dir + "/scm_dataset");

  nlohmann::json j;
  j["variety_pass"] = variety.pass;
  j["stacked_rank"] = variety.stacked.rank;
  j["stacked_columns"] = variety.stacked.columns;
  for (size_t b = 0; b < variety.blocks.size(); ++b) {
    j["blocks"][variety.block_names[b]] = {
        {"rank", variety.blocks[b].rank},
        {"columns", variety.blocks[b].columns},
        {"full_column_rank", variety.blocks[b].full_column_rank}};
  }
  std::ofstream(dir + "/variety.json") << j.dump(2) << "\n";

  write_snapshot(cfg, dir);
  std::cout << "generated " << data.samples.size() << " samples (variety "
            << (variety.pass ? "pass" : "fail") << ") -> " << dir << "\n";
  return 0;
}

const std::set<std::string> kIdentifyKeys{
    "d_core", "d_side", "d_dstyle", "d_sstyle", "k_u", "seeds", "n_per_u",
    "sigma_eps", "seed", "hidden", "epochs", "batch_size", "lr",
    "include_null_arm", "out_dir"};

int run_identify(const Config& cfg) {
  cfg.check_known(kIdentifyKeys);
  const std::string dir = out_dir(cfg);
  const ciseq::scm::BlockDims dims = dims_from(cfg);
  const int k_u = static_cast<int>(cfg.integer_or("k_u", 5));
  const int seeds = static_cast<int>(cfg.integer_or("seeds", 5));
  const int n_per_u = static_cast<int>(cfg.integer_or("n_per_u", 10000));
  const double sigma_eps = cfg.num_or("sigma_eps", 0.05);
  const uint64_t base_seed = static_cast<uint64_t>(cfg.integer_or("seed", 1));

  ciseq::eval::CvaeConfig fit;
  fit.hidden = static_cast<int>(cfg.integer_or("hidden", fit.hidden));
  fit.epochs = static_cast<int>(cfg.integer_or("epochs", fit.epochs));
  fit.batch_size =
      static_cast<int>(cfg.integer_or("batch_size", fit.batch_size));
  fit.lr = cfg.num_or("lr", fit.lr);

  std::vector<int> arms{k_u};
  if (cfg.flag_or("include_null_arm", true) && k_u != 1) arms.push_back(1);

  const ciseq::eval::IdentifiabilityExperiment exp =
      ciseq::eval::run_identifiability_experiment(dims, arms, seeds, n_per_u,
                                                  sigma_eps, fit, base_seed);
  std::ofstream(dir + "/report.json") << exp.to_json() << "\n";
  write_snapshot(cfg, dir);
  for (const auto& arm : exp.arms)
    std::cout << "k_u=" << arm.k_u << " variety "
              << (arm.variety_pass ? "pass" : "fail") << " mean MCC "
              << arm.mean_mcc << " (std " << arm.std_mcc << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"causality-inspired summarization toolkit"};
  app.require_subcommand(1);

  struct Sub {
    CLI::App* cmd;
    CommonArgs args;
    int (*fn)(const Config&);
  };
  std::vector<Sub> subs;
  subs.reserve(8);  // CLI11 keeps pointers into these entries
  auto add = [&](const std::string& name, const std::string& desc,
                 int (*fn)(const Config&)) {
    Sub s;
    s.cmd = app.add_subcommand(name, desc);
    s.fn = fn;
    subs.push_back(s);
    Sub& ref = subs.back();
    ref.cmd->add_option("--config", ref.args.config_path,
                        "flat key-value config file");
    ref.cmd->add_option("--set", ref.args.overrides,
                        "override entries as key=value");
    return ref.cmd;
  };

  auto* lda = add("lda-fit", "fit the topic model over a corpus", run_lda_fit);
  auto* train = add("train", "train the summarizer", run_train);
  auto* infer = add("infer", "optimize latents and summarize documents",
                    run_infer);
  auto* eval = add("eval", "score a checkpoint against references", run_eval);
  auto* scm_gen = add("scm-gen", "sample a synthetic generative dataset",
                      run_scm_gen);
  auto* identify = add("identify", "run the latent-recovery experiment",
                       run_identify);

  // convenience flags mapped onto config keys
  std::map<CLI::App*, std::map<std::string, std::string>> direct;
  auto map_flag = [&direct](CLI::App* cmd, const std::string& flag,
                            const std::string& key) {
    cmd->add_option_function<std::string>(
        flag,
        [&direct, cmd, key](const std::string& v) { direct[cmd][key] = v; });
  };
  for (auto* cmd : {lda, train}) {
    map_flag(cmd, "--corpus", "corpus");
    map_flag(cmd, "--out", "out_dir");
    map_flag(cmd, "--seed", "seed");
    map_flag(cmd, "--limit", "limit");
    map_flag(cmd, "--k-u", "k_u");
  }
  map_flag(train, "--steps", "steps");
  map_flag(train, "--vocab", "vocab");
  map_flag(train, "--topics", "topics");
  for (auto* cmd : {infer, eval}) {
    map_flag(cmd, "--checkpoint", "checkpoint");
    map_flag(cmd, "--vocab", "vocab");
    map_flag(cmd, "--cr", "cr");
    map_flag(cmd, "--out", "out_dir");
    map_flag(cmd, "--seed", "seed");
    map_flag(cmd, "--limit", "limit");
  }
  map_flag(infer, "--input", "input");
  map_flag(eval, "--corpus", "corpus");
  map_flag(eval, "--topics", "topics");
  for (auto* cmd : {scm_gen, identify}) {
    map_flag(cmd, "--out", "out_dir");
    map_flag(cmd, "--seed", "seed");
    map_flag(cmd, "--k-u", "k_u");
    map_flag(cmd, "--n-per-u", "n_per_u");
  }
  map_flag(identify, "--seeds", "seeds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints usage/help
    return e.get_name() == "CallForHelp" ? 0 : 2;
  }

  try {
    for (auto& sub : subs) {
      if (!sub.cmd->parsed()) continue;
      Config cfg = resolve_config(sub.args);
      for (const auto& [key, value] : direct[sub.cmd]) cfg.set(key, value);
      return sub.fn(cfg);
    }
    std::cerr << "no subcommand selected\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
