#include "ciseq/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "ciseq/common.hpp"

namespace ciseq::corpus {
namespace {

const char* kSpecialNames[kNumSpecials] = {"<pad>", "<unk>", "<bos>", "<eos>",
                                           "<cls>"};

}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) {
        out.push_back(cur);
        cur.clear();
      }
    } else {
      cur.push_back(static_cast<char>(
          std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

Vocabulary::Vocabulary() {
  id_to_token_.assign(kSpecialNames, kSpecialNames + kNumSpecials);
}

void Vocabulary::rebuild_index() {
  sorted_ids_.resize(id_to_token_.size());
  for (size_t i = 0; i < sorted_ids_.size(); ++i)
    sorted_ids_[i] = static_cast<int>(i);
  std::sort(sorted_ids_.begin(), sorted_ids_.end(), [&](int a, int b) {
    return id_to_token_[static_cast<size_t>(a)] <
           id_to_token_[static_cast<size_t>(b)];
  });
}

Vocabulary Vocabulary::build(const std::vector<RawPair>& pairs, int max_size) {
  require(max_size > kNumSpecials,
          "build_vocabulary: max_size must exceed the special-token count");
  std::map<std::string, int64_t> counts;
  for (const auto& p : pairs) {
    for (const auto& t : tokenize(p.doc_text)) ++counts[t];
    for (const auto& t : tokenize(p.sum_text)) ++counts[t];
  }
  std::vector<std::pair<std::string, int64_t>> ranked(counts.begin(),
                                                      counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary v;
  const size_t keep = static_cast<size_t>(max_size - kNumSpecials);
  for (size_t i = 0; i < ranked.size() && i < keep; ++i)
    v.id_to_token_.push_back(ranked[i].first);
  v.rebuild_index();
  return v;
}

int Vocabulary::id(const std::string& token) const {
  auto it = std::lower_bound(
      sorted_ids_.begin(), sorted_ids_.end(), token, [&](int a, const std::string& t) {
        return id_to_token_[static_cast<size_t>(a)] < t;
      });
  if (it != sorted_ids_.end() && id_to_token_[static_cast<size_t>(*it)] == token)
    return *it;
  return kUnk;
}

bool Vocabulary::contains(const std::string& token) const {
  const int i = id(token);
  return i != kUnk || token == kSpecialNames[kUnk];
}

const std::string& Vocabulary::token(int id) const {
  require(id >= 0 && id < size(), "Vocabulary::token: id out of range");
  return id_to_token_[static_cast<size_t>(id)];
}

std::vector<int> Vocabulary::encode(const std::string& text) const {
  std::vector<int> out;
  for (const auto& t : tokenize(text)) out.push_back(id(t));
  return out;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int i : ids) {
    if (is_special(i) && i != kUnk) continue;
    if (!out.empty()) out.push_back(' ');
    out += token(i);
  }
  return out;
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (int i = 0; i < size(); ++i) {
    out += id_to_token_[static_cast<size_t>(i)];
    out += '\t';
    out += std::to_string(i);
    out += '\n';
  }
  return out;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  require(out.good(), "Vocabulary::save: cannot write " + path);
  out << serialize();
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "Vocabulary::load: cannot open " + path);
  Vocabulary v;
  v.id_to_token_.clear();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    require(tab != std::string::npos,
            "Vocabulary::load: missing tab at line " + std::to_string(lineno));
    const std::string tok = line.substr(0, tab);
    const int id = std::stoi(line.substr(tab + 1));
    require(id == static_cast<int>(v.id_to_token_.size()),
            "Vocabulary::load: ids must be dense and sorted, line " +
                std::to_string(lineno));
    v.id_to_token_.push_back(tok);
  }
  require(v.size() >= kNumSpecials, "Vocabulary::load: missing special rows");
  for (int i = 0; i < kNumSpecials; ++i)
    require(v.id_to_token_[static_cast<size_t>(i)] == kSpecialNames[i],
            "Vocabulary::load: special tokens must occupy ids 0..4");
  v.rebuild_index();
  return v;
}

uint64_t Vocabulary::hash() const { return fnv1a64(serialize()); }

namespace {

std::vector<RawPair> load_jsonl(const std::string& path,
                                std::optional<int64_t> limit,
                                bool summary_required) {
  std::ifstream in(path);
  require(in.good(), "load_corpus: cannot open " + path);
  std::vector<RawPair> out;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (limit && static_cast<int64_t>(out.size()) >= *limit) break;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error("load_corpus: parse error at " + path + ":" +
                               std::to_string(lineno) + ": " + e.what());
    }
    require(j.is_object() && j.contains("document") &&
                j["document"].is_string(),
            "load_corpus: line " + std::to_string(lineno) +
                " lacks a string \"document\" field");
    RawPair p;
    p.doc_text = j["document"].get<std::string>();
    if (j.contains("summary")) {
      require(j["summary"].is_string(),
              "load_corpus: line " + std::to_string(lineno) +
                  " has a non-string \"summary\" field");
      p.sum_text = j["summary"].get<std::string>();
    } else {
      require(!summary_required, "load_corpus: line " +
                                     std::to_string(lineno) +
                                     " lacks a \"summary\" field");
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

std::vector<RawPair> load_corpus(const std::string& path,
                                 std::optional<int64_t> limit) {
  return load_jsonl(path, limit, /*summary_required=*/true);
}

std::vector<RawPair> load_documents(const std::string& path,
                                    std::optional<int64_t> limit) {
  return load_jsonl(path, limit, /*summary_required=*/false);
}

DocumentSummaryPair encode_pair(const std::string& doc_text,
                                const std::string& sum_text,
                                const Vocabulary& vocab, int max_doc_len,
                                int max_sum_len) {
  require(max_doc_len >= 2 && max_sum_len >= 2,
          "encode_pair: max lengths must be at least 2");
  DocumentSummaryPair p;
  p.doc_text = doc_text;
  p.sum_text = sum_text;

  std::vector<int> doc_ids = vocab.encode(doc_text);
  std::vector<int> sum_ids = vocab.encode(sum_text);
  require(!doc_ids.empty(), "encode_pair: document tokenizes to nothing");
  require(!sum_ids.empty(), "encode_pair: summary tokenizes to nothing");

  const size_t doc_keep =
      std::min(doc_ids.size(), static_cast<size_t>(max_doc_len - 2));
  const size_t sum_keep =
      std::min(sum_ids.size(), static_cast<size_t>(max_sum_len - 1));

  p.doc_tokens.reserve(doc_keep + 2);
  p.doc_tokens.push_back(kCls);
  p.doc_tokens.insert(p.doc_tokens.end(), doc_ids.begin(),
                      doc_ids.begin() + static_cast<long>(doc_keep));
  p.doc_tokens.push_back(kEos);

  p.sum_tokens.reserve(sum_keep + 1);
  p.sum_tokens.insert(p.sum_tokens.end(), sum_ids.begin(),
                      sum_ids.begin() + static_cast<long>(sum_keep));
  p.sum_tokens.push_back(kEos);

  p.cr = static_cast<double>(sum_keep) / static_cast<double>(doc_keep);
  p.cr_flagged = p.cr > 1.0;
  return p;
}

int content_length(const std::vector<int>& tokens) {
  int n = 0;
  for (int t : tokens)
    if (!Vocabulary::is_special(t) || t == kUnk) ++n;
  return n;
}

std::vector<int> strip_specials(const std::vector<int>& tokens) {
  std::vector<int> out;
  for (int t : tokens)
    if (!Vocabulary::is_special(t) || t == kUnk) out.push_back(t);
  return out;
}

}  // namespace ciseq::corpus
