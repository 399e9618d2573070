#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ciseq::corpus {

/// Reserved vocabulary slots. These occupy ids 0..4 in every vocabulary.
enum SpecialToken : int {
  kPad = 0,
  kUnk = 1,
  kBos = 2,
  kEos = 3,
  kCls = 4,
  kNumSpecials = 5,
};

struct RawPair {
  std::string doc_text;
  std::string sum_text;
};

struct DocumentSummaryPair {
  std::string doc_text;
  std::string sum_text;
  std::vector<int> doc_tokens;  // [CLS] content... [EOS]
  std::vector<int> sum_tokens;  // content... [EOS]
  double cr = 0.0;              // summary/document content-length ratio
  bool cr_flagged = false;      // true when cr > 1 (kept, excluded from style control)
};

/// Lowercase + whitespace tokenizer.
std::vector<std::string> tokenize(const std::string& text);

class Vocabulary {
 public:
  /// Keeps the max_size-5 most frequent tokens over doc and summary texts,
  /// ties broken lexicographically. Requires max_size > 5.
  static Vocabulary build(const std::vector<RawPair>& pairs, int max_size);

  int size() const { return static_cast<int>(id_to_token_.size()); }
  int id(const std::string& token) const;           // kUnk when absent
  const std::string& token(int id) const;
  bool contains(const std::string& token) const;
  static bool is_special(int id) { return id >= 0 && id < kNumSpecials; }

  std::vector<int> encode(const std::string& text) const;  // no specials added
  std::string decode(const std::vector<int>& ids) const;   // specials stripped

  /// token<TAB>id, one per line, sorted by id.
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);
  std::string serialize() const;
  uint64_t hash() const;

 private:
  Vocabulary();
  std::vector<std::string> id_to_token_;
  // sorted lookup over id_to_token_ indices (vocab is immutable after build)
  std::vector<int> sorted_ids_;
  void rebuild_index();
};

/// Reads a JSONL corpus: one object per line with "document" and "summary"
/// string fields. Throws on missing file; parse errors name the line number.
std::vector<RawPair> load_corpus(const std::string& path,
                                 std::optional<int64_t> limit = std::nullopt);

/// Like load_corpus but "summary" may be absent (defaults to empty); used by
/// the inference CLI which only needs documents.
std::vector<RawPair> load_documents(const std::string& path,
                                    std::optional<int64_t> limit = std::nullopt);

/// Builds [CLS] doc [EOS] / sum [EOS] token sequences truncated to the given
/// maxima. cr is computed on post-truncation content lengths (specials
/// excluded). Throws when either side tokenizes to nothing.
DocumentSummaryPair encode_pair(const std::string& doc_text,
                                const std::string& sum_text,
                                const Vocabulary& vocab, int max_doc_len,
                                int max_sum_len);

/// Content length of an encoded sequence (specials excluded).
int content_length(const std::vector<int>& tokens);

/// Content token ids with specials stripped.
std::vector<int> strip_specials(const std::vector<int>& tokens);

}  // namespace ciseq::corpus
