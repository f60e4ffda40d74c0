#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ltcm::text {

inline constexpr std::array<std::string_view, 6> kReservedTokens = {
    "<pad>", "<s>", "</s>", "<unk>", "<number>", "<url>"};
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kNumber = 4;
inline constexpr int kUrl = 5;
inline constexpr std::size_t kReservedCount = kReservedTokens.size();
inline constexpr std::size_t kDefaultMaxLen = 50;

inline bool is_reserved(int id) { return id >= 0 && static_cast<std::size_t>(id) < kReservedCount; }

/// Lowercases, maps URLs to <url> and standalone numbers to <number>, splits
/// punctuation into separate tokens and collapses whitespace. Idempotent.
std::string standardize(std::string_view raw);

/// Splits standardised text on single spaces.
std::vector<std::string> tokenize(std::string_view standardized);

/// True when every code point belongs to a Latin script block, general
/// punctuation, or ASCII. Malformed UTF-8 counts as non-Roman.
bool is_roman(std::string_view utf8);

struct TokenizedPair {
  std::vector<std::string> prompt;
  std::vector<std::string> response;
};

enum class RejectReason { none, empty, non_roman, too_long };
std::string_view to_string(RejectReason r);

struct FilterResult {
  RejectReason reason = RejectReason::none;
  TokenizedPair pair;
  bool accepted() const { return reason == RejectReason::none; }
};

FilterResult filter_pair(std::string_view prompt, std::string_view response,
                         std::size_t max_len = kDefaultMaxLen);

class Vocabulary {
 public:
  /// Keeps the `size - reserved` most frequent tokens (ties lexicographic) and
  /// records document frequencies, one document per pair.
  static Vocabulary build(std::span<const TokenizedPair> corpus, std::size_t size);
  /// From a token list whose first entries are the reserved tokens in order.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(int id) const;
  std::optional<int> find(std::string_view token) const;
  int lookup(std::string_view token) const;  // <unk> fallback

  std::uint64_t count(int id) const { return counts_.at(static_cast<std::size_t>(id)); }
  std::uint64_t document_frequency(int id) const { return doc_freq_.at(static_cast<std::size_t>(id)); }
  std::uint64_t documents() const { return documents_; }

  /// Recomputes token and document counts over `corpus` (e.g. after loading
  /// the vocabulary from a file).
  void count_corpus(std::span<const TokenizedPair> corpus);

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  std::vector<std::uint64_t> counts_;
  std::vector<std::uint64_t> doc_freq_;
  std::uint64_t documents_ = 0;
};

struct DialoguePair {
  std::vector<int> prompt;
  std::vector<int> response;
};

DialoguePair encode(const TokenizedPair& pair, const Vocabulary& vocab);
std::vector<int> encode(std::span<const std::string> tokens, const Vocabulary& vocab);
std::string decode(std::span<const int> ids, const Vocabulary& vocab);

/// Counts of non-reserved ids.
using BagOfWords = std::map<int, double>;
BagOfWords bag_of_words(std::span<const int> ids);

enum class StopwordRule { lowest_idf, highest_idf };

/// idf(w) = ln(N / df(w)); +inf for words with df 0.
double idf(const Vocabulary& vocab, int id);

class StopWords {
 public:
  StopWords() = default;
  explicit StopWords(std::size_t vocab_size);

  bool contains(int id) const;
  void insert(int id);
  /// Non-reserved stop-words, in selection order.
  const std::vector<int>& selected() const { return selected_; }
  /// 1 for topic words, 0 for stop-words and reserved tokens.
  std::vector<double> topic_mask() const;
  std::size_t vocab_size() const { return flags_.size(); }

 private:
  std::vector<bool> flags_;
  std::vector<int> selected_;
};

/// Reserved tokens are always stop-words and do not count toward `n`.
StopWords select_stopwords(const Vocabulary& vocab, std::size_t n,
                           StopwordRule rule = StopwordRule::lowest_idf);

/// Padded batch. Matrices are row-major with one row per pair.
struct Batch {
  std::size_t size = 0;
  std::size_t vocab_size = 0;

  std::size_t prompt_width = 0;
  std::vector<int> prompt;
  std::vector<int> prompt_len;

  // Raw response tokens with their gate labels and padding mask.
  std::size_t response_width = 0;
  std::vector<int> response;
  std::vector<int> response_len;
  std::vector<double> gate_labels;
  std::vector<double> mask;

  // Teacher-forcing view, response_width + 1 steps: inputs start with <s>,
  // targets end with </s>.
  std::size_t decoder_width = 0;
  std::vector<int> decoder_input;
  std::vector<int> decoder_target;
  std::vector<double> decoder_mask;
  std::vector<double> decoder_gate;

  // Dense bag-of-words, size x vocab_size; reserved ids are zero.
  std::vector<double> prompt_bow;
  std::vector<double> response_bow;

  std::size_t target_tokens() const;
};

Batch assemble_batch(std::span<const DialoguePair> pairs, const Vocabulary& vocab,
                     const StopWords& stopwords);
Batch assemble_batch(std::span<const DialoguePair> pairs, std::size_t vocab_size,
                     const StopWords& stopwords);

/// Returns a copy of `batch` with `extra` additional padding columns on both
/// the prompt and response sides.
Batch pad_batch(const Batch& batch, std::size_t extra);

struct RawPair {
  std::string prompt;
  std::string response;
};

/// One JSON object per line with string fields "prompt" and "response".
std::vector<RawPair> read_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path, std::span<const RawPair> pairs);

struct FilterStats {
  std::size_t accepted = 0;
  std::size_t empty = 0;
  std::size_t non_roman = 0;
  std::size_t too_long = 0;
};

std::vector<TokenizedPair> filter_corpus(std::span<const RawPair> raw, std::size_t max_len,
                                         FilterStats* stats = nullptr);

}  // namespace ltcm::text
