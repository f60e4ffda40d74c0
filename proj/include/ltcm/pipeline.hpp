#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ltcm/config.hpp"
#include "ltcm/synth.hpp"
#include "ltcm/text.hpp"

namespace ltcm {

struct PreparedCorpus {
  text::Vocabulary vocab;
  text::StopWords stopwords;
  std::vector<text::DialoguePair> pairs;
  text::FilterStats stats;
};

/// Filters and tokenises `raw`, builds (or counts against `fixed_vocab`) the
/// vocabulary, selects stop-words and encodes every accepted pair.
PreparedCorpus prepare_corpus(std::span<const text::RawPair> raw, const RunConfig& cfg,
                              const text::Vocabulary* fixed_vocab = nullptr);

/// Filters, tokenises and encodes `raw` against an existing vocabulary.
std::vector<text::DialoguePair> encode_corpus(std::span<const text::RawPair> raw,
                                              const text::Vocabulary& vocab, std::size_t max_len);

/// Keeps the pairs whose split column in a truth.tsv file matches `split`.
std::vector<text::RawPair> select_split(std::span<const text::RawPair> raw,
                                        const std::filesystem::path& truth, Split split);

Split parse_split(std::string_view s);

}  // namespace ltcm
