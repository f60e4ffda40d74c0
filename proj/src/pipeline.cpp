#include "ltcm/pipeline.hpp"

#include <fstream>
#include <sstream>

#include "ltcm/error.hpp"

namespace ltcm {

PreparedCorpus prepare_corpus(std::span<const text::RawPair> raw, const RunConfig& cfg,
                              const text::Vocabulary* fixed_vocab) {
  PreparedCorpus out;
  const auto tokenized = text::filter_corpus(raw, cfg.max_len, &out.stats);
  if (tokenized.empty()) throw DataError("no pair survived filtering");
  if (fixed_vocab) {
    out.vocab = *fixed_vocab;
    out.vocab.count_corpus(tokenized);
  } else {
    out.vocab = text::Vocabulary::build(tokenized, cfg.vocab_size);
  }
  out.stopwords = text::select_stopwords(out.vocab, cfg.stopwords, cfg.stopword_rule);
  out.pairs.reserve(tokenized.size());
  for (const auto& p : tokenized) out.pairs.push_back(text::encode(p, out.vocab));
  return out;
}

std::vector<text::DialoguePair> encode_corpus(std::span<const text::RawPair> raw,
                                              const text::Vocabulary& vocab, std::size_t max_len) {
  std::vector<text::DialoguePair> out;
  for (const auto& p : text::filter_corpus(raw, max_len)) out.push_back(text::encode(p, vocab));
  return out;
}

std::vector<text::RawPair> select_split(std::span<const text::RawPair> raw,
                                        const std::filesystem::path& truth, Split split) {
  std::ifstream in(truth);
  if (!in) throw DataError("cannot open split file " + truth.string());
  std::string line;
  std::getline(in, line);  // header
  std::vector<text::RawPair> out;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::size_t index = 0, cluster = 0;
    std::string name;
    if (!(fields >> index >> cluster >> name)) throw DataError("malformed split line '" + line + "'");
    if (index >= raw.size()) throw DataError("split file refers to pair " + std::to_string(index));
    if (parse_split(name) == split) out.push_back(raw[index]);
  }
  return out;
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + std::string(s) + "'");
}

}  // namespace ltcm
