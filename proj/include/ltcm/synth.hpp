#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ltcm/text.hpp"

namespace ltcm {

/// Templated dialogue corpus with known topic clusters. Prompts name two
/// words of one cluster; responses repeat one of them and add one or two more
/// words of the same cluster, each optionally preceded by a modifier, all
/// interleaved with a fixed stop-word lexicon.
struct SyntheticSpec {
  std::size_t clusters = 3;
  std::size_t words_per_cluster = 10;
  std::size_t pairs = 1500;
  std::uint64_t seed = 7;
};

struct SyntheticCorpus {
  std::vector<text::RawPair> pairs;
  std::vector<std::size_t> cluster;  // ground truth per pair
  std::vector<std::vector<std::string>> cluster_words;
  std::vector<std::string> stop_lexicon;
};

SyntheticCorpus synthesize(const SyntheticSpec& spec);

/// The template words; every token of a synthetic pair is either one of these
/// or a cluster word.
const std::vector<std::string>& synthetic_stop_lexicon();

enum class Split { train, dev, test };
std::string_view to_string(Split s);

/// 80/10/10 by a hash of the pair index.
Split split_of(std::size_t index, std::uint64_t seed);

/// corpus.jsonl, truth.tsv (index, cluster, split) and stopwords.txt in `dir`.
void write_synthetic(const std::filesystem::path& dir, const SyntheticCorpus& corpus, std::uint64_t seed);

}  // namespace ltcm
