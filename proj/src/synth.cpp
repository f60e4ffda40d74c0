#include "ltcm/synth.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "ltcm/error.hpp"
#include "ltcm/random.hpp"

namespace ltcm {

namespace {

const std::vector<std::vector<std::string>> kNamedClusters = {
    {"pizza", "pasta", "bread", "cheese", "soup", "salad", "rice", "curry", "cake", "apple"},
    {"football", "tennis", "soccer", "golf", "hockey", "rugby", "cricket", "boxing", "skiing", "cycling"},
    {"guitar", "piano", "drums", "violin", "jazz", "opera", "blues", "rock", "cello", "flute"},
};

// {n} is the n-th topic word drawn for the pair. Response slot {0} repeats
// one of the prompt's words.
const std::vector<std::string> kPromptTemplates = {
    "do you like {0} and {1}",
    "i like the {0} and the {1}",
    "what do you think of {0} and {1}",
};

const std::vector<std::string> kResponseTemplates = {
    "i love the {0} and the {1} is my {2}",
    "you should try the {0} with {1}",
    "my {0} is better than the {1} and {2}",
    "i think {0} and {1} are the best",
};

// Optional stop-word before a response topic word, so the word class at some
// positions is uncertain.
const std::vector<std::string> kModifiers = {"good", "new", "old"};
constexpr double kModifierRate = 0.5;

std::size_t slot_count(const std::string& tmpl) {
  return static_cast<std::size_t>(std::count(tmpl.begin(), tmpl.end(), '{'));
}

std::string fill(const std::string& tmpl, const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    if (tmpl[i] == '{') {
      const std::size_t close = tmpl.find('}', i);
      out += words.at(std::stoul(tmpl.substr(i + 1, close - i - 1)));
      i = close;
    } else {
      out += tmpl[i];
    }
  }
  return out;
}

// n words without replacement, skipping `exclude`; repeats once the pool runs dry.
std::vector<std::string> draw_words(const std::vector<std::string>& pool, std::size_t n, Rng& rng,
                                    const std::vector<std::string>& exclude = {}) {
  std::vector<std::string> out;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (std::find(exclude.begin(), exclude.end(), pool[i]) == exclude.end()) idx.push_back(i);
  for (std::size_t k = 0; k < n; ++k) {
    if (idx.empty()) {
      out.push_back(pool[uniform_index(rng, pool.size())]);
      continue;
    }
    const std::size_t j = uniform_index(rng, idx.size());
    out.push_back(pool[idx[j]]);
    idx.erase(idx.begin() + static_cast<std::ptrdiff_t>(j));
  }
  return out;
}

}  // namespace

const std::vector<std::string>& synthetic_stop_lexicon() {
  static const std::vector<std::string> lexicon = [] {
    std::set<std::string> words;
    words.insert(kModifiers.begin(), kModifiers.end());
    for (const auto* set : {&kPromptTemplates, &kResponseTemplates}) {
      for (const auto& t : *set) {
        std::istringstream in(t);
        std::string w;
        while (in >> w)
          if (w.front() != '{') words.insert(w);
      }
    }
    return std::vector<std::string>(words.begin(), words.end());
  }();
  return lexicon;
}

SyntheticCorpus synthesize(const SyntheticSpec& spec) {
  if (spec.clusters == 0 || spec.words_per_cluster == 0) {
    throw ConfigError("synthetic corpus needs at least one cluster and one word per cluster");
  }
  if (spec.pairs == 0) throw ConfigError("synthetic corpus needs at least one pair");
  SyntheticCorpus c;
  c.stop_lexicon = synthetic_stop_lexicon();
  for (std::size_t k = 0; k < spec.clusters; ++k) {
    std::vector<std::string> words;
    for (std::size_t j = 0; j < spec.words_per_cluster; ++j) {
      if (k < kNamedClusters.size() && j < kNamedClusters[k].size()) words.push_back(kNamedClusters[k][j]);
      else words.push_back("c" + std::to_string(k) + "w" + std::to_string(j));
    }
    c.cluster_words.push_back(std::move(words));
  }

  Rng rng(spec.seed);
  for (std::size_t i = 0; i < spec.pairs; ++i) {
    const std::size_t k = uniform_index(rng, spec.clusters);
    const auto& pool = c.cluster_words[k];
    const auto& pt = kPromptTemplates[uniform_index(rng, kPromptTemplates.size())];
    const auto& rt = kResponseTemplates[uniform_index(rng, kResponseTemplates.size())];
    const auto prompt_words = draw_words(pool, 2, rng);
    std::vector<std::string> words{prompt_words[uniform_index(rng, 2)]};
    for (auto& w : draw_words(pool, slot_count(rt) - 1, rng, prompt_words)) words.push_back(std::move(w));
    for (auto& w : words)
      if (uniform01(rng) < kModifierRate) w = kModifiers[uniform_index(rng, kModifiers.size())] + " " + w;
    c.pairs.push_back({fill(pt, prompt_words), fill(rt, words)});
    c.cluster.push_back(k);
  }
  return c;
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "?";
}

Split split_of(std::size_t index, std::uint64_t seed) {
  const auto bucket = derive_seed(seed, index) % 10;
  if (bucket < 8) return Split::train;
  return bucket == 8 ? Split::dev : Split::test;
}

void write_synthetic(const std::filesystem::path& dir, const SyntheticCorpus& corpus, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  text::write_corpus(dir / "corpus.jsonl", corpus.pairs);
  std::ofstream truth(dir / "truth.tsv");
  truth << "index\tcluster\tsplit\n";
  for (std::size_t i = 0; i < corpus.pairs.size(); ++i) {
    truth << i << '\t' << corpus.cluster[i] << '\t' << to_string(split_of(i, seed)) << '\n';
  }
  std::ofstream stop(dir / "stopwords.txt");
  for (const auto& w : corpus.stop_lexicon) stop << w << '\n';
  if (!truth || !stop) throw DataError("cannot write synthetic corpus files to " + dir.string());
}

}  // namespace ltcm
