#pragma once
// Small fixtures shared by the unit tests.

#include <initializer_list>
#include <string>
#include <vector>

#include "ltcm/config.hpp"
#include "ltcm/models.hpp"
#include "ltcm/ops.hpp"
#include "ltcm/random.hpp"
#include "ltcm/tensor.hpp"
#include "ltcm/text.hpp"

namespace ltcm::testing {

inline text::Vocabulary toy_vocab() {
  std::vector<std::string> tokens(text::kReservedTokens.begin(), text::kReservedTokens.end());
  for (const char* w : {"the", "a", "is", "cat", "dog", "ball", "food", "likes", "eats", "red"})
    tokens.emplace_back(w);
  return text::Vocabulary::from_tokens(std::move(tokens));
}

inline std::vector<int> ids(const text::Vocabulary& v, std::initializer_list<const char*> words) {
  std::vector<int> out;
  for (const char* w : words) out.push_back(v.lookup(w));
  return out;
}

inline text::StopWords stopwords(const text::Vocabulary& v, std::initializer_list<const char*> words) {
  text::StopWords s(v.size());
  for (const char* w : words) s.insert(v.lookup(w));
  return s;
}

// Two pairs of different lengths: enough to exercise padding and batching.
inline std::vector<text::DialoguePair> toy_pairs(const text::Vocabulary& v) {
  return {{ids(v, {"the", "cat"}), ids(v, {"the", "cat", "likes", "food"})},
          {ids(v, {"a", "dog", "eats"}), ids(v, {"red", "ball"})}};
}

inline text::Batch toy_batch(const text::Vocabulary& v, const text::StopWords& s) {
  return text::assemble_batch(toy_pairs(v), v, s);
}

// Narrow model so that exhaustive finite differences stay cheap.
inline RunConfig tiny_config(ModelKind kind) {
  RunConfig c;
  c.model = kind;
  c.layers = 2;
  c.hidden = 6;
  c.embed = 5;
  c.latent = 3;
  c.topics = 4;
  c.mlp_hidden = 5;
  c.dropout = 0.0;
  c.stopwords = 3;
  c.seed = 99;
  return c;
}

inline ad::Tensor random_tensor(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0,
                                double hi = 1.0, bool requires_grad = true) {
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = uniform(rng, lo, hi);
  return ad::Tensor::from(rows, cols, std::move(v), requires_grad);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace ltcm::testing
