#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ltcm/models.hpp"
#include "ltcm/topic.hpp"

namespace ltcm {

/// 100 * distinct sequences / sequences, by exact token-id equality.
double uniqueness(std::span<const std::vector<int>> responses);

/// Negated least-squares slope of ln(freq) against ln(rank) over all tokens
/// except <pad>, <s> and </s>. Needs at least two token types.
double zipf_coefficient(std::span<const std::vector<int>> responses);
/// Same fit over explicit frequencies (any order).
double zipf_from_frequencies(std::vector<double> frequencies);

struct GenerationRecord {
  std::size_t prompt_index = 0;
  std::vector<int> prompt;
  std::vector<Generated> responses;
};

/// n responses per prompt. Prompt i draws from its own stream seeded by
/// derive_seed(seed, i), so the result does not depend on `threads`.
std::vector<GenerationRecord> generate_all(const Model& model, std::span<const std::vector<int>> prompts,
                                           std::size_t n, const GenerateOptions& options,
                                           std::uint64_t seed, std::size_t threads = 1);

struct MetricsReport {
  std::string model;
  double perplexity = 0.0;
  double lowerbound = 0.0;       // nats per sequence, w = 1
  std::optional<double> kl;      // nats per sequence; absent for s2s
  std::optional<double> uniqueness;
  std::optional<double> zipf;
  std::size_t prompts = 0;
  std::size_t responses = 0;
  std::size_t tokens = 0;

  /// "key = value" lines; absent values are written as n/a.
  std::string to_text() const;
  static MetricsReport parse(std::string_view text);
  static std::string csv_header();
  std::string csv_row() const;
};

struct EvaluateOptions {
  GenerateOptions generation;
  std::size_t n_responses = 5;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

/// Likelihood metrics over the reference pairs plus diversity metrics over
/// n generations per prompt. The model's stop-words supply the gate labels.
MetricsReport evaluate(Model& model, std::span<const text::DialoguePair> corpus,
                       const EvaluateOptions& options);

struct GateStat {
  int id = 0;
  double percent = 0.0;  // mean gate probability * 100
  std::size_t count = 0;
};

/// Mean gate probability per token type under teacher forcing on the
/// reference responses, sorted by percent descending (ties by id).
std::vector<GateStat> gate_analysis(const LtcmModel& model, std::span<const text::DialoguePair> corpus,
                                    std::size_t batch_size = 32);

/// Batches of consecutive pairs.
std::vector<text::Batch> make_batches(std::span<const text::DialoguePair> corpus, std::size_t batch_size,
                                      std::size_t vocab_size, const text::StopWords& stopwords);

}  // namespace ltcm
