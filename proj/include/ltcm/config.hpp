#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "ltcm/text.hpp"

namespace ltcm {

enum class ModelKind { s2s, lvs2s, ntm, ltcm };
enum class LatentPrior { conditional, unconditional };
enum class DecodeStrategy { greedy, sample };
// `automatic` resolves to none for s2s and conditional for latent models.
enum class LatentSource { automatic, none, prior, conditional };
// `off` never adds the topic term.
enum class GateMode { sample, threshold, off };

std::string_view to_string(ModelKind k);
std::string_view to_string(LatentPrior p);
std::string_view to_string(DecodeStrategy s);
std::string_view to_string(LatentSource s);
std::string_view to_string(GateMode g);
std::string_view to_string(text::StopwordRule r);

ModelKind parse_model_kind(std::string_view s);
LatentSource parse_latent_source(std::string_view s);
DecodeStrategy parse_decode_strategy(std::string_view s);
GateMode parse_gate_mode(std::string_view s);

/// Every run setting. Defaults are the desk preset.
struct RunConfig {
  ModelKind model = ModelKind::ltcm;

  // architecture
  std::size_t layers = 2;
  std::size_t hidden = 64;
  std::size_t embed = 64;
  std::size_t latent = 32;
  std::size_t topics = 20;
  std::size_t vocab_size = 2000;
  std::size_t mlp_hidden = 64;
  std::size_t residual_from = 3;  // 1-based layer index where residuals start
  bool layer_norm = true;
  LatentPrior latent_prior = LatentPrior::conditional;
  bool tie_topic_proj = true;

  // training
  std::size_t batch_size = 16;
  std::size_t epochs = 10;
  std::uint64_t seed = 1234;
  double learning_rate = 1e-3;
  std::uint64_t lr_decay_steps = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double max_grad_norm = 5.0;
  bool kl_annealing = false;
  std::uint64_t anneal_steps = 0;  // 0 = one epoch
  double dropout = 0.2;
  double lambda_ma = 1e-3;
  double lambda_l2 = 1e-5;
  std::size_t stopwords = 300;
  text::StopwordRule stopword_rule = text::StopwordRule::lowest_idf;
  std::size_t max_len = text::kDefaultMaxLen;

  // decoding
  DecodeStrategy decode_strategy = DecodeStrategy::greedy;
  LatentSource latent_source = LatentSource::automatic;
  GateMode gate_mode = GateMode::sample;
  double temperature = 1.0;
  std::size_t n_responses = 5;
  std::size_t max_response_len = text::kDefaultMaxLen;

  // paths
  std::string corpus;
  std::string vocab;
  std::string checkpoint_dir = "checkpoints";
  std::string report_dir = "reports";

  bool operator==(const RunConfig&) const = default;

  /// Flat "key = value" document, keys in a fixed order.
  std::string serialize() const;
  /// Applies the keys in `doc` on top of the current values. Unknown keys,
  /// malformed lines and invalid values raise ConfigError.
  void apply(std::string_view doc);
  void validate() const;

  static RunConfig parse(std::string_view doc);
  static RunConfig load(const std::filesystem::path& path);
};

/// "paper" (4 x 500, L = 30000, batch 128) or "desk".
RunConfig preset(std::string_view name);

}  // namespace ltcm
