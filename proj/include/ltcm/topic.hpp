#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ltcm/models.hpp"

namespace ltcm {

/// theta = softmax(nu W), one simplex point per row. nu [B x k], W [k x K].
ad::Tensor topic_proportion(const ad::Tensor& nu, const ad::Tensor& w);

/// V h plus, on rows with gate 1, beta theta on topic-word columns.
/// `base` is [n x L], `topic` is [n x L] (beta theta per row).
ad::Tensor fused_word_logits(const ad::Tensor& base, const ad::Tensor& topic,
                             std::span<const double> gates, std::span<const double> topic_mask);

/// Mean over topic-column pairs j < k of cos^2 between columns of beta [L x K].
/// Pairs involving a zero column contribute 0.
ad::Tensor mutual_angular(const ad::Tensor& beta);

/// lambda_ma * mutual_angular(beta) + lambda_l2 * ||beta||_F^2.
ad::Tensor beta_regularizers(const ad::Tensor& beta, double lambda_ma, double lambda_l2);

/// For every topic column the `k_words` ids with the largest beta, ties broken
/// by token text. When `candidates` is non-empty only ids with a nonzero entry
/// are ranked. `k_words` is clamped to the number of candidates.
std::vector<std::vector<int>> top_word_ids(const ad::Tensor& beta, const text::Vocabulary& vocab,
                                           std::size_t k_words,
                                           std::span<const double> candidates = {});
std::vector<std::vector<std::string>> top_words_per_topic(const ad::Tensor& beta,
                                                          const text::Vocabulary& vocab,
                                                          std::size_t k_words,
                                                          std::span<const double> candidates = {});

/// Latent topic conversational model: seq2seq decoder whose word logits gain
/// l_t * beta theta, with theta from a sentence-level Gaussian latent and l_t
/// a per-step topic-word gate.
class LtcmModel : public LatentModel {
 public:
  LtcmModel(const RunConfig& cfg, std::size_t vocab_size, text::StopWords stopwords);

  LossTerms loss(const text::Batch& batch, double kl_weight, bool training, Rng& rng) override;
  EvalTerms evaluate(const text::Batch& batch, Rng& rng) override;
  std::vector<Generated> generate(std::span<const int> prompt, std::size_t n,
                                  const GenerateOptions& options, Rng& rng) const override;

  DiagonalGaussian prior(const text::Batch& batch, const ForwardContext& ctx) const override;
  DiagonalGaussian posterior(const text::Batch& batch, const ForwardContext& ctx) const override;
  /// Word plus gate log-likelihood with theta = softmax(nu W1).
  Likelihood log_likelihood(const text::Batch& batch, const ad::Tensor& nu,
                            const ForwardContext& ctx) const override;

  /// Word plus gate log-likelihood for given topic proportions [B x K].
  Likelihood log_likelihood_theta(const text::Batch& batch, const ad::Tensor& theta,
                                  const ForwardContext& ctx) const;

  /// Gate probabilities under teacher forcing, row-major [B x response_width]
  /// aligned with batch.response; reserved tokens report 0.
  std::vector<double> forced_gate_probabilities(const text::Batch& batch) const;

  /// Fused logits [n x L] for decoder outputs h [n x d].
  ad::Tensor word_logits(const ad::Tensor& h, const ad::Tensor& theta, std::span<const double> gates) const;
  ad::Tensor gate_probability(const ad::Tensor& h) const;

  const ad::Tensor& beta() const { return beta_; }
  const ad::Tensor& topic_projection() const { return w1_; }
  /// W_a; the same tensor as W1 when the projections are tied.
  const ad::Tensor& inference_projection() const { return wa_; }
  const ad::Tensor& gate_weights() const { return w2_; }
  const Decoder& decoder() const { return decoder_; }
  const Encoder& encoder() const { return encoder_; }

 private:
  DiagonalGaussian prior_from(const Encoder::Output& enc) const;
  Likelihood likelihood_from(const text::Batch& batch, const Encoder::Output& enc,
                             const ad::Tensor& theta, const ForwardContext& ctx) const;

  Encoder encoder_;
  Decoder decoder_;
  std::optional<PriorNet> prior_net_;
  InferenceNet infer_net_;
  ad::Tensor beta_;
  ad::Tensor w1_;
  ad::Tensor w2_;
  ad::Tensor wa_;
};

/// Gaussian-softmax neural topic model over prompt + response bags.
class NtmModel : public LatentModel {
 public:
  NtmModel(const RunConfig& cfg, std::size_t vocab_size, text::StopWords stopwords);

  LossTerms loss(const text::Batch& batch, double kl_weight, bool training, Rng& rng) override;
  /// approx_log_prob is the one-sample bound; perplexity = exp(-bound / words).
  EvalTerms evaluate(const text::Batch& batch, Rng& rng) override;
  bool can_generate() const override { return false; }

  DiagonalGaussian prior(const text::Batch& batch, const ForwardContext& ctx) const override;
  DiagonalGaussian posterior(const text::Batch& batch, const ForwardContext& ctx) const override;
  Likelihood log_likelihood(const text::Batch& batch, const ad::Tensor& nu,
                            const ForwardContext& ctx) const override;

  /// Word distribution theta softmax_cols(beta)^T, [B x L].
  ad::Tensor word_probabilities(const ad::Tensor& theta) const;

  const ad::Tensor& beta() const { return beta_; }
  const ad::Tensor& topic_projection() const { return w1_; }

 private:
  InferenceNet infer_net_;
  ad::Tensor beta_;
  ad::Tensor w1_;
};

}  // namespace ltcm
