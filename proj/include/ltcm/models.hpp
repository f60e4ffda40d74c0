#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "ltcm/config.hpp"
#include "ltcm/latent.hpp"
#include "ltcm/params.hpp"
#include "ltcm/seq2seq.hpp"
#include "ltcm/text.hpp"

namespace ltcm {

/// Terms of one training step. Sums are over the batch; `objective` is the
/// quantity minimised (per-sequence sums averaged over the batch).
struct LossTerms {
  ad::Tensor objective;
  double word_nll = 0.0;
  double gate_log_lik = 0.0;
  double kl = 0.0;
  double kl_weight = 0.0;
  double regularizer = 0.0;
  std::size_t tokens = 0;
  std::size_t sequences = 0;

  /// Variational lowerbound at full KL weight, summed over the batch.
  double bound() const { return -word_nll + gate_log_lik - kl; }
};

/// Evaluation sums for one batch.
struct EvalTerms {
  double approx_log_prob = 0.0;  // numerator of the approximate perplexity
  double bound = 0.0;            // w = 1 lowerbound (exact log-likelihood for s2s)
  double kl = 0.0;
  bool has_kl = false;
  std::size_t tokens = 0;
  std::size_t sequences = 0;
};

struct GenerateOptions {
  DecodeStrategy strategy = DecodeStrategy::greedy;
  LatentSource latent = LatentSource::automatic;
  GateMode gate_mode = GateMode::sample;
  double temperature = 1.0;
  std::size_t max_len = text::kDefaultMaxLen;

  static GenerateOptions from(const RunConfig& cfg);
};

struct Generated {
  std::vector<int> tokens;  // ends with </s> unless max_len was reached
  std::vector<double> gate_probs;
};

/// log p(m | nu, u) for latent models, split into word and gate parts.
struct Likelihood {
  ad::Tensor log_lik;
  double word_log_lik = 0.0;
  double gate_log_lik = 0.0;
};

class Model {
 public:
  Model(RunConfig cfg, std::size_t vocab_size, text::StopWords stopwords);
  virtual ~Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  ModelKind kind() const { return cfg_.model; }
  const RunConfig& config() const { return cfg_; }
  std::size_t vocab_size() const { return vocab_size_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  const text::StopWords& stopwords() const { return stopwords_; }
  const std::vector<double>& topic_mask() const { return topic_mask_; }

  virtual LossTerms loss(const text::Batch& batch, double kl_weight, bool training, Rng& rng) = 0;
  virtual EvalTerms evaluate(const text::Batch& batch, Rng& rng) = 0;

  /// n responses for one prompt. Latent models draw a fresh latent per response.
  virtual std::vector<Generated> generate(std::span<const int> prompt, std::size_t n,
                                          const GenerateOptions& options, Rng& rng) const;

  virtual bool is_latent() const { return false; }
  virtual bool can_generate() const { return true; }

 protected:
  ForwardContext context(bool training, Rng& rng) const;

  RunConfig cfg_;
  Rng init_rng_;  // parameter initialisation stream, consumed by constructors
  std::size_t vocab_size_;
  text::StopWords stopwords_;
  std::vector<double> topic_mask_;
  ParameterStore params_;
};

/// Models with a sentence- or document-level Gaussian latent. The pieces of
/// the bound are exposed so it can be checked against numerical quadrature.
class LatentModel : public Model {
 public:
  using Model::Model;
  bool is_latent() const override { return true; }
  std::size_t latent_dim() const { return cfg_.latent; }

  virtual DiagonalGaussian prior(const text::Batch& batch, const ForwardContext& ctx) const = 0;
  virtual DiagonalGaussian posterior(const text::Batch& batch, const ForwardContext& ctx) const = 0;
  /// Sum over the batch of log p(m | nu, u); `nu` is [B x k].
  virtual Likelihood log_likelihood(const text::Batch& batch, const ad::Tensor& nu,
                                    const ForwardContext& ctx) const = 0;
};

class Seq2SeqModel : public Model {
 public:
  Seq2SeqModel(const RunConfig& cfg, std::size_t vocab_size, text::StopWords stopwords);

  LossTerms loss(const text::Batch& batch, double kl_weight, bool training, Rng& rng) override;
  EvalTerms evaluate(const text::Batch& batch, Rng& rng) override;
  std::vector<Generated> generate(std::span<const int> prompt, std::size_t n,
                                  const GenerateOptions& options, Rng& rng) const override;

  /// Summed -log p(m | u) under teacher forcing.
  ad::Tensor decode_loss(const text::Batch& batch, const ForwardContext& ctx) const;
  const Encoder& encoder() const { return encoder_; }
  const Decoder& decoder() const { return decoder_; }

 private:
  Encoder encoder_;
  Decoder decoder_;
};

class LatentSeq2SeqModel : public LatentModel {
 public:
  LatentSeq2SeqModel(const RunConfig& cfg, std::size_t vocab_size, text::StopWords stopwords);

  LossTerms loss(const text::Batch& batch, double kl_weight, bool training, Rng& rng) override;
  EvalTerms evaluate(const text::Batch& batch, Rng& rng) override;
  std::vector<Generated> generate(std::span<const int> prompt, std::size_t n,
                                  const GenerateOptions& options, Rng& rng) const override;

  DiagonalGaussian prior(const text::Batch& batch, const ForwardContext& ctx) const override;
  DiagonalGaussian posterior(const text::Batch& batch, const ForwardContext& ctx) const override;
  Likelihood log_likelihood(const text::Batch& batch, const ad::Tensor& nu,
                            const ForwardContext& ctx) const override;

 private:
  DiagonalGaussian prior_from(const Encoder::Output& enc) const;
  Likelihood likelihood_from(const text::Batch& batch, const Encoder::Output& enc,
                             const ad::Tensor& nu, const ForwardContext& ctx) const;

  Encoder encoder_;
  Decoder decoder_;
  std::optional<PriorNet> prior_net_;
  InferenceNet infer_net_;
};

std::unique_ptr<Model> make_model(const RunConfig& cfg, std::size_t vocab_size,
                                  text::StopWords stopwords);

/// Dense [B x 2L] (prompt, response) or [B x L] (prompt + response) bags.
ad::Tensor pair_bow(const text::Batch& batch);
ad::Tensor document_bow(const text::Batch& batch);

/// Draws the per-response latent for generation: N(0, I) for `prior`,
/// a sample of `conditional` otherwise.
ad::Tensor draw_latent(const DiagonalGaussian& conditional, LatentSource source, Rng& rng);

/// Step-by-step decoding shared by all generating models. `emit_logits`
/// maps the top decoder output [n x d] to logits [n x L] and may record one
/// gate probability per row.
using LogitFn = std::function<ad::Tensor(const ad::Tensor& h, std::vector<double>& gate_probs, Rng& rng)>;
std::vector<Generated> decode_responses(const Decoder& decoder, Decoder::State state,
                                        const ad::Tensor& latent, std::size_t n,
                                        const GenerateOptions& options, const LogitFn& emit_logits,
                                        Rng& rng);

/// The prompt repeated n times as a single batch (response side empty).
text::Batch prompt_batch(std::span<const int> prompt, std::size_t n, std::size_t vocab_size);

}  // namespace ltcm
