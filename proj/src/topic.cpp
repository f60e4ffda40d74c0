#include "ltcm/topic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ltcm/error.hpp"
#include "ltcm/ops.hpp"

namespace ltcm {

ad::Tensor topic_proportion(const ad::Tensor& nu, const ad::Tensor& w) {
  return ad::softmax_rows(ad::matmul(nu, w));
}

ad::Tensor fused_word_logits(const ad::Tensor& base, const ad::Tensor& topic,
                             std::span<const double> gates, std::span<const double> topic_mask) {
  return ad::gated_add(base, topic, gates, topic_mask);
}

ad::Tensor mutual_angular(const ad::Tensor& beta) {
  const std::size_t L = beta.rows(), K = beta.cols();
  ad::Tensor out = ad::detail::make_output(1, 1, {beta});
  if (K < 2) return out;
  const double pairs = static_cast<double>(K * (K - 1) / 2);
  const auto b = beta.value();
  // Gram matrix of the columns.
  std::vector<double> gram(K * K, 0.0);
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < K; ++j)
      for (std::size_t k = j; k < K; ++k) gram[j * K + k] += b[i * K + j] * b[i * K + k];
  for (std::size_t j = 0; j < K; ++j)
    for (std::size_t k = 0; k < j; ++k) gram[j * K + k] = gram[k * K + j];

  double total = 0.0;
  for (std::size_t j = 0; j < K; ++j) {
    for (std::size_t k = j + 1; k < K; ++k) {
      const double sj = gram[j * K + j], sk = gram[k * K + k];
      if (sj == 0.0 || sk == 0.0) continue;
      total += gram[j * K + k] * gram[j * K + k] / (sj * sk);
    }
  }
  out.value()[0] = total / pairs;

  ad::detail::attach(out, [gram = std::move(gram), L, K, pairs](ad::Node& self) {
    ad::Node& nb = *self.inputs[0];
    const double g = self.grad[0] / pairs;
    for (std::size_t j = 0; j < K; ++j) {
      const double sj = gram[j * K + j];
      if (sj == 0.0) continue;
      for (std::size_t k = 0; k < K; ++k) {
        const double sk = gram[k * K + k];
        if (k == j || sk == 0.0) continue;
        const double c = gram[j * K + k];
        // d/d beta_ij of c^2 / (sj sk)
        const double a = 2.0 * c / (sj * sk);
        const double d = 2.0 * c * c / (sj * sj * sk);
        for (std::size_t i = 0; i < L; ++i) {
          nb.grad[i * K + j] += g * (a * nb.value[i * K + k] - d * nb.value[i * K + j]);
        }
      }
    }
  });
  return out;
}

ad::Tensor beta_regularizers(const ad::Tensor& beta, double lambda_ma, double lambda_l2) {
  return ad::add(ad::scale(mutual_angular(beta), lambda_ma), ad::scale(ad::sum(ad::square(beta)), lambda_l2));
}

std::vector<std::vector<int>> top_word_ids(const ad::Tensor& beta, const text::Vocabulary& vocab,
                                           std::size_t k_words, std::span<const double> candidates) {
  const std::size_t L = beta.rows(), K = beta.cols();
  if (vocab.size() != L) throw DimensionError("beta has " + std::to_string(L) + " rows, vocabulary " +
                                              std::to_string(vocab.size()));
  if (!candidates.empty() && candidates.size() != L) throw DimensionError("candidate mask size mismatch");
  std::vector<int> ids;
  for (std::size_t i = 0; i < L; ++i)
    if (candidates.empty() || candidates[i] != 0.0) ids.push_back(static_cast<int>(i));
  const std::size_t k = std::min(k_words, ids.size());
  std::vector<std::vector<int>> out(K);
  for (std::size_t t = 0; t < K; ++t) {
    std::vector<int> order = ids;
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](int a, int b) {
                        const double va = beta.at(static_cast<std::size_t>(a), t);
                        const double vb = beta.at(static_cast<std::size_t>(b), t);
                        if (va != vb) return va > vb;
                        return vocab.token(a) < vocab.token(b);
                      });
    order.resize(k);
    out[t] = std::move(order);
  }
  return out;
}

std::vector<std::vector<std::string>> top_words_per_topic(const ad::Tensor& beta,
                                                          const text::Vocabulary& vocab,
                                                          std::size_t k_words,
                                                          std::span<const double> candidates) {
  std::vector<std::vector<std::string>> out;
  for (const auto& ids : top_word_ids(beta, vocab, k_words, candidates)) {
    std::vector<std::string> words;
    for (int id : ids) words.push_back(vocab.token(id));
    out.push_back(std::move(words));
  }
  return out;
}

// LTCM

LtcmModel::LtcmModel(const RunConfig& cfg, std::size_t vocab_size, text::StopWords stopwords)
    : LatentModel(cfg, vocab_size, std::move(stopwords)),
      encoder_(params_, cfg_, vocab_size_, init_rng_),
      decoder_(params_, cfg_, vocab_size_, 0, init_rng_),
      prior_net_(cfg_.latent_prior == LatentPrior::conditional
                     ? std::optional<PriorNet>(std::in_place, params_, cfg_.hidden, cfg_.mlp_hidden,
                                               cfg_.latent, init_rng_)
                     : std::nullopt),
      infer_net_(params_, 2 * vocab_size_, cfg_.mlp_hidden, cfg_.latent, init_rng_) {
  beta_ = params_.add_uniform("beta", vocab_size_, cfg_.topics, nn::kInitScale, init_rng_);
  w1_ = params_.add_uniform("topic_proj_w1", cfg_.latent, cfg_.topics, nn::kInitScale, init_rng_);
  w2_ = params_.add_uniform("gate_w2", cfg_.hidden, 1, nn::kInitScale, init_rng_);
  wa_ = cfg_.tie_topic_proj
            ? w1_
            : params_.add_uniform("infer_proj_wa", cfg_.latent, cfg_.topics, nn::kInitScale, init_rng_);
}

DiagonalGaussian LtcmModel::prior_from(const Encoder::Output& enc) const {
  if (!prior_net_) return DiagonalGaussian::standard(enc.summary().rows(), cfg_.latent);
  return (*prior_net_)(enc.summary());
}

Likelihood LtcmModel::likelihood_from(const text::Batch& batch, const Encoder::Output& enc,
                                      const ad::Tensor& theta, const ForwardContext& ctx) const {
  const std::size_t B = batch.size, T = batch.decoder_width;
  if (batch.decoder_gate.size() != B * T) throw TrainingError("gate_labels", "batch has no gate labels");
  if (theta.rows() != B || theta.cols() != cfg_.topics) {
    throw DimensionError("theta " + theta.shape_string() + " for a batch of " + std::to_string(B));
  }
  const ad::Tensor h = ctx.maybe_dropout(decoder_.run(batch, decoder_.initial_state(enc), {}, ctx));
  const auto targets = time_major<int>(batch.decoder_target, B, T);
  const auto mask = time_major<double>(batch.decoder_mask, B, T);
  const auto gates = time_major<double>(batch.decoder_gate, B, T);

  const ad::Tensor topic = ad::tile_rows(ad::matmul_nt(theta, beta_), T);
  const ad::Tensor logits = fused_word_logits(decoder_.logits(h), topic, gates, topic_mask_);
  const ad::Tensor word = ad::scale(ad::masked_cross_entropy(logits, targets, mask), -1.0);
  const ad::Tensor gate = ad::bernoulli_log_likelihood(ad::matmul(h, w2_), gates, mask);

  Likelihood out;
  out.log_lik = ad::add(word, gate);
  out.word_log_lik = word.item();
  out.gate_log_lik = gate.item();
  return out;
}

DiagonalGaussian LtcmModel::prior(const text::Batch& batch, const ForwardContext& ctx) const {
  return prior_from(encoder_.encode(batch.prompt, batch.prompt_len, batch.size, batch.prompt_width, ctx));
}

DiagonalGaussian LtcmModel::posterior(const text::Batch& batch, const ForwardContext&) const {
  return infer_net_(pair_bow(batch));
}

Likelihood LtcmModel::log_likelihood(const text::Batch& batch, const ad::Tensor& nu,
                                     const ForwardContext& ctx) const {
  return log_likelihood_theta(batch, topic_proportion(nu, w1_), ctx);
}

Likelihood LtcmModel::log_likelihood_theta(const text::Batch& batch, const ad::Tensor& theta,
                                           const ForwardContext& ctx) const {
  const auto enc = encoder_.encode(batch.prompt, batch.prompt_len, batch.size, batch.prompt_width, ctx);
  return likelihood_from(batch, enc, theta, ctx);
}

LossTerms LtcmModel::loss(const text::Batch& batch, double kl_weight, bool training, Rng& rng) {
  const auto ctx = context(training, rng);
  const auto enc = encoder_.encode(batch.prompt, batch.prompt_len, batch.size, batch.prompt_width, ctx);
  const DiagonalGaussian p = prior_from(enc);
  const DiagonalGaussian q = infer_net_(pair_bow(batch));
  const ad::Tensor nu = reparam_sample(q, standard_normal(batch.size, cfg_.latent, rng));
  const Likelihood lik = likelihood_from(batch, enc, topic_proportion(nu, wa_), ctx);
  const ad::Tensor kl = kl_diag(q, p);
  const ad::Tensor reg = beta_regularizers(beta_, cfg_.lambda_ma, cfg_.lambda_l2);

  LossTerms out;
  out.objective = ad::add(ad::scale(ad::sub(ad::scale(kl, kl_weight), lik.log_lik),
                                    1.0 / static_cast<double>(batch.size)),
                          reg);
  out.word_nll = -lik.word_log_lik;
  out.gate_log_lik = lik.gate_log_lik;
  out.kl = kl.item();
  out.kl_weight = kl_weight;
  out.regularizer = reg.item();
  out.tokens = batch.target_tokens();
  out.sequences = batch.size;
  return out;
}

EvalTerms LtcmModel::evaluate(const text::Batch& batch, Rng& rng) {
  ad::NoGradScope no_grad;
  const ForwardContext ctx;
  const auto enc = encoder_.encode(batch.prompt, batch.prompt_len, batch.size, batch.prompt_width, ctx);
  const DiagonalGaussian p = prior_from(enc);
  const DiagonalGaussian q = infer_net_(pair_bow(batch));
  const ad::Tensor nu = reparam_sample(q, standard_normal(batch.size, cfg_.latent, rng));
  const double kl = kl_diag(q, p).item();

  EvalTerms e;
  const Likelihood at_mean = likelihood_from(batch, enc, topic_proportion(p.mean, w1_), ctx);
  e.approx_log_prob = at_mean.log_lik.item();
  e.bound = likelihood_from(batch, enc, topic_proportion(nu, wa_), ctx).log_lik.item() - kl;
  e.kl = kl;
  e.has_kl = true;
  e.tokens = batch.target_tokens();
  e.sequences = batch.size;
  return e;
}

ad::Tensor LtcmModel::word_logits(const ad::Tensor& h, const ad::Tensor& theta,
                                  std::span<const double> gates) const {
  return fused_word_logits(decoder_.logits(h), ad::matmul_nt(theta, beta_), gates, topic_mask_);
}

ad::Tensor LtcmModel::gate_probability(const ad::Tensor& h) const {
  return ad::sigmoid(ad::matmul(h, w2_));
}

std::vector<double> LtcmModel::forced_gate_probabilities(const text::Batch& batch) const {
  ad::NoGradScope no_grad;
  const ForwardContext ctx;
  const std::size_t B = batch.size, M = batch.response_width;
  const auto enc = encoder_.encode(batch.prompt, batch.prompt_len, B, batch.prompt_width, ctx);
  const ad::Tensor g = gate_probability(decoder_.run(batch, decoder_.initial_state(enc), {}, ctx));
  std::vector<double> out(B * M, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < M; ++t) {
      const int id = batch.response[b * M + t];
      if (batch.mask[b * M + t] == 0.0 || text::is_reserved(id)) continue;
      out[b * M + t] = g.value()[t * B + b];
    }
  }
  return out;
}

std::vector<Generated> LtcmModel::generate(std::span<const int> prompt, std::size_t n,
                                           const GenerateOptions& options, Rng& rng) const {
  ad::NoGradScope no_grad;
  const auto b = prompt_batch(prompt, n, vocab_size_);
  const auto enc = encoder_.encode(b.prompt, b.prompt_len, n, b.prompt_width, {});
  const ad::Tensor nu = draw_latent(prior_from(enc), options.latent, rng);
  const ad::Tensor topic = ad::matmul_nt(topic_proportion(nu, w1_), beta_);
  const GateMode mode = options.gate_mode;
  const LogitFn emit = [&](const ad::Tensor& h, std::vector<double>& probs, Rng& r) {
    const ad::Tensor g = gate_probability(h);
    probs.assign(g.value().begin(), g.value().end());
    std::vector<double> gates(probs.size(), 0.0);
    for (std::size_t i = 0; i < probs.size(); ++i) {
      switch (mode) {
        case GateMode::sample: gates[i] = uniform01(r) < probs[i] ? 1.0 : 0.0; break;
        case GateMode::threshold: gates[i] = probs[i] > 0.5 ? 1.0 : 0.0; break;
        case GateMode::off: break;
      }
    }
    return fused_word_logits(decoder_.logits(h), topic, gates, topic_mask_);
  };
  return decode_responses(decoder_, decoder_.initial_state(enc), {}, n, options, emit, rng);
}

// NTM

NtmModel::NtmModel(const RunConfig& cfg, std::size_t vocab_size, text::StopWords stopwords)
    : LatentModel(cfg, vocab_size, std::move(stopwords)),
      infer_net_(params_, vocab_size_, cfg_.mlp_hidden, cfg_.latent, init_rng_) {
  beta_ = params_.add_uniform("beta", vocab_size_, cfg_.topics, nn::kInitScale, init_rng_);
  w1_ = params_.add_uniform("topic_proj_w1", cfg_.latent, cfg_.topics, nn::kInitScale, init_rng_);
}

namespace {

std::vector<double> checked_counts(const text::Batch& batch) {
  std::vector<double> counts(batch.prompt_bow.size());
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] = batch.prompt_bow[i] + batch.response_bow[i];
  for (std::size_t b = 0; b < batch.size; ++b) {
    const auto first = counts.begin() + static_cast<std::ptrdiff_t>(b * batch.vocab_size);
    if (std::accumulate(first, first + static_cast<std::ptrdiff_t>(batch.vocab_size), 0.0) == 0.0) {
      throw InputError("topic model document " + std::to_string(b) + " has an empty bag of words");
    }
  }
  return counts;
}

std::size_t word_count(std::span<const double> counts) {
  return static_cast<std::size_t>(std::accumulate(counts.begin(), counts.end(), 0.0));
}

}  // namespace

ad::Tensor NtmModel::word_probabilities(const ad::Tensor& theta) const {
  return ad::matmul_nt(theta, ad::softmax_cols(beta_));
}

DiagonalGaussian NtmModel::prior(const text::Batch& batch, const ForwardContext&) const {
  return DiagonalGaussian::standard(batch.size, cfg_.latent);
}

DiagonalGaussian NtmModel::posterior(const text::Batch& batch, const ForwardContext&) const {
  return infer_net_(document_bow(batch));
}

Likelihood NtmModel::log_likelihood(const text::Batch& batch, const ad::Tensor& nu,
                                    const ForwardContext&) const {
  const auto counts = checked_counts(batch);
  Likelihood out;
  out.log_lik = ad::weighted_log_sum(word_probabilities(topic_proportion(nu, w1_)), counts);
  out.word_log_lik = out.log_lik.item();
  return out;
}

LossTerms NtmModel::loss(const text::Batch& batch, double kl_weight, bool, Rng& rng) {
  const auto counts = checked_counts(batch);
  const DiagonalGaussian q = infer_net_(document_bow(batch));
  const ad::Tensor nu = reparam_sample(q, standard_normal(batch.size, cfg_.latent, rng));
  const ad::Tensor ll = ad::weighted_log_sum(word_probabilities(topic_proportion(nu, w1_)), counts);
  const ad::Tensor kl = kl_diag(q, DiagonalGaussian::standard(batch.size, cfg_.latent));
  const ad::Tensor reg = beta_regularizers(beta_, cfg_.lambda_ma, cfg_.lambda_l2);

  LossTerms out;
  out.objective = ad::add(ad::scale(ad::sub(ad::scale(kl, kl_weight), ll), 1.0 / static_cast<double>(batch.size)),
                          reg);
  out.word_nll = -ll.item();
  out.kl = kl.item();
  out.kl_weight = kl_weight;
  out.regularizer = reg.item();
  out.tokens = word_count(counts);
  out.sequences = batch.size;
  return out;
}

EvalTerms NtmModel::evaluate(const text::Batch& batch, Rng& rng) {
  ad::NoGradScope no_grad;
  const auto counts = checked_counts(batch);
  const DiagonalGaussian q = infer_net_(document_bow(batch));
  const ad::Tensor nu = reparam_sample(q, standard_normal(batch.size, cfg_.latent, rng));
  const double ll = ad::weighted_log_sum(word_probabilities(topic_proportion(nu, w1_)), counts).item();
  const double kl = kl_diag(q, DiagonalGaussian::standard(batch.size, cfg_.latent)).item();
  EvalTerms e;
  e.bound = ll - kl;
  e.approx_log_prob = e.bound;
  e.kl = kl;
  e.has_kl = true;
  e.tokens = word_count(counts);
  e.sequences = batch.size;
  return e;
}

}  // namespace ltcm
