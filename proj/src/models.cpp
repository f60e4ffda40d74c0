#include "ltcm/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ltcm/error.hpp"
#include "ltcm/ops.hpp"
#include "ltcm/topic.hpp"

namespace ltcm {

GenerateOptions GenerateOptions::from(const RunConfig& cfg) {
  GenerateOptions o;
  o.strategy = cfg.decode_strategy;
  o.latent = cfg.latent_source;
  o.gate_mode = cfg.gate_mode;
  o.temperature = cfg.temperature;
  o.max_len = cfg.max_response_len;
  return o;
}

Model::Model(RunConfig cfg, std::size_t vocab_size, text::StopWords stopwords)
    : cfg_(std::move(cfg)),
      init_rng_(cfg_.seed),
      vocab_size_(vocab_size),
      stopwords_(std::move(stopwords)) {
  if (vocab_size_ < text::kReservedCount) throw ConfigError("vocabulary smaller than the reserved set");
  if (stopwords_.vocab_size() == 0) stopwords_ = text::StopWords(vocab_size_);
  if (stopwords_.vocab_size() != vocab_size_) {
    throw ConfigError("stop-word table covers " + std::to_string(stopwords_.vocab_size()) +
                      " ids, vocabulary has " + std::to_string(vocab_size_));
  }
  topic_mask_ = stopwords_.topic_mask();
}

std::vector<Generated> Model::generate(std::span<const int>, std::size_t, const GenerateOptions&,
                                       Rng&) const {
  throw ConfigError(std::string(to_string(kind())) + " models do not generate responses");
}

ForwardContext Model::context(bool training, Rng& rng) const {
  return ForwardContext{training, cfg_.dropout, &rng};
}

ad::Tensor pair_bow(const text::Batch& batch) {
  const auto u = ad::Tensor::from(batch.size, batch.vocab_size, batch.prompt_bow);
  const auto m = ad::Tensor::from(batch.size, batch.vocab_size, batch.response_bow);
  return ad::concat_cols({u, m});
}

ad::Tensor document_bow(const text::Batch& batch) {
  std::vector<double> v(batch.prompt_bow.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = batch.prompt_bow[i] + batch.response_bow[i];
  return ad::Tensor::from(batch.size, batch.vocab_size, std::move(v));
}

ad::Tensor draw_latent(const DiagonalGaussian& conditional, LatentSource source, Rng& rng) {
  const auto eps = standard_normal(conditional.batch(), conditional.dim(), rng);
  switch (source) {
    case LatentSource::prior: return eps;
    case LatentSource::conditional:
    case LatentSource::automatic: return reparam_sample(conditional, eps);
    case LatentSource::none: break;
  }
  throw ConfigError("latent models need latent source prior or conditional");
}

text::Batch prompt_batch(std::span<const int> prompt, std::size_t n, std::size_t vocab_size) {
  if (prompt.empty()) throw InputError("empty prompt");
  if (n == 0) throw ConfigError("n_responses must be >= 1");
  text::Batch b;
  b.size = n;
  b.vocab_size = vocab_size;
  b.prompt_width = prompt.size();
  b.prompt_bow.assign(n * vocab_size, 0.0);
  b.response_bow.assign(n * vocab_size, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    b.prompt.insert(b.prompt.end(), prompt.begin(), prompt.end());
    b.prompt_len.push_back(static_cast<int>(prompt.size()));
    for (int id : prompt) {
      if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) throw DataError("prompt id out of vocabulary");
      if (!text::is_reserved(id)) b.prompt_bow[r * vocab_size + static_cast<std::size_t>(id)] += 1.0;
    }
  }
  b.response_len.assign(n, 0);
  return b;
}

namespace {

int pick_token(std::span<const double> logits, const GenerateOptions& o, Rng& rng) {
  auto allowed = [](std::size_t i) { return i != text::kPad && i != text::kBos; };
  if (o.strategy == DecodeStrategy::greedy) {
    std::size_t best = text::kEos;
    for (std::size_t i = 0; i < logits.size(); ++i)
      if (allowed(i) && logits[i] > logits[best]) best = i;
    return static_cast<int>(best);
  }
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (allowed(i)) top = std::max(top, logits[i]);
  std::vector<double> w(logits.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!allowed(i)) continue;
    w[i] = std::exp((logits[i] - top) / o.temperature);
    total += w[i];
  }
  if (!std::isfinite(total) || total <= 0.0) throw NumericError("sampling distribution is degenerate");
  double u = uniform01(rng) * total;
  std::size_t last = text::kEos;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] == 0.0) continue;
    last = i;
    u -= w[i];
    if (u < 0.0) return static_cast<int>(i);
  }
  return static_cast<int>(last);
}

}  // namespace

std::vector<Generated> decode_responses(const Decoder& decoder, Decoder::State state,
                                        const ad::Tensor& latent, std::size_t n,
                                        const GenerateOptions& options, const LogitFn& emit_logits,
                                        Rng& rng) {
  if (options.temperature <= 0.0) throw ConfigError("temperature must be positive");
  if (options.max_len == 0) throw ConfigError("max response length must be >= 1");
  ad::NoGradScope no_grad;
  const ForwardContext ctx;
  std::vector<Generated> out(n);
  std::vector<int> prev(n, text::kBos);
  std::vector<bool> done(n, false);
  std::size_t remaining = n;
  for (std::size_t t = 0; t < options.max_len && remaining > 0; ++t) {
    const ad::Tensor h = decoder.step(state, prev, latent, ctx);
    std::vector<double> gates;
    const ad::Tensor logits = emit_logits(h, gates, rng);
    const std::size_t L = logits.cols();
    for (std::size_t r = 0; r < n; ++r) {
      if (done[r]) continue;
      const int tok = pick_token(logits.value().subspan(r * L, L), options, rng);
      out[r].tokens.push_back(tok);
      if (!gates.empty()) out[r].gate_probs.push_back(text::is_reserved(tok) ? 0.0 : gates[r]);
      prev[r] = tok;
      if (tok == text::kEos) {
        done[r] = true;
        --remaining;
      }
    }
  }
  return out;
}

// Seq2Seq

Seq2SeqModel::Seq2SeqModel(const RunConfig& cfg, std::size_t vocab_size, text::StopWords stopwords)
    : Model(cfg, vocab_size, std::move(stopwords)),
      encoder_(params_, cfg_, vocab_size_, init_rng_),
      decoder_(params_, cfg_, vocab_size_, 0, init_rng_) {}

ad::Tensor Seq2SeqModel::decode_loss(const text::Batch& batch, const ForwardContext& ctx) const {
  const auto enc = encoder_.encode(batch.prompt, batch.prompt_len, batch.size, batch.prompt_width, ctx);
  const ad::Tensor h = decoder_.run(batch, decoder_.initial_state(enc), {}, ctx);
  const auto targets = time_major<int>(batch.decoder_target, batch.size, batch.decoder_width);
  const auto mask = time_major<double>(batch.decoder_mask, batch.size, batch.decoder_width);
  return ad::masked_cross_entropy(decoder_.logits(ctx.maybe_dropout(h)), targets, mask);
}

LossTerms Seq2SeqModel::loss(const text::Batch& batch, double, bool training, Rng& rng) {
  const auto ctx = context(training, rng);
  LossTerms out;
  const ad::Tensor nll = decode_loss(batch, ctx);
  out.objective = ad::scale(nll, 1.0 / static_cast<double>(batch.size));
  out.word_nll = nll.item();
  out.tokens = batch.target_tokens();
  out.sequences = batch.size;
  return out;
}

EvalTerms Seq2SeqModel::evaluate(const text::Batch& batch, Rng& rng) {
  ad::NoGradScope no_grad;
  const double nll = decode_loss(batch, context(false, rng)).item();
  EvalTerms e;
  e.approx_log_prob = -nll;
  e.bound = -nll;
  e.tokens = batch.target_tokens();
  e.sequences = batch.size;
  return e;
}

std::vector<Generated> Seq2SeqModel::generate(std::span<const int> prompt, std::size_t n,
                                              const GenerateOptions& options, Rng& rng) const {
  if (options.latent != LatentSource::none && options.latent != LatentSource::automatic) {
    throw ConfigError("s2s has no latent variable; latent source must be none");
  }
  ad::NoGradScope no_grad;
  const auto b = prompt_batch(prompt, n, vocab_size_);
  const auto enc = encoder_.encode(b.prompt, b.prompt_len, n, b.prompt_width, {});
  const LogitFn emit = [this](const ad::Tensor& h, std::vector<double>&, Rng&) {
    return decoder_.logits(h);
  };
  return decode_responses(decoder_, decoder_.initial_state(enc), {}, n, options, emit, rng);
}

// Latent-variable seq2seq

LatentSeq2SeqModel::LatentSeq2SeqModel(const RunConfig& cfg, std::size_t vocab_size,
                                       text::StopWords stopwords)
    : LatentModel(cfg, vocab_size, std::move(stopwords)),
      encoder_(params_, cfg_, vocab_size_, init_rng_),
      decoder_(params_, cfg_, vocab_size_, cfg_.latent, init_rng_),
      prior_net_(cfg_.latent_prior == LatentPrior::conditional
                     ? std::optional<PriorNet>(std::in_place, params_, cfg_.hidden, cfg_.mlp_hidden,
                                               cfg_.latent, init_rng_)
                     : std::nullopt),
      infer_net_(params_, 2 * vocab_size_, cfg_.mlp_hidden, cfg_.latent, init_rng_) {}

DiagonalGaussian LatentSeq2SeqModel::prior_from(const Encoder::Output& enc) const {
  if (!prior_net_) return DiagonalGaussian::standard(enc.summary().rows(), cfg_.latent);
  return (*prior_net_)(enc.summary());
}

Likelihood LatentSeq2SeqModel::likelihood_from(const text::Batch& batch, const Encoder::Output& enc,
                                               const ad::Tensor& nu, const ForwardContext& ctx) const {
  const ad::Tensor h = decoder_.run(batch, decoder_.initial_state(enc), nu, ctx);
  const auto targets = time_major<int>(batch.decoder_target, batch.size, batch.decoder_width);
  const auto mask = time_major<double>(batch.decoder_mask, batch.size, batch.decoder_width);
  Likelihood out;
  out.log_lik = ad::scale(ad::masked_cross_entropy(decoder_.logits(ctx.maybe_dropout(h)), targets, mask), -1.0);
  out.word_log_lik = out.log_lik.item();
  return out;
}

DiagonalGaussian LatentSeq2SeqModel::prior(const text::Batch& batch, const ForwardContext& ctx) const {
  return prior_from(encoder_.encode(batch.prompt, batch.prompt_len, batch.size, batch.prompt_width, ctx));
}

DiagonalGaussian LatentSeq2SeqModel::posterior(const text::Batch& batch, const ForwardContext&) const {
  return infer_net_(pair_bow(batch));
}

Likelihood LatentSeq2SeqModel::log_likelihood(const text::Batch& batch, const ad::Tensor& nu,
                                              const ForwardContext& ctx) const {
  const auto enc = encoder_.encode(batch.prompt, batch.prompt_len, batch.size, batch.prompt_width, ctx);
  return likelihood_from(batch, enc, nu, ctx);
}

LossTerms LatentSeq2SeqModel::loss(const text::Batch& batch, double kl_weight, bool training, Rng& rng) {
  const auto ctx = context(training, rng);
  const auto enc = encoder_.encode(batch.prompt, batch.prompt_len, batch.size, batch.prompt_width, ctx);
  const DiagonalGaussian p = prior_from(enc);
  const DiagonalGaussian q = infer_net_(pair_bow(batch));
  const ad::Tensor nu = reparam_sample(q, standard_normal(batch.size, cfg_.latent, rng));
  const Likelihood lik = likelihood_from(batch, enc, nu, ctx);
  const ad::Tensor kl = kl_diag(q, p);

  LossTerms out;
  out.objective = ad::scale(ad::sub(ad::scale(kl, kl_weight), lik.log_lik),
                            1.0 / static_cast<double>(batch.size));
  out.word_nll = -lik.word_log_lik;
  out.kl = kl.item();
  out.kl_weight = kl_weight;
  out.tokens = batch.target_tokens();
  out.sequences = batch.size;
  return out;
}

EvalTerms LatentSeq2SeqModel::evaluate(const text::Batch& batch, Rng& rng) {
  ad::NoGradScope no_grad;
  const ForwardContext ctx;
  const auto enc = encoder_.encode(batch.prompt, batch.prompt_len, batch.size, batch.prompt_width, ctx);
  const DiagonalGaussian p = prior_from(enc);
  const DiagonalGaussian q = infer_net_(pair_bow(batch));
  const ad::Tensor nu = reparam_sample(q, standard_normal(batch.size, cfg_.latent, rng));
  const double kl = kl_diag(q, p).item();

  EvalTerms e;
  e.approx_log_prob = likelihood_from(batch, enc, p.mean, ctx).word_log_lik;
  e.bound = likelihood_from(batch, enc, nu, ctx).word_log_lik - kl;
  e.kl = kl;
  e.has_kl = true;
  e.tokens = batch.target_tokens();
  e.sequences = batch.size;
  return e;
}

std::vector<Generated> LatentSeq2SeqModel::generate(std::span<const int> prompt, std::size_t n,
                                                    const GenerateOptions& options, Rng& rng) const {
  ad::NoGradScope no_grad;
  const auto b = prompt_batch(prompt, n, vocab_size_);
  const auto enc = encoder_.encode(b.prompt, b.prompt_len, n, b.prompt_width, {});
  const ad::Tensor nu = draw_latent(prior_from(enc), options.latent, rng);
  const LogitFn emit = [this](const ad::Tensor& h, std::vector<double>&, Rng&) {
    return decoder_.logits(h);
  };
  return decode_responses(decoder_, decoder_.initial_state(enc), nu, n, options, emit, rng);
}

std::unique_ptr<Model> make_model(const RunConfig& cfg, std::size_t vocab_size, text::StopWords stopwords) {
  cfg.validate();
  switch (cfg.model) {
    case ModelKind::s2s: return std::make_unique<Seq2SeqModel>(cfg, vocab_size, std::move(stopwords));
    case ModelKind::lvs2s: return std::make_unique<LatentSeq2SeqModel>(cfg, vocab_size, std::move(stopwords));
    case ModelKind::ltcm: return std::make_unique<LtcmModel>(cfg, vocab_size, std::move(stopwords));
    case ModelKind::ntm: return std::make_unique<NtmModel>(cfg, vocab_size, std::move(stopwords));
  }
  throw ConfigError("unknown model kind");
}

}  // namespace ltcm
