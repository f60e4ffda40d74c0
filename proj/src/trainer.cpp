#include "ltcm/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "ltcm/error.hpp"
#include "ltcm/latent.hpp"
#include "ltcm/metrics.hpp"
#include "ltcm/tensor.hpp"

namespace ltcm {

namespace {

double now_seconds() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

}  // namespace

AdamConfig adam_config(const RunConfig& cfg) {
  AdamConfig a;
  a.learning_rate = cfg.learning_rate;
  a.beta1 = cfg.adam_beta1;
  a.beta2 = cfg.adam_beta2;
  a.epsilon = cfg.adam_epsilon;
  a.decay_every = cfg.lr_decay_steps;
  return a;
}

Trainer::Trainer(Model& model, std::vector<text::DialoguePair> corpus)
    : model_(model), corpus_(std::move(corpus)), adam_(adam_config(model.config())) {
  if (corpus_.empty()) throw DataError("training corpus is empty");
  state_.rng.seed(derive_seed(model.config().seed, 1));
  start_time_ = now_seconds();
}

void Trainer::resume(const Checkpoint& ckpt) {
  // The epoch budget may grow between runs; everything else must match.
  RunConfig saved = ckpt.config;
  saved.epochs = model_.config().epochs;
  if (!(saved == model_.config())) throw CheckpointError("checkpoint config differs from the run config");
  restore(model_, &adam_, ckpt);
  state_ = ckpt.state;
}

std::uint64_t Trainer::steps_per_epoch() const {
  const std::size_t b = model_.config().batch_size;
  return (corpus_.size() + b - 1) / b;
}

double Trainer::kl_weight(std::uint64_t step) const {
  const auto& cfg = model_.config();
  if (!cfg.kl_annealing) return 1.0;
  return anneal_weight(step, cfg.anneal_steps > 0 ? cfg.anneal_steps : steps_per_epoch());
}

EpochSummary Trainer::run_epoch() {
  const auto& cfg = model_.config();
  std::vector<std::size_t> order(corpus_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[uniform_index(state_.rng, i)]);
  }

  EpochSummary summary;
  summary.epoch = state_.epoch + 1;
  double objective = 0.0, recon = 0.0, kl = 0.0;
  std::size_t sequences = 0, batches = 0;
  auto& params = model_.params();
  for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
    const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
    std::vector<text::DialoguePair> pairs;
    for (std::size_t i = begin; i < end; ++i) pairs.push_back(corpus_[order[i]]);
    const text::Batch batch = text::assemble_batch(pairs, model_.vocab_size(), model_.stopwords());

    const double w = kl_weight(state_.step);
    ad::Tape tape;
    ad::TapeScope scope(tape);
    const LossTerms terms = model_.loss(batch, w, true, state_.rng);
    const double obj = terms.objective.item();
    if (!std::isfinite(obj)) throw TrainingError("objective", "non-finite training objective at step " +
                                                                   std::to_string(state_.step));
    params.zero_grad();
    tape.backward(terms.objective);
    const double norm = clip_grad_norm(params, cfg.max_grad_norm);
    adam_.step(params);
    ++state_.step;

    const double n = static_cast<double>(batch.size);
    objective += obj;
    recon += terms.word_nll - terms.gate_log_lik;
    kl += terms.kl;
    sequences += batch.size;
    ++batches;
    if (log_) {
      nlohmann::json rec = {{"step", state_.step},
                            {"epoch", summary.epoch},
                            {"objective", obj},
                            {"reconstruction", (terms.word_nll - terms.gate_log_lik) / n},
                            {"kl", terms.kl / n},
                            {"anneal_weight", w},
                            {"grad_norm", norm},
                            {"wall_time", now_seconds() - start_time_}};
      *log_ << rec.dump() << '\n';
    }
  }
  ++state_.epoch;
  summary.step = state_.step;
  summary.objective = objective / static_cast<double>(batches);
  summary.reconstruction = recon / static_cast<double>(sequences);
  summary.kl = kl / static_cast<double>(sequences);
  return summary;
}

std::vector<EpochSummary> Trainer::train(const std::function<void(const EpochSummary&)>& after_epoch) {
  std::vector<EpochSummary> out;
  while (state_.epoch < model_.config().epochs) {
    out.push_back(run_epoch());
    if (after_epoch) after_epoch(out.back());
  }
  return out;
}

double training_perplexity(Model& model, std::span<const text::DialoguePair> corpus,
                           std::size_t batch_size, std::uint64_t seed) {
  double log_prob = 0.0;
  std::size_t tokens = 0;
  const auto batches = make_batches(corpus, batch_size, model.vocab_size(), model.stopwords());
  for (std::size_t i = 0; i < batches.size(); ++i) {
    Rng rng(derive_seed(seed, i));
    const EvalTerms e = model.evaluate(batches[i], rng);
    log_prob += e.approx_log_prob;
    tokens += e.tokens;
  }
  if (tokens == 0) throw MetricError("perplexity over zero tokens");
  return std::exp(-log_prob / static_cast<double>(tokens));
}

}  // namespace ltcm
