#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "ltcm/checkpoint.hpp"
#include "ltcm/models.hpp"
#include "ltcm/optim.hpp"
#include "ltcm/text.hpp"

namespace ltcm {

struct StepRecord {
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  double objective = 0.0;
  double reconstruction = 0.0;  // word NLL minus gate log-likelihood, per sequence
  double kl = 0.0;              // per sequence
  double anneal_weight = 0.0;
  double grad_norm = 0.0;
  double wall_time = 0.0;       // seconds since the trainer was created
};

struct EpochSummary {
  std::uint64_t epoch = 0;  // 1-based
  std::uint64_t step = 0;
  double objective = 0.0;       // mean over batches
  double reconstruction = 0.0;  // per sequence
  double kl = 0.0;              // per sequence
};

AdamConfig adam_config(const RunConfig& cfg);

/// Mini-batch training loop: shuffled batches each epoch, one reparameterised
/// sample per pair, global-norm clipping, Adam. All randomness comes from the
/// state RNG, so a run restored from a checkpoint continues bit-exactly.
class Trainer {
 public:
  Trainer(Model& model, std::vector<text::DialoguePair> corpus);

  void resume(const Checkpoint& ckpt);

  /// Writes one JSON object per update.
  void set_log(std::ostream* log) { log_ = log; }

  std::uint64_t steps_per_epoch() const;
  double kl_weight(std::uint64_t step) const;

  EpochSummary run_epoch();
  /// Runs until config().epochs epochs are complete, calling `after_epoch`
  /// after each one.
  std::vector<EpochSummary> train(const std::function<void(const EpochSummary&)>& after_epoch = {});

  const TrainingState& state() const { return state_; }
  const Adam& adam() const { return adam_; }
  Model& model() { return model_; }

 private:
  Model& model_;
  std::vector<text::DialoguePair> corpus_;
  Adam adam_;
  TrainingState state_;
  std::ostream* log_ = nullptr;
  double start_time_ = 0.0;
};

/// Approximate perplexity on `corpus` in evaluation mode.
double training_perplexity(Model& model, std::span<const text::DialoguePair> corpus,
                           std::size_t batch_size, std::uint64_t seed);

}  // namespace ltcm
