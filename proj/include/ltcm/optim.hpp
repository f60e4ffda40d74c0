#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ltcm/params.hpp"

namespace ltcm {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Halve the rate every `decay_every` updates; 0 disables the schedule.
  std::uint64_t decay_every = 0;
  double decay_factor = 0.5;
};

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

/// Adam with bias correction and a piecewise-constant learning-rate schedule.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// Applies one update using the gradients stored in `params`. Throws
  /// TrainingError naming the first parameter with a non-finite gradient;
  /// in that case no parameter is modified.
  void step(ParameterStore& params);

  double schedule(std::uint64_t t) const;
  double effective_rate() const { return config_.learning_rate * schedule(t_); }

  std::uint64_t t() const { return t_; }
  void set_t(std::uint64_t t) { t_ = t; }
  const AdamConfig& config() const { return config_; }

  /// Moments aligned with the parameter order of the store they were created for.
  std::vector<AdamMoments>& moments() { return moments_; }
  const std::vector<AdamMoments>& moments() const { return moments_; }
  void ensure_moments(const ParameterStore& params);

 private:
  AdamConfig config_;
  std::uint64_t t_ = 0;
  std::vector<AdamMoments> moments_;
};

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping. max_norm <= 0 leaves gradients untouched.
double clip_grad_norm(ParameterStore& params, double max_norm);

}  // namespace ltcm
