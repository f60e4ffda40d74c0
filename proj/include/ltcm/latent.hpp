#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "ltcm/nn.hpp"
#include "ltcm/params.hpp"
#include "ltcm/random.hpp"
#include "ltcm/tensor.hpp"

namespace ltcm {

/// Factorised Gaussian, one distribution per row: mean and log-variance
/// are both [B x k].
struct DiagonalGaussian {
  ad::Tensor mean;
  ad::Tensor log_var;

  std::size_t dim() const { return mean.cols(); }
  std::size_t batch() const { return mean.rows(); }

  /// N(0, I) with constant (non-learned) parameters.
  static DiagonalGaussian standard(std::size_t batch, std::size_t dim);
};

/// [B x k] of independent standard-normal draws.
ad::Tensor standard_normal(std::size_t rows, std::size_t cols, Rng& rng);

/// nu = mean + exp(log_var / 2) * eps.
ad::Tensor reparam_sample(const DiagonalGaussian& g, const ad::Tensor& eps);

/// Closed-form KL(q || p) summed over dimensions, one value per row [B x 1].
ad::Tensor kl_diag_rows(const DiagonalGaussian& q, const DiagonalGaussian& p);
/// Same, summed over the batch [1 x 1].
ad::Tensor kl_diag(const DiagonalGaussian& q, const DiagonalGaussian& p);

/// Linear KL weight: 0 at step 0, 1 from `steps_per_epoch` on.
class AnnealSchedule {
 public:
  explicit AnnealSchedule(std::uint64_t steps_per_epoch);
  double weight(std::uint64_t step) const;
  std::uint64_t steps_per_epoch() const { return steps_; }

 private:
  std::uint64_t steps_;
};

double anneal_weight(std::uint64_t step, std::uint64_t steps_per_epoch);

/// Conditional prior p(nu | u): two tanh perceptrons for the mean and the
/// log-variance. Parameters under "prior_net/".
class PriorNet {
 public:
  PriorNet(ParameterStore& store, std::size_t input, std::size_t hidden, std::size_t latent, Rng& init);
  DiagonalGaussian operator()(const ad::Tensor& summary) const;

 private:
  nn::Mlp mean_;
  nn::Mlp log_var_;
};

/// Approximate posterior q(nu | u, m) over bag-of-words input. Parameters
/// under "infer_net/". Training-time only.
class InferenceNet {
 public:
  InferenceNet(ParameterStore& store, std::size_t input, std::size_t hidden, std::size_t latent, Rng& init);
  DiagonalGaussian operator()(const ad::Tensor& bow) const;

 private:
  nn::Mlp mean_;
  nn::Mlp log_var_;
};

}  // namespace ltcm
