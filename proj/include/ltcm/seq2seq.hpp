#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ltcm/config.hpp"
#include "ltcm/nn.hpp"
#include "ltcm/params.hpp"
#include "ltcm/random.hpp"
#include "ltcm/tensor.hpp"
#include "ltcm/text.hpp"

namespace ltcm {

struct ForwardContext {
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;

  ad::Tensor maybe_dropout(const ad::Tensor& x) const;
};

/// GNMT-style encoder: layer 1 is a bidirectional LSTM (d/2 per direction),
/// layers 2..n are unidirectional with residual connections from
/// `residual_from` upward. Parameters live under "encoder/".
class Encoder {
 public:
  Encoder(ParameterStore& store, const RunConfig& cfg, std::size_t vocab_size, Rng& init);

  struct Output {
    /// Per-layer final states, each d wide; layer 1 concatenates forward and
    /// backward finals.
    std::vector<nn::LstmState> finals;
    /// Per-step top-layer outputs, each [B x d].
    std::vector<ad::Tensor> top;
    /// Final top-layer hidden state, the prompt summary.
    ad::Tensor summary() const { return finals.back().h; }
  };

  /// `ids` is row-major [batch x width]; every length must be >= 1.
  Output encode(std::span<const int> ids, std::span<const int> lengths, std::size_t batch,
                std::size_t width, const ForwardContext& ctx) const;

 private:
  ad::Tensor embedding_;
  nn::LstmWeights forward_;
  nn::LstmWeights backward_;
  std::vector<nn::LstmWeights> upper_;
  std::size_t residual_from_;
};

/// Unidirectional decoder stack with output projection V (stored d x L).
/// An optional latent vector is concatenated to every step's input
/// embedding. Parameters live under "decoder/".
class Decoder {
 public:
  Decoder(ParameterStore& store, const RunConfig& cfg, std::size_t vocab_size,
          std::size_t latent_input, Rng& init);

  struct State {
    std::vector<nn::LstmState> layers;
  };

  /// Every decoder layer starts from the matching encoder layer's final state.
  State initial_state(const Encoder::Output& enc) const;

  /// One step for a batch of previous tokens; returns the top output [B x d].
  ad::Tensor step(State& state, std::span<const int> inputs, const ad::Tensor& latent,
                  const ForwardContext& ctx) const;

  /// Teacher-forced run over batch.decoder_input; returns top outputs stacked
  /// time-major, row t * B + b.
  ad::Tensor run(const text::Batch& batch, State state, const ad::Tensor& latent,
                 const ForwardContext& ctx) const;

  ad::Tensor logits(const ad::Tensor& h) const;
  const ad::Tensor& projection() const { return projection_; }
  std::size_t latent_input() const { return latent_input_; }

 private:
  ad::Tensor embedding_;
  std::vector<nn::LstmWeights> layers_;
  ad::Tensor projection_;
  std::size_t residual_from_;
  std::size_t latent_input_;
};

/// Row-major [B x T] -> time-major flat vector (index t * B + b).
template <class T>
std::vector<T> time_major(std::span<const T> v, std::size_t batch, std::size_t width) {
  std::vector<T> out(v.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < width; ++t) out[t * batch + b] = v[b * width + t];
  return out;
}

double s2s_perplexity(double loss_sum, std::size_t tokens);

}  // namespace ltcm
