#pragma once

#include <cstddef>
#include <string>

#include "ltcm/params.hpp"
#include "ltcm/random.hpp"
#include "ltcm/tensor.hpp"

namespace ltcm::nn {

inline constexpr double kInitScale = 0.08;
inline constexpr double kForgetBias = 1.0;

/// One LSTM cell. Gate order in the fused pre-activation is [i f o g].
/// With layer_norm each of the four gate blocks is normalised separately.
struct LstmWeights {
  ad::Tensor w;  // [(in + hidden) x 4 hidden]
  ad::Tensor b;  // [1 x 4 hidden]
  ad::Tensor ln_gain;
  ad::Tensor ln_bias;
  std::size_t input = 0;
  std::size_t hidden = 0;
  bool layer_norm = false;
};

struct LstmState {
  ad::Tensor h;
  ad::Tensor c;
};

LstmWeights make_lstm(ParameterStore& store, const std::string& prefix, std::size_t input,
                      std::size_t hidden, bool layer_norm, Rng& rng);
/// Binds to parameters that already exist in `store`.
LstmWeights bind_lstm(ParameterStore& store, const std::string& prefix, bool layer_norm);

LstmState lstm_cell(const ad::Tensor& x, const LstmState& prev, const LstmWeights& w);

LstmState zero_state(std::size_t batch, std::size_t hidden);

/// Single-hidden-layer perceptron with tanh hidden units.
struct Mlp {
  ad::Tensor w1, b1, w2, b2;
};

Mlp make_mlp(ParameterStore& store, const std::string& prefix, std::size_t input,
             std::size_t hidden, std::size_t output, double out_scale, Rng& rng);
ad::Tensor apply(const Mlp& mlp, const ad::Tensor& x);

}  // namespace ltcm::nn
