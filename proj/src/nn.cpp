#include "ltcm/nn.hpp"

#include "ltcm/error.hpp"
#include "ltcm/ops.hpp"

namespace ltcm::nn {

LstmWeights make_lstm(ParameterStore& store, const std::string& prefix, std::size_t input,
                      std::size_t hidden, bool layer_norm, Rng& rng) {
  store.add_uniform(prefix + "/w", input + hidden, 4 * hidden, kInitScale, rng);
  auto& b = store.add(prefix + "/b", 1, 4 * hidden);
  if (layer_norm) {
    store.add_filled(prefix + "/ln_gain", 1, 4 * hidden, 1.0);
    auto& lb = store.add(prefix + "/ln_bias", 1, 4 * hidden);
    for (std::size_t j = hidden; j < 2 * hidden; ++j) lb.value()[j] = kForgetBias;
  } else {
    for (std::size_t j = hidden; j < 2 * hidden; ++j) b.value()[j] = kForgetBias;
  }
  return bind_lstm(store, prefix, layer_norm);
}

LstmWeights bind_lstm(ParameterStore& store, const std::string& prefix, bool layer_norm) {
  LstmWeights w;
  w.w = store.get(prefix + "/w");
  w.b = store.get(prefix + "/b");
  w.hidden = w.b.cols() / 4;
  w.input = w.w.rows() - w.hidden;
  w.layer_norm = layer_norm;
  if (layer_norm) {
    w.ln_gain = store.get(prefix + "/ln_gain");
    w.ln_bias = store.get(prefix + "/ln_bias");
  }
  return w;
}

LstmState lstm_cell(const ad::Tensor& x, const LstmState& prev, const LstmWeights& w) {
  if (x.cols() != w.input || prev.h.cols() != w.hidden || prev.c.cols() != w.hidden) {
    throw DimensionError("lstm_cell: input " + x.shape_string() + " / state " +
                         prev.h.shape_string() + " do not fit weights " + w.w.shape_string());
  }
  ad::Tensor pre = ad::add_row(ad::matmul(ad::concat_cols({x, prev.h}), w.w), w.b);
  if (w.layer_norm) pre = ad::layer_norm(pre, w.ln_gain, w.ln_bias, 4);
  const ad::Tensor act = ad::lstm_activations(pre);
  ad::Tensor c = ad::lstm_cell_state(act, prev.c);
  ad::Tensor h = ad::lstm_hidden(act, c);
  return {std::move(h), std::move(c)};
}

LstmState zero_state(std::size_t batch, std::size_t hidden) {
  return {ad::Tensor::zeros(batch, hidden), ad::Tensor::zeros(batch, hidden)};
}

Mlp make_mlp(ParameterStore& store, const std::string& prefix, std::size_t input,
             std::size_t hidden, std::size_t output, double out_scale, Rng& rng) {
  Mlp m;
  m.w1 = store.add_uniform(prefix + "/w1", input, hidden, kInitScale, rng);
  m.b1 = store.add(prefix + "/b1", 1, hidden);
  m.w2 = store.add_uniform(prefix + "/w2", hidden, output, out_scale, rng);
  m.b2 = store.add(prefix + "/b2", 1, output);
  return m;
}

ad::Tensor apply(const Mlp& mlp, const ad::Tensor& x) {
  const ad::Tensor hidden = ad::tanh(ad::add_row(ad::matmul(x, mlp.w1), mlp.b1));
  return ad::add_row(ad::matmul(hidden, mlp.w2), mlp.b2);
}

}  // namespace ltcm::nn
