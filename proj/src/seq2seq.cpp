#include "ltcm/seq2seq.hpp"

#include <cmath>

#include "ltcm/error.hpp"
#include "ltcm/ops.hpp"

namespace ltcm {

ad::Tensor ForwardContext::maybe_dropout(const ad::Tensor& x) const {
  if (!training || dropout == 0.0) return x;
  if (rng == nullptr) throw ConfigError("dropout in training mode needs an RNG");
  return ad::dropout(x, dropout, true, *rng);
}

namespace {

std::vector<int> column(std::span<const int> ids, std::size_t batch, std::size_t width, std::size_t t) {
  std::vector<int> out(batch);
  for (std::size_t b = 0; b < batch; ++b) out[b] = ids[b * width + t];
  return out;
}

bool uses_residual(std::size_t layer_index, std::size_t residual_from) {
  return layer_index + 1 >= residual_from;
}

}  // namespace

Encoder::Encoder(ParameterStore& store, const RunConfig& cfg, std::size_t vocab_size, Rng& init)
    : residual_from_(cfg.residual_from) {
  const std::size_t d = cfg.hidden;
  embedding_ = store.add_uniform("encoder/embedding", vocab_size, cfg.embed, nn::kInitScale, init);
  forward_ = nn::make_lstm(store, "encoder/l1/fw", cfg.embed, d / 2, cfg.layer_norm, init);
  backward_ = nn::make_lstm(store, "encoder/l1/bw", cfg.embed, d / 2, cfg.layer_norm, init);
  for (std::size_t l = 1; l < cfg.layers; ++l) {
    upper_.push_back(
        nn::make_lstm(store, "encoder/l" + std::to_string(l + 1), d, d, cfg.layer_norm, init));
  }
}

Encoder::Output Encoder::encode(std::span<const int> ids, std::span<const int> lengths,
                                std::size_t batch, std::size_t width,
                                const ForwardContext& ctx) const {
  if (lengths.size() != batch) throw DimensionError("encode: lengths do not match batch");
  for (int len : lengths) {
    if (len < 1) throw InputError("encode: empty prompt");
    if (static_cast<std::size_t>(len) > width) throw DimensionError("encode: length exceeds width");
  }
  std::vector<std::vector<double>> masks(width, std::vector<double>(batch, 0.0));
  for (std::size_t t = 0; t < width; ++t)
    for (std::size_t b = 0; b < batch; ++b)
      masks[t][b] = static_cast<std::size_t>(lengths[b]) > t ? 1.0 : 0.0;

  std::vector<ad::Tensor> inputs;
  inputs.reserve(width);
  for (std::size_t t = 0; t < width; ++t) {
    const auto col = column(ids, batch, width, t);
    inputs.push_back(ctx.maybe_dropout(ad::gather_rows(embedding_, col)));
  }

  Output out;
  const std::size_t half = forward_.hidden;
  std::vector<ad::Tensor> fw_out(width), bw_out(width);
  nn::LstmState fw = nn::zero_state(batch, half);
  for (std::size_t t = 0; t < width; ++t) {
    const auto next = nn::lstm_cell(inputs[t], fw, forward_);
    fw = {ad::blend_rows(next.h, fw.h, masks[t]), ad::blend_rows(next.c, fw.c, masks[t])};
    fw_out[t] = fw.h;
  }
  nn::LstmState bw = nn::zero_state(batch, half);
  for (std::size_t t = width; t-- > 0;) {
    const auto next = nn::lstm_cell(inputs[t], bw, backward_);
    bw = {ad::blend_rows(next.h, bw.h, masks[t]), ad::blend_rows(next.c, bw.c, masks[t])};
    bw_out[t] = bw.h;
  }
  std::vector<ad::Tensor> layer_out(width);
  for (std::size_t t = 0; t < width; ++t) layer_out[t] = ad::concat_cols({fw_out[t], bw_out[t]});
  out.finals.push_back({ad::concat_cols({fw.h, bw.h}), ad::concat_cols({fw.c, bw.c})});

  for (std::size_t l = 0; l < upper_.size(); ++l) {
    const auto& w = upper_[l];
    const bool residual = uses_residual(l + 1, residual_from_);
    nn::LstmState s = nn::zero_state(batch, w.hidden);
    std::vector<ad::Tensor> next_out(width);
    for (std::size_t t = 0; t < width; ++t) {
      const ad::Tensor x = ctx.maybe_dropout(layer_out[t]);
      const auto next = nn::lstm_cell(x, s, w);
      s = {ad::blend_rows(next.h, s.h, masks[t]), ad::blend_rows(next.c, s.c, masks[t])};
      next_out[t] = residual ? ad::add(s.h, layer_out[t]) : s.h;
    }
    out.finals.push_back(s);
    layer_out = std::move(next_out);
  }
  out.top = std::move(layer_out);
  return out;
}

Decoder::Decoder(ParameterStore& store, const RunConfig& cfg, std::size_t vocab_size,
                 std::size_t latent_input, Rng& init)
    : residual_from_(cfg.residual_from), latent_input_(latent_input) {
  const std::size_t d = cfg.hidden;
  embedding_ = store.add_uniform("decoder/embedding", vocab_size, cfg.embed, nn::kInitScale, init);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::size_t in = l == 0 ? cfg.embed + latent_input : d;
    layers_.push_back(
        nn::make_lstm(store, "decoder/l" + std::to_string(l + 1), in, d, cfg.layer_norm, init));
  }
  projection_ = store.add_uniform("decoder/projection", d, vocab_size, nn::kInitScale, init);
}

Decoder::State Decoder::initial_state(const Encoder::Output& enc) const {
  if (enc.finals.size() != layers_.size()) {
    throw DimensionError("decoder has " + std::to_string(layers_.size()) + " layers, encoder " +
                         std::to_string(enc.finals.size()));
  }
  return State{enc.finals};
}

ad::Tensor Decoder::step(State& state, std::span<const int> inputs, const ad::Tensor& latent,
                         const ForwardContext& ctx) const {
  ad::Tensor x = ad::gather_rows(embedding_, inputs);
  if (latent_input_ > 0) {
    if (!latent.defined() || latent.cols() != latent_input_ || latent.rows() != inputs.size()) {
      throw DimensionError("decoder expects a [" + std::to_string(inputs.size()) + " x " +
                           std::to_string(latent_input_) + "] latent input");
    }
    x = ad::concat_cols({x, latent});
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const ad::Tensor in = ctx.maybe_dropout(x);
    state.layers[l] = nn::lstm_cell(in, state.layers[l], layers_[l]);
    const bool residual = uses_residual(l, residual_from_) && x.cols() == layers_[l].hidden;
    x = residual ? ad::add(state.layers[l].h, x) : state.layers[l].h;
  }
  return x;
}

ad::Tensor Decoder::run(const text::Batch& batch, State state, const ad::Tensor& latent,
                        const ForwardContext& ctx) const {
  const std::size_t B = batch.size, T = batch.decoder_width;
  std::vector<ad::Tensor> outs;
  outs.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    const auto col = column(batch.decoder_input, B, T, t);
    outs.push_back(step(state, col, latent, ctx));
  }
  return ad::concat_rows(outs);
}

ad::Tensor Decoder::logits(const ad::Tensor& h) const { return ad::matmul(h, projection_); }

double s2s_perplexity(double loss_sum, std::size_t tokens) {
  if (tokens == 0) throw MetricError("perplexity over zero tokens");
  return std::exp(loss_sum / static_cast<double>(tokens));
}

}  // namespace ltcm
