#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ltcm/random.hpp"
#include "ltcm/tensor.hpp"

namespace ltcm::ad {

// Linear algebra
Tensor matmul(const Tensor& a, const Tensor& b);     // a[m x k] * b[k x n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a[m x k] * b[n x k]^T
Tensor transpose(const Tensor& a);

// Elementwise, identical shapes
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor add_row(const Tensor& a, const Tensor& bias);  // bias[1 x n] broadcast over rows

Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor square(const Tensor& a);

// Reductions
Tensor sum(const Tensor& a);
Tensor sum_rows(const Tensor& a);  // [m x n] -> [m x 1]

// Shape manipulation
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor tile_rows(const Tensor& a, std::size_t times);  // row t*m + r copies row r
Tensor gather_rows(const Tensor& table, std::span<const int> ids);

// Row-wise normalisers
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
Tensor softmax_cols(const Tensor& a);

/// Normalises each of `groups` equal column blocks of every row to zero mean
/// and unit variance (eps inside the square root), then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  std::size_t groups = 1, double eps = 1e-5);

/// Inverted dropout. Identity when !training or rate == 0.
Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng);

/// Rows with mask 1 take `fresh`, rows with mask 0 keep `old` bit-for-bit.
Tensor blend_rows(const Tensor& fresh, const Tensor& old, std::span<const double> mask);

// LSTM pieces. `pre` holds the [i f o g] pre-activations, each d wide.
Tensor lstm_activations(const Tensor& pre);
Tensor lstm_cell_state(const Tensor& act, const Tensor& c_prev);
Tensor lstm_hidden(const Tensor& act, const Tensor& c);

/// base + topic on rows whose gate is nonzero and columns whose column mask is
/// nonzero. Other entries of `topic` are never read and receive no gradient.
Tensor gated_add(const Tensor& base, const Tensor& topic, std::span<const double> row_gate,
                 std::span<const double> col_mask);

/// sum_r mask_r * -log softmax(logits_r)[target_r], as a 1 x 1 tensor.
Tensor masked_cross_entropy(const Tensor& logits, std::span<const int> targets,
                            std::span<const double> mask);

/// sum_r mask_r * log Bernoulli(label_r | sigmoid(logit_r)) for logits [m x 1].
Tensor bernoulli_log_likelihood(const Tensor& logits, std::span<const double> labels,
                                std::span<const double> mask);

/// sum over entries of weights * log(p); weights are constants.
Tensor weighted_log_sum(const Tensor& p, std::span<const double> weights);

}  // namespace ltcm::ad
