#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fata/nn/tape.hpp"
#include "fata/rng.hpp"

namespace fata::nn {

// Differentiable ops over Tape. Shapes are (rows x cols); "row" arguments are
// 1 x cols and broadcast over rows.

template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b);

/// x W + b. `bias` may be an invalid Var.
template <typename T>
Var linear(Tape<T>& tape, Var x, Var weight, Var bias);

template <typename T>
Var add(Tape<T>& tape, Var a, Var b);

/// a + row, row broadcast over a's rows.
template <typename T>
Var add_row(Tape<T>& tape, Var a, Var row);

template <typename T>
Var scale(Tape<T>& tape, Var a, T factor);

/// Sum of all entries, as 1 x 1.
template <typename T>
Var sum(Tape<T>& tape, Var a);

/// Rows `ids` of `table`.
template <typename T>
Var gather_rows(Tape<T>& tape, Var table, std::span<const std::int32_t> ids);

template <typename T>
Var reshape(Tape<T>& tape, Var a, std::size_t rows, std::size_t cols);

template <typename T>
Var concat_rows(Tape<T>& tape, std::span<const Var> parts);

template <typename T>
Var slice_rows(Tape<T>& tape, Var a, std::size_t begin, std::size_t count);

/// Per-row normalization (biased variance) followed by gain and offset rows.
template <typename T>
Var layer_norm(Tape<T>& tape, Var x, Var gain, Var offset, T eps = T(1e-12));

/// Exact (erf) GELU.
template <typename T>
Var gelu(Tape<T>& tape, Var x);

/// Inverted dropout; identity when rate == 0 or rng is null.
template <typename T>
Var dropout(Tape<T>& tape, Var x, double rate, Rng* rng);

/// Multi-head scaled dot-product self-attention. `qkv` is n x 3d holding
/// [Q | K | V]. Rows are grouped into consecutive blocks of `block` rows that
/// attend only within themselves. Keys with valid[k] == 0 get -inf logits.
/// Returns n x d (heads concatenated, no output projection).
template <typename T>
Var self_attention(Tape<T>& tape, Var qkv, std::size_t heads, std::size_t block,
                   std::span<const std::uint8_t> valid);

/// Attention probabilities for one block/head, as used by self_attention:
/// probs[q * block + k]. Exposed for invariant tests.
template <typename T>
std::vector<T> attention_probs(const Tensor<T>& qkv, std::size_t heads, std::size_t block,
                               std::span<const std::uint8_t> valid, std::size_t block_index, std::size_t head);

/// Time-aware sinusoidal position rows. `tpos` is 1 x 3 = (w_p, w_t, b);
/// row r encodes TPos = w_p * positions[r] + w_t * times[r] + b, element j is
/// sin(TPos / 10000^(2j/dim)) for even j and cos(...) for odd j.
template <typename T>
Var time_position(Tape<T>& tape, Var tpos, std::span<const T> positions, std::span<const T> times, std::size_t dim);

/// Scalar reference for one element of the time-aware position embedding.
double time_position_element(double tpos, std::size_t j, std::size_t dim);

/// sum_r weights[r] * (-log softmax(logits[r])[targets[r]]), as 1 x 1. Rows
/// with zero weight are skipped entirely, so their logits get exactly zero
/// gradient.
template <typename T>
Var softmax_cross_entropy(Tape<T>& tape, Var logits, std::span<const int> targets, std::span<const T> weights);

/// Single-row convenience: -log softmax(logits)[target]. Throws on an out of
/// range target or fewer than two classes.
double softmax_cross_entropy(std::span<const double> logits, int target);

/// sum_r BCE(sigmoid(logits[r]), labels[r]) for an n x 1 logit column.
template <typename T>
Var bce_with_logits(Tape<T>& tape, Var logits, std::span<const T> labels);

template <typename T>
void softmax_inplace(std::span<T> row);

}  // namespace fata::nn
