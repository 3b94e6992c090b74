#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "metaprompt/tensor.hpp"

namespace metaprompt::ad {

// Elementary kernels. Each records a graph node when gradients are enabled
// and any input requires a gradient; the backward rule of each is expressed
// with the kernels below, which keeps every derivative differentiable.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

/// op(a) * op(b), where op transposes when the matching flag is set.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false,
              bool transpose_b = false);
Tensor transpose(const Tensor& a);

/// Repeats a 1xC row `rows` times.
Tensor broadcast_rows(const Tensor& row, std::size_t rows);
/// Column sums: RxC -> 1xC.
Tensor sum_rows(const Tensor& a);
/// Repeats an Rx1 column `cols` times.
Tensor broadcast_cols(const Tensor& col, std::size_t cols);
/// Row sums: RxC -> Rx1.
Tensor sum_cols(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor broadcast_scalar(const Tensor& s, std::size_t rows, std::size_t cols);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor pow(const Tensor& a, double exponent);

/// Embedding lookup: row i of the result is table row ids[i].
Tensor gather_rows(const Tensor& table, std::span<const int> ids);
/// Adjoint of gather_rows: accumulates src rows into a zero matrix.
Tensor scatter_rows(const Tensor& src, std::span<const int> ids,
                    std::size_t rows);

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
Tensor pad_rows(const Tensor& a, std::size_t begin, std::size_t total_rows);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
Tensor pad_cols(const Tensor& a, std::size_t begin, std::size_t total_cols);
Tensor concat_rows(std::span<const Tensor> parts);

/// Picks a[i, index[i]] for every row: RxC -> Rx1.
Tensor pick(const Tensor& a, std::span<const int> index);
/// Adjoint of pick: places column values at the given indices of a zero RxC.
Tensor place(const Tensor& col, std::span<const int> index, std::size_t cols);

/// Row maxima, returned as a constant (never part of the graph).
Tensor row_max(const Tensor& a);

// Composite operations, built from the kernels above.

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
/// tanh approximation of GELU, as one kernel whose derivatives (up to third
/// order) are themselves kernels.
Tensor gelu(const Tensor& x);
Tensor softmax_rows(const Tensor& x);

/// Causal scaled dot-product attention for one head. Query row i sits at
/// absolute position query_offset + i and attends to key rows j with
/// j <= query_offset + i.
Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        std::size_t query_offset = 0);

/// Scaled dot-product attention where query row i may attend to key row j
/// only if visible[i * k.rows() + j] is non-zero. Used for several causal
/// sequences packed into one matrix. Every row must see at least one key.
Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        std::span<const std::uint8_t> visible);

/// Mean negative log-likelihood of `targets` under row-wise softmax(logits),
/// computed with log-sum-exp stabilization.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets);

}  // namespace metaprompt::ad
