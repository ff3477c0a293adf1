#pragma once

#include "docmem/tensor.hpp"

#include <optional>
#include <random>
#include <span>
#include <vector>

namespace docmem {

// Differentiable free functions over rank-2 tensors. Every function records a
// backward rule when gradient recording is on and an input needs a gradient.

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

// a * b^T, the attention-score product.
template <typename Scalar>
Tensor<Scalar> matmul_transposed(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& a);

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> cwise_product(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor);

// a + row, with `row` (1 x cols) broadcast over every row of `a`.
template <typename Scalar>
Tensor<Scalar> add_row(const Tensor<Scalar>& a, const Tensor<Scalar>& row);

// a + c for a constant matrix c (attention masks, positional tables).
template <typename Scalar>
Tensor<Scalar> add_constant(const Tensor<Scalar>& a, const Matrix<Scalar>& c);

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& a);

// axis 0 normalizes columns, axis 1 normalizes rows. -inf entries get exactly
// zero probability.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, int axis = 1);

inline constexpr double kLayerNormEps = 1e-5;

// Normalizes every row, then applies gamma * x_hat + beta (both 1 x cols).
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                          const Tensor<Scalar>& beta, double eps = kLayerNormEps);

// Row lookup: out[i] = table[ids[i]].
template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& table, std::span<const int> ids);

template <typename Scalar>
Tensor<Scalar> slice_cols(const Tensor<Scalar>& a, Index start, Index count);

template <typename Scalar>
Tensor<Scalar> slice_rows(const Tensor<Scalar>& a, Index start, Index count);

template <typename Scalar>
Tensor<Scalar> concat_cols(const std::vector<Tensor<Scalar>>& parts);

template <typename Scalar>
Tensor<Scalar> concat_rows(const std::vector<Tensor<Scalar>>& parts);

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a);

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a);

// Inverted dropout; identity when rate == 0.
template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& a, double rate, std::mt19937_64& rng);

// Mean token cross-entropy of row-wise logits against `targets`, with label
// smoothing spread uniformly over the vocabulary. Targets equal to
// `ignore_id` contribute nothing.
template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& logits, std::span<const int> targets,
                             double smoothing, std::optional<int> ignore_id = std::nullopt);

// Identity with its own tape node, so the link can later be cut with
// Tensor::sever() without touching `a`.
template <typename Scalar>
Tensor<Scalar> passthrough(const Tensor<Scalar>& a);

template <typename Scalar>
Tensor<Scalar> detach(const Tensor<Scalar>& a) {
  return a.detach();
}

// Row-wise log-softmax on plain matrices, used by decoding.
template <typename Scalar>
Matrix<Scalar> log_softmax_rows(const Matrix<Scalar>& x);

}  // namespace docmem
