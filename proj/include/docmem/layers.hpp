#pragma once

#include "docmem/ops.hpp"

#include <functional>
#include <random>
#include <string>
#include <vector>

namespace docmem {

// Projection set of one multi-head attention block. Each matrix is
// d_model x d_model; head i owns columns [i*d_h, (i+1)*d_h) of the query, key
// and value projections and rows [i*d_h, (i+1)*d_h) of the output projection.
template <typename Scalar>
struct AttentionWeights {
  Tensor<Scalar> query;
  Tensor<Scalar> key;
  Tensor<Scalar> value;
  Tensor<Scalar> output;
};

template <typename Scalar>
struct FeedForwardWeights {
  Tensor<Scalar> w_in;   // d_model x d_ffn
  Tensor<Scalar> b_in;   // 1 x d_ffn
  Tensor<Scalar> w_out;  // d_ffn x d_model
  Tensor<Scalar> b_out;  // 1 x d_model
};

template <typename Scalar>
struct NormWeights {
  Tensor<Scalar> gamma;
  Tensor<Scalar> beta;
};

// States of one sentence at some layer, with per-position padding flags.
template <typename Scalar>
struct SentenceStates {
  Tensor<Scalar> states;
  std::vector<bool> padding;
  // Sentence index within its document, -1 when unknown.
  int step = -1;

  Index length() const { return states.rows(); }
  bool fully_masked() const;
};

enum class AttentionKind { self, cross, update, output };

std::string to_string(AttentionKind kind);

// One attention map captured during a forward pass. `heads` holds one
// queries x keys probability matrix per head.
struct AttentionRecord {
  std::string side;  // "encoder" or "decoder"
  int layer = 0;
  AttentionKind kind = AttentionKind::self;
  int step = 0;
  std::vector<Eigen::MatrixXd> heads;

  Eigen::MatrixXd head_mean() const;
};

using AttentionSink = std::function<void(AttentionRecord&&)>;

struct AttentionMask {
  std::vector<bool> key_padding;  // empty = no padding
  bool causal = false;
  // Absolute position of the first query, for causal masking of a suffix.
  Index query_offset = 0;
};

// Per-call switches. A null rng means evaluation mode (no dropout).
struct AttentionOptions {
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;
  // When set, receives one probability matrix per head.
  std::vector<Eigen::MatrixXd>* probs = nullptr;
};

// Additive mask (0 or -inf), queries x keys. Throws ShapeError when the
// padding vector does not match the key count.
template <typename Scalar>
Matrix<Scalar> attention_bias(Index queries, Index keys, const AttentionMask& mask);

// PE[p, 2i] = sin(p / 10000^(2i/d)), PE[p, 2i+1] = cos(p / 10000^(2i/d)).
template <typename Scalar>
Matrix<Scalar> sinusoidal_pe(Index length, Index d_model);

// Scaled dot-product attention over already projected Q, K, V, split into
// `n_heads` column blocks, concatenated and sent through `output`.
template <typename Scalar>
Tensor<Scalar> attend(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                      const Tensor<Scalar>& output, int n_heads, const AttentionMask& mask,
                      const AttentionOptions& opts = {});

template <typename Scalar>
Tensor<Scalar> multi_head_attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                                    const AttentionWeights<Scalar>& w, int n_heads, const AttentionMask& mask = {},
                                    const AttentionOptions& opts = {});

template <typename Scalar>
Tensor<Scalar> feed_forward(const Tensor<Scalar>& x, const FeedForwardWeights<Scalar>& w);

template <typename Scalar>
Tensor<Scalar> norm(const Tensor<Scalar>& x, const NormWeights<Scalar>& w) {
  return layer_norm(x, w.gamma, w.beta);
}

// Parameter factories. All draws come from `rng` in a fixed order.
template <typename Scalar>
AttentionWeights<Scalar> init_attention(int d_model, std::mt19937_64& rng, bool zero_output = false);

template <typename Scalar>
FeedForwardWeights<Scalar> init_feed_forward(int d_model, int d_ffn, std::mt19937_64& rng);

template <typename Scalar>
NormWeights<Scalar> init_norm(int d_model);

template <typename Scalar>
Matrix<Scalar> xavier_uniform(Index rows, Index cols, std::mt19937_64& rng);

template <typename Scalar>
Matrix<Scalar> normal_matrix(Index rows, Index cols, double stddev, std::mt19937_64& rng);

}  // namespace docmem
