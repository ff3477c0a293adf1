#pragma once

#include "docmem/config.hpp"
#include "docmem/layers.hpp"

#include <stdexcept>
#include <vector>

namespace docmem {

enum class MemoryStream { encoder, decoder };

std::string to_string(MemoryStream side);

struct SequencingError : std::logic_error {
  using std::logic_error::logic_error;
};

// Learnable pieces of one memory unit (one side, one layer).
template <typename Scalar>
struct MemoryParams {
  Tensor<Scalar> initial;  // mem_size x d_model
  AttentionWeights<Scalar> update_attn;
  NormWeights<Scalar> update_norm;
  FeedForwardWeights<Scalar> update_ffn;
  NormWeights<Scalar> update_ffn_norm;
  AttentionWeights<Scalar> output_attn;
  NormWeights<Scalar> output_norm;
};

template <typename Scalar>
MemoryParams<Scalar> init_memory_params(const ModelConfig& cfg, std::mt19937_64& rng);

// Memory carried between the sentences of one document.
template <typename Scalar>
struct MemoryState {
  Tensor<Scalar> memory;  // mem_size x d_model
  int step = 0;
  MemoryStream side = MemoryStream::encoder;
  int layer = 0;
  bool detached = false;
  // Under truncation 1, the handle sentence reads go through. It is cut
  // when the memory advances, so a later loss cannot reach this memory's
  // producer by way of the sentence states it shaped.
  Tensor<Scalar> read;

  const Tensor<Scalar>& readable() const { return read.defined() ? read : memory; }
};

// Numeric switches shared by the memory operations.
struct MemoryOptions {
  int n_heads = 1;
  bool strict_eq5 = false;
  Truncation truncation = Truncation::one_step;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;
  const AttentionSink* sink = nullptr;
  bool add_position = true;
};

// M + PE(M): distinguishes memory rows before they query a sentence.
template <typename Scalar>
Tensor<Scalar> add_memory_pe(const Tensor<Scalar>& memory);

// M~ = AddNorm(MHA(M, h, h)); M' = AddNorm(FFN(M~)). Padded positions of h
// are never attended. Throws std::invalid_argument on a fully masked sentence.
template <typename Scalar>
Tensor<Scalar> update_attention(const Tensor<Scalar>& memory, const SentenceStates<Scalar>& h,
                                const MemoryParams<Scalar>& params, const MemoryOptions& opts,
                                std::vector<Eigen::MatrixXd>* probs = nullptr);

// h~ = AddNorm(h + MHA(h, M, M)), or the bare MHA term under strict_eq5.
template <typename Scalar>
SentenceStates<Scalar> output_attention(const SentenceStates<Scalar>& h, const Tensor<Scalar>& memory,
                                        const MemoryParams<Scalar>& params, const MemoryOptions& opts,
                                        std::vector<Eigen::MatrixXd>* probs = nullptr);

// Advances `mem` past sentence `h`. The input memory is detached unless the
// truncation is `full`; under `immediate` the result is detached as well.
// Under truncation 1 the read handle of `mem` is cut, so backward passes for
// losses of step mem.step must run before this call. A fully masked
// sentence leaves the memory values unchanged. Throws SequencingError when
// h.step is known and differs from mem.step.
template <typename Scalar>
MemoryState<Scalar> step_memory(const MemoryState<Scalar>& mem, const SentenceStates<Scalar>& h,
                                const MemoryParams<Scalar>& params, const MemoryOptions& opts);

// Memory at a document boundary: the initial parameter itself, so it
// receives gradients from the first sentences.
template <typename Scalar>
MemoryState<Scalar> reset_memory(const MemoryParams<Scalar>& params, MemoryStream side, int layer,
                                 Truncation truncation = Truncation::one_step);

}  // namespace docmem
