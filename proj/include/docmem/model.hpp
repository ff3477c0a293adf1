#pragma once

#include "docmem/config.hpp"
#include "docmem/layers.hpp"
#include "docmem/memory.hpp"

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace docmem {

struct VocabularyError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

template <typename Scalar>
struct EncoderLayerWeights {
  AttentionWeights<Scalar> self_attn;
  NormWeights<Scalar> self_norm;
  FeedForwardWeights<Scalar> ffn;
  NormWeights<Scalar> ffn_norm;
};

template <typename Scalar>
struct DecoderLayerWeights {
  AttentionWeights<Scalar> self_attn;
  NormWeights<Scalar> self_norm;
  AttentionWeights<Scalar> cross_attn;
  NormWeights<Scalar> cross_norm;
  FeedForwardWeights<Scalar> ffn;
  NormWeights<Scalar> ffn_norm;
};

template <typename Scalar>
struct NamedParameter {
  std::string name;
  Tensor<Scalar> tensor;
  // Part of the memory mechanism (the "newly initialized" group).
  bool memory = false;
};

// Encoder-decoder transformer with one shared embedding table (source,
// target and output projection) and optional memory units on selected
// layers of either side.
template <typename Scalar>
class Model {
 public:
  explicit Model(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }

  // Deterministic order; every parameter appears exactly once.
  std::vector<NamedParameter<Scalar>> named_parameters() const;
  std::size_t parameter_count() const;

  // Memory params for `layer`, or nullptr when that layer carries none.
  const MemoryParams<Scalar>* memory_params(MemoryStream side, int layer) const;

  Tensor<Scalar> embedding;  // vocab_size x d_model
  std::vector<EncoderLayerWeights<Scalar>> encoder;
  std::vector<DecoderLayerWeights<Scalar>> decoder;
  // Aligned with config().memory_layers(); empty on a disabled side.
  std::vector<MemoryParams<Scalar>> encoder_memory;
  std::vector<MemoryParams<Scalar>> decoder_memory;

 private:
  ModelConfig cfg_;
};

// Copies every parameter into a model of another scalar type.
template <typename To, typename From>
Model<To> cast_model(const Model<From>& model);

// Copies parameter values (not tape state) from `src` into `dst`; configs
// must produce the same parameter set.
template <typename Scalar>
void copy_parameters(const Model<Scalar>& src, Model<Scalar>& dst);

template <typename Scalar>
struct DocumentMemory {
  std::vector<MemoryState<Scalar>> encoder;
  std::vector<MemoryState<Scalar>> decoder;

  // Values carried between sentences.
  Index carried_values() const;
};

struct ForwardOptions {
  // Non-null switches dropout on (training mode).
  std::mt19937_64* rng = nullptr;
  const AttentionSink* sink = nullptr;
  // Sentence index stamped on produced states and attention records.
  int step = -1;
};

template <typename Scalar>
struct EncoderOutput {
  SentenceStates<Scalar> states;
  // Self-attention states at each memory layer (inputs of the memory update).
  std::vector<SentenceStates<Scalar>> memory_inputs;
  // Raw embedding rows before scaling; gradient-attribution anchor.
  Tensor<Scalar> embedded;
};

template <typename Scalar>
struct DecoderOutput {
  Tensor<Scalar> logits;  // len x vocab_size
  std::vector<SentenceStates<Scalar>> memory_inputs;
  Tensor<Scalar> embedded;
};

// Padding defaults to `tokens == pad`. When `mem` is null or the encoder side
// has no memory the path is the plain transformer encoder.
template <typename Scalar>
EncoderOutput<Scalar> encoder_forward(const Model<Scalar>& model, std::span<const int> tokens,
                                      const DocumentMemory<Scalar>* mem = nullptr, const ForwardOptions& opts = {},
                                      const std::vector<bool>* padding = nullptr);

template <typename Scalar>
DecoderOutput<Scalar> decoder_forward(const Model<Scalar>& model, std::span<const int> tokens,
                                      const SentenceStates<Scalar>& enc, const DocumentMemory<Scalar>* mem = nullptr,
                                      const ForwardOptions& opts = {});

template <typename Scalar>
DocumentMemory<Scalar> reset_document_memory(const Model<Scalar>& model);

// Runs step_memory on every memory-bearing layer of both sides.
template <typename Scalar>
DocumentMemory<Scalar> advance_document_memory(const Model<Scalar>& model, const DocumentMemory<Scalar>& mem,
                                               const std::vector<SentenceStates<Scalar>>& encoder_inputs,
                                               const std::vector<SentenceStates<Scalar>>& decoder_inputs,
                                               const ForwardOptions& opts = {});

template <typename Scalar>
MemoryOptions memory_options(const Model<Scalar>& model, const ForwardOptions& opts);

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;

}  // namespace docmem
