#pragma once

#include "docmem/corpus.hpp"
#include "docmem/model.hpp"

#include <vector>

namespace docmem {

struct DecodeOptions {
  int beam = 5;
  // Score = logprob / len^alpha.
  double length_penalty = 0.6;
  // 0 = 2 * len(src) + 8, with len(src) excluding bos/eos.
  int max_len = 0;
};

struct BeamHypothesis {
  std::vector<int> tokens;  // generated tokens, no bos; ends with eos when finished
  double logprob = 0.0;
  bool finished = false;

  double score(double alpha) const;
};

// Key/value rows of the decoder self-attention, one pair per layer, counted
// as live activations while they exist.
template <typename Scalar>
class DecoderCache {
 public:
  DecoderCache() = default;
  explicit DecoderCache(int layers);
  DecoderCache(const DecoderCache& other);
  DecoderCache& operator=(const DecoderCache& other);
  DecoderCache(DecoderCache&& other) noexcept;
  DecoderCache& operator=(DecoderCache&& other) noexcept;
  ~DecoderCache();

  Index length() const { return length_; }
  // Appends one key and one value row to `layer`.
  void append(int layer, const RowVector<Scalar>& key, const RowVector<Scalar>& value);
  // Marks the position complete once every layer has appended.
  void advance() { ++length_; }
  const Matrix<Scalar>& keys(int layer) const { return keys_[static_cast<std::size_t>(layer)]; }
  const Matrix<Scalar>& values(int layer) const { return values_[static_cast<std::size_t>(layer)]; }
  // Decoder states entering each memory layer, one row per fed token.
  void record_state(int layer, const RowVector<Scalar>& state);
  // The fed prefix as memory-update input, ordered like decoder_forward's.
  std::vector<SentenceStates<Scalar>> memory_inputs(int step) const;

 private:
  Index counted() const;
  std::vector<Matrix<Scalar>> keys_;
  std::vector<Matrix<Scalar>> values_;
  std::vector<Matrix<Scalar>> states_;
  Index length_ = 0;
};

// One-token-at-a-time decoder over a fixed encoding and fixed memories.
// Cross-attention and memory keys/values are projected once.
template <typename Scalar>
class IncrementalDecoder {
 public:
  IncrementalDecoder(const Model<Scalar>& model, const SentenceStates<Scalar>& enc,
                     const DocumentMemory<Scalar>* mem = nullptr);
  IncrementalDecoder(const IncrementalDecoder&) = delete;
  IncrementalDecoder& operator=(const IncrementalDecoder&) = delete;
  ~IncrementalDecoder();

  DecoderCache<Scalar> start() const { return DecoderCache<Scalar>(model_.config().n_layers); }
  // Feeds `token` at position cache.length(); returns log-probabilities of
  // the next token.
  RowVector<Scalar> step(DecoderCache<Scalar>& cache, int token) const;

 private:
  struct Projected {
    Matrix<Scalar> keys;
    Matrix<Scalar> values;
    std::vector<bool> padding;
  };
  const Model<Scalar>& model_;
  std::vector<Projected> cross_;
  std::vector<std::optional<Projected>> memory_;
  Index counted_ = 0;
};

template <typename Scalar>
std::vector<int> greedy_decode(const Model<Scalar>& model, std::span<const int> src,
                               const DocumentMemory<Scalar>* mem = nullptr, int max_len = 0);

// Highest-scoring hypothesis; unfinished hypotheses compete only when none
// finished within max_len.
template <typename Scalar>
BeamHypothesis beam_search_sentence(const Model<Scalar>& model, std::span<const int> src,
                                    const DocumentMemory<Scalar>* mem, const DecodeOptions& opts);

// Sentence-by-sentence translation. Memories start at their initial value,
// stay frozen while a sentence is decoded, and then advance once: the
// encoder side from the encoder states of x_t, the decoder side from a
// forward pass over [bos] + y_hat_t. Returned sentences exclude bos/eos.
template <typename Scalar>
std::vector<std::vector<int>> translate_document(const Model<Scalar>& model,
                                                 const std::vector<std::vector<int>>& sources,
                                                 const DecodeOptions& opts, const AttentionSink* sink = nullptr);

// Corpus documents in, the same documents with `hyp` filled out. With
// threads > 1 documents are decoded concurrently.
std::vector<Document> translate_corpus(const Model<float>& model, const std::vector<Document>& docs,
                                       const Vocab& vocab, const DecodeOptions& opts, int threads = 1);

int default_max_len(std::size_t src_tokens);

}  // namespace docmem
