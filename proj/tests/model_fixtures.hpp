#pragma once

// Small models and random token documents shared by the model, decoding and
// training tests.

#include "docmem/model.hpp"
#include "docmem/ops.hpp"
#include "gradcheck.hpp"

#include <random>
#include <vector>

namespace docmem::testing {

inline ModelConfig tiny_config(MemorySide side = MemorySide::both, std::uint64_t seed = 7) {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ffn = 24;
  c.vocab_size = 30;
  c.max_sentence_len = 32;
  c.dropout = 0.0;
  c.mem_size = 4;
  c.mem_side = side;
  c.zero_init_output_proj = false;
  c.seed = seed;
  return c;
}

// bos w... eos with content ids drawn from [4, vocab).
inline std::vector<int> random_sentence(int content, int vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> word(4, vocab - 1);
  std::vector<int> s{kBosId};
  for (int i = 0; i < content; ++i) s.push_back(word(rng));
  s.push_back(kEosId);
  return s;
}

struct TokenPair {
  std::vector<int> src;
  std::vector<int> tgt;
};

inline std::vector<TokenPair> random_document(int sentences, int vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> len(2, 6);
  std::vector<TokenPair> doc;
  for (int i = 0; i < sentences; ++i) {
    TokenPair p{random_sentence(len(rng), vocab, rng), random_sentence(len(rng), vocab, rng)};
    doc.push_back(std::move(p));
  }
  return doc;
}

template <typename Scalar>
struct SentenceForward {
  EncoderOutput<Scalar> enc;
  DecoderOutput<Scalar> dec;
  Tensor<Scalar> loss;
};

// Teacher-forced pass over one pair: decoder input tgt[:-1], target tgt[1:].
template <typename Scalar>
SentenceForward<Scalar> forward_pair(const Model<Scalar>& model, const TokenPair& p, DocumentMemory<Scalar>* mem,
                                     int step) {
  ForwardOptions o;
  o.step = mem ? step : -1;
  SentenceForward<Scalar> r;
  r.enc = encoder_forward(model, std::span<const int>(p.src), mem, o);
  std::vector<int> in(p.tgt.begin(), p.tgt.end() - 1);
  std::vector<int> out(p.tgt.begin() + 1, p.tgt.end());
  r.dec = decoder_forward(model, std::span<const int>(in), r.enc.states, mem, o);
  r.loss = cross_entropy(r.dec.logits, out, 0.0);
  return r;
}

// Runs a whole document, returning every sentence's forward results.
template <typename Scalar>
std::vector<SentenceForward<Scalar>> forward_document(const Model<Scalar>& model, const std::vector<TokenPair>& doc) {
  const bool recurrent = model.config().mem_side != MemorySide::none;
  DocumentMemory<Scalar> mem;
  if (recurrent) mem = reset_document_memory(model);
  std::vector<SentenceForward<Scalar>> out;
  for (std::size_t t = 0; t < doc.size(); ++t) {
    auto r = forward_pair(model, doc[t], recurrent ? &mem : nullptr, static_cast<int>(t));
    if (recurrent) {
      ForwardOptions o;
      o.step = static_cast<int>(t);
      mem = advance_document_memory(model, mem, r.enc.memory_inputs, r.dec.memory_inputs, o);
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace docmem::testing
