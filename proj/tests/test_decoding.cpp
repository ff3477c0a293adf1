#include "doctest.h"

#include "docmem/decoding.hpp"
#include "model_fixtures.hpp"

#include <cmath>

using namespace docmem;
using namespace docmem::testing;

namespace {

// Log-probability of `tokens` (no bos) under a full teacher-forced decoder pass.
double sequence_logprob(const Model<double>& m, std::span<const int> src, const DocumentMemory<double>* mem,
                        const std::vector<int>& tokens) {
  NoGradGuard off;
  const auto enc = encoder_forward(m, src, mem);
  std::vector<int> in{kBosId};
  in.insert(in.end(), tokens.begin(), tokens.end() - 1);
  const auto logits = decoder_forward(m, std::span<const int>(in), enc.states, mem).logits.value();
  const Matrix<double> lp = log_softmax_rows<double>(logits);
  double total = 0.0;
  for (std::size_t i = 0; i < tokens.size(); ++i) total += lp(static_cast<Index>(i), tokens[i]);
  return total;
}

DocumentMemory<double> advanced_memory(const Model<double>& m, std::mt19937_64& rng, int steps) {
  NoGradGuard off;
  auto mem = reset_document_memory(m);
  for (int t = 0; t < steps; ++t) {
    const auto p = random_document(1, m.config().vocab_size, rng)[0];
    auto r = forward_pair(m, p, &mem, t);
    ForwardOptions o;
    o.step = t;
    mem = advance_document_memory(m, mem, r.enc.memory_inputs, r.dec.memory_inputs, o);
  }
  return mem;
}

}  // namespace

TEST_CASE("incremental decoder reproduces the full decoder pass") {
  std::mt19937_64 rng(1);
  for (bool strict : {false, true}) {
    for (auto side : {MemorySide::none, MemorySide::target, MemorySide::both}) {
      auto cfg = tiny_config(side);
      cfg.strict_eq5 = strict;
      cfg.mem_layers = {0, 1};
      Model<double> m(cfg);
      const auto mem = advanced_memory(m, rng, side == MemorySide::none ? 0 : 2);
      const auto* mp = side == MemorySide::none ? nullptr : &mem;
      const auto src = random_sentence(5, 30, rng);
      const auto tgt = random_sentence(6, 30, rng);
      NoGradGuard off;
      const auto enc = encoder_forward(m, std::span<const int>(src), mp);
      const auto full = log_softmax_rows<double>(
          decoder_forward(m, std::span<const int>(tgt), enc.states, mp).logits.value());
      IncrementalDecoder<double> dec(m, enc.states, mp);
      auto cache = dec.start();
      for (std::size_t i = 0; i < tgt.size(); ++i) {
        const auto row = dec.step(cache, tgt[i]);
        CHECK((row - full.row(static_cast<Index>(i))).cwiseAbs().maxCoeff() < 1e-10);
      }
    }
  }
}

TEST_CASE("decoder cache keeps the memory-layer inputs of the full pass") {
  std::mt19937_64 rng(3);
  auto cfg = tiny_config(MemorySide::both);
  cfg.mem_layers = {0, 1};
  Model<double> m(cfg);
  const auto mem = advanced_memory(m, rng, 2);
  const auto src = random_sentence(4, 30, rng);
  const auto tgt = random_sentence(5, 30, rng);
  NoGradGuard off;
  const auto enc = encoder_forward(m, std::span<const int>(src), &mem);
  ForwardOptions o;
  o.step = 2;
  const auto full = decoder_forward(m, std::span<const int>(tgt), enc.states, &mem, o).memory_inputs;
  IncrementalDecoder<double> dec(m, enc.states, &mem);
  auto cache = dec.start();
  for (std::size_t i = 0; i < 3; ++i) dec.step(cache, tgt[i]);
  for (std::size_t i = 3; i < tgt.size(); ++i) dec.step(cache, tgt[i]);
  const auto cached = cache.memory_inputs(2);
  REQUIRE(cached.size() == full.size());
  REQUIRE(cached.size() == 2);
  for (std::size_t l = 0; l < full.size(); ++l) {
    CHECK(cached[l].step == 2);
    CHECK(cached[l].padding == full[l].padding);
    CHECK((cached[l].states.value() - full[l].states.value()).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("beam of one is greedy search") {
  std::mt19937_64 rng(2);
  Model<float> m(tiny_config(MemorySide::both));
  for (int trial = 0; trial < 10; ++trial) {
    const auto src = random_sentence(4, 30, rng);
    DecodeOptions o;
    o.beam = 1;
    o.max_len = 12;
    const auto greedy = greedy_decode<float>(m, std::span<const int>(src), nullptr, 12);
    const auto beam = beam_search_sentence<float>(m, std::span<const int>(src), nullptr, o);
    CHECK(beam.tokens == greedy);
  }
}

TEST_CASE("wide beam finds the best finished sequence by exhaustive search") {
  std::mt19937_64 rng(3);
  auto cfg = tiny_config(MemorySide::none);
  cfg.vocab_size = 8;
  Model<double> m(cfg);
  const auto src = random_sentence(3, 8, rng);
  DecodeOptions o;
  o.beam = 64;
  o.max_len = 2;
  o.length_penalty = 0.6;
  const auto best = beam_search_sentence<double>(m, std::span<const int>(src), nullptr, o);
  // Every finished sequence of length <= 2: [eos] and [a, eos].
  double oracle = -1e300;
  std::vector<int> oracle_tokens;
  for (int a = -1; a < cfg.vocab_size; ++a) {
    if (a == kEosId) continue;
    std::vector<int> seq = a < 0 ? std::vector<int>{kEosId} : std::vector<int>{a, kEosId};
    const double lp = sequence_logprob(m, std::span<const int>(src), nullptr, seq);
    const double score = lp / std::pow(static_cast<double>(seq.size()), 0.6);
    if (score > oracle) {
      oracle = score;
      oracle_tokens = seq;
    }
  }
  CHECK(best.finished);
  CHECK(best.tokens == oracle_tokens);
  CHECK(best.score(0.6) == doctest::Approx(oracle).epsilon(1e-9));
}

TEST_CASE("beam search logprob is the sum of the chosen steps") {
  std::mt19937_64 rng(4);
  Model<double> m(tiny_config(MemorySide::both));
  const auto mem = advanced_memory(m, rng, 1);
  const auto src = random_sentence(5, 30, rng);
  DecodeOptions o;
  o.beam = 4;
  o.max_len = 10;
  const auto best = beam_search_sentence(m, std::span<const int>(src), &mem, o);
  REQUIRE_FALSE(best.tokens.empty());
  CHECK(best.logprob == doctest::Approx(sequence_logprob(m, std::span<const int>(src), &mem, best.tokens)));
  CHECK(best.tokens.size() <= 10);
  CHECK_THROWS_AS(beam_search_sentence(m, std::span<const int>(src), &mem, DecodeOptions{0, 0.6, 0}), UsageError);
}

TEST_CASE("document translation: one sentence equals sentence decoding from the initial memory") {
  std::mt19937_64 rng(5);
  Model<float> m(tiny_config(MemorySide::both));
  const auto src = random_sentence(4, 30, rng);
  DecodeOptions o;
  o.beam = 3;
  o.max_len = 9;
  const auto doc = translate_document(m, {src}, o);
  const auto mem = reset_document_memory(m);
  auto direct = beam_search_sentence(m, std::span<const int>(src), &mem, o).tokens;
  if (!direct.empty() && direct.back() == kEosId) direct.pop_back();
  REQUIRE(doc.size() == 1);
  CHECK(doc[0] == direct);
}

TEST_CASE("document translation: earlier sentences ignore later ones, later ones see earlier ones") {
  std::mt19937_64 rng(6);
  Model<float> m(tiny_config(MemorySide::both));
  std::vector<std::vector<int>> sources;
  for (int i = 0; i < 5; ++i) sources.push_back(random_sentence(4, 30, rng));
  DecodeOptions o;
  o.beam = 2;
  o.max_len = 8;
  const auto a = translate_document(m, sources, o);
  auto changed = sources;
  changed[3] = random_sentence(6, 30, rng);
  const auto b = translate_document(m, changed, o);
  for (int i = 0; i < 3; ++i) CHECK(a[static_cast<std::size_t>(i)] == b[static_cast<std::size_t>(i)]);
}

TEST_CASE("decoding releases every cached activation") {
  std::mt19937_64 rng(7);
  Model<float> m(tiny_config(MemorySide::both));
  std::vector<std::vector<int>> sources;
  for (int i = 0; i < 3; ++i) sources.push_back(random_sentence(5, 30, rng));
  const auto before = ActivationCounter::live();
  translate_document(m, sources, DecodeOptions{});
  CHECK(ActivationCounter::live() == before);
}

TEST_CASE("corpus translation is the same on one thread or several") {
  EntityCarrySpec spec;
  spec.n_docs = 5;
  spec.sentences_per_doc = IntChoices::range(3, 6);
  spec.antecedent_distance = IntChoices::range(1, 2);
  spec.content_words = 8;
  const auto corpus = generate_entity_carry_corpus(spec);
  auto cfg = tiny_config(MemorySide::both);
  cfg.vocab_size = static_cast<int>(corpus.vocab.size());
  Model<float> m(cfg);
  DecodeOptions o;
  o.beam = 2;
  const auto one = translate_corpus(m, corpus.documents, corpus.vocab, o, 1);
  const auto many = translate_corpus(m, corpus.documents, corpus.vocab, o, 3);
  REQUIRE(one.size() == many.size());
  for (std::size_t i = 0; i < one.size(); ++i) {
    CHECK(one[i].hyp == many[i].hyp);
    CHECK(one[i].hyp.size() == one[i].src.size());
  }
}

TEST_CASE("default length cap") {
  CHECK(default_max_len(0) == 8);
  CHECK(default_max_len(10) == 28);
}
