#include "docmem/decoding.hpp"

#include "docmem/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

namespace docmem {

double BeamHypothesis::score(double alpha) const {
  const double len = std::max<double>(1.0, static_cast<double>(tokens.size()));
  return logprob / std::pow(len, alpha);
}

int default_max_len(std::size_t src_tokens) { return 2 * static_cast<int>(src_tokens) + 8; }

namespace {

int content_length(std::span<const int> src) {
  int n = 0;
  for (int t : src) n += (t != kBosId && t != kEosId && t != kPadId);
  return n;
}

template <typename Scalar>
RowVector<Scalar> layer_norm_row(const RowVector<Scalar>& x, const NormWeights<Scalar>& w) {
  const Scalar mu = x.mean();
  const Scalar var = (x.array() - mu).square().mean();
  const Scalar inv = Scalar(1) / std::sqrt(var + static_cast<Scalar>(kLayerNormEps));
  RowVector<Scalar> out = ((x.array() - mu) * inv).matrix();
  return (out.array() * w.gamma.value().row(0).array()).matrix() + w.beta.value().row(0);
}

// Single-query multi-head attention over projected keys and values.
template <typename Scalar>
RowVector<Scalar> attend_row(const RowVector<Scalar>& q, const Matrix<Scalar>& keys, const Matrix<Scalar>& values,
                             const Tensor<Scalar>& output, int n_heads, const std::vector<bool>* padding) {
  const Index d = q.cols();
  const Index dh = d / n_heads;
  const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  RowVector<Scalar> mixed(d);
  for (int h = 0; h < n_heads; ++h) {
    RowVector<Scalar> scores = (q.segment(h * dh, dh) * keys.middleCols(h * dh, dh).transpose()) * inv_sqrt;
    if (padding) {
      for (Index k = 0; k < scores.cols(); ++k) {
        if ((*padding)[static_cast<std::size_t>(k)]) scores(k) = -std::numeric_limits<Scalar>::infinity();
      }
    }
    const Scalar m = scores.maxCoeff();
    RowVector<Scalar> p = (scores.array() - m).exp().matrix();
    p /= p.sum();
    mixed.segment(h * dh, dh) = p * values.middleCols(h * dh, dh);
  }
  return mixed * output.value();
}

template <typename Scalar>
RowVector<Scalar> position_row(Index pos, Index d) {
  RowVector<Scalar> pe(d);
  for (Index i = 0; i < d / 2; ++i) {
    const double angle =
        static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d));
    pe(2 * i) = static_cast<Scalar>(std::sin(angle));
    pe(2 * i + 1) = static_cast<Scalar>(std::cos(angle));
  }
  return pe;
}

template <typename Scalar>
RowVector<Scalar> log_softmax_row(const RowVector<Scalar>& x) {
  const Scalar m = x.maxCoeff();
  const Scalar lse = m + std::log((x.array() - m).exp().sum());
  return (x.array() - lse).matrix();
}

}  // namespace

// ---------------------------------------------------------------------------
// DecoderCache

template <typename Scalar>
DecoderCache<Scalar>::DecoderCache(int layers)
    : keys_(static_cast<std::size_t>(layers)), values_(static_cast<std::size_t>(layers)),
      states_(static_cast<std::size_t>(layers)) {}

template <typename Scalar>
Index DecoderCache<Scalar>::counted() const {
  Index n = 0;
  for (const auto& k : keys_) n += k.size();
  for (const auto& v : values_) n += v.size();
  for (const auto& h : states_) n += h.size();
  return n;
}

template <typename Scalar>
DecoderCache<Scalar>::DecoderCache(const DecoderCache& other)
    : keys_(other.keys_), values_(other.values_), states_(other.states_), length_(other.length_) {
  ActivationCounter::add(counted());
}

template <typename Scalar>
DecoderCache<Scalar>& DecoderCache<Scalar>::operator=(const DecoderCache& other) {
  if (this == &other) return *this;
  ActivationCounter::release(counted());
  keys_ = other.keys_;
  values_ = other.values_;
  states_ = other.states_;
  length_ = other.length_;
  ActivationCounter::add(counted());
  return *this;
}

template <typename Scalar>
DecoderCache<Scalar>::DecoderCache(DecoderCache&& other) noexcept
    : keys_(std::move(other.keys_)),
      values_(std::move(other.values_)),
      states_(std::move(other.states_)),
      length_(other.length_) {
  other.keys_.clear();
  other.values_.clear();
  other.states_.clear();
  other.length_ = 0;
}

template <typename Scalar>
DecoderCache<Scalar>& DecoderCache<Scalar>::operator=(DecoderCache&& other) noexcept {
  if (this == &other) return *this;
  ActivationCounter::release(counted());
  keys_ = std::move(other.keys_);
  values_ = std::move(other.values_);
  states_ = std::move(other.states_);
  length_ = other.length_;
  other.keys_.clear();
  other.values_.clear();
  other.states_.clear();
  other.length_ = 0;
  return *this;
}

template <typename Scalar>
DecoderCache<Scalar>::~DecoderCache() {
  ActivationCounter::release(counted());
}

template <typename Scalar>
void DecoderCache<Scalar>::append(int layer, const RowVector<Scalar>& key, const RowVector<Scalar>& value) {
  auto& k = keys_[static_cast<std::size_t>(layer)];
  auto& v = values_[static_cast<std::size_t>(layer)];
  if (k.rows() != length_) throw SequencingError("DecoderCache: layer appended twice at one position");
  k.conservativeResize(length_ + 1, key.cols());
  v.conservativeResize(length_ + 1, value.cols());
  k.row(length_) = key;
  v.row(length_) = value;
  ActivationCounter::add(key.size() + value.size());
}

template <typename Scalar>
void DecoderCache<Scalar>::record_state(int layer, const RowVector<Scalar>& state) {
  auto& h = states_[static_cast<std::size_t>(layer)];
  if (h.rows() != length_) throw SequencingError("DecoderCache: state recorded twice at one position");
  h.conservativeResize(length_ + 1, state.cols());
  h.row(length_) = state;
  ActivationCounter::add(state.size());
}

template <typename Scalar>
std::vector<SentenceStates<Scalar>> DecoderCache<Scalar>::memory_inputs(int step) const {
  std::vector<SentenceStates<Scalar>> out;
  for (const auto& h : states_) {
    if (h.rows() == 0) continue;
    if (h.rows() != length_) throw SequencingError("DecoderCache: memory states cover only part of the prefix");
    out.push_back(SentenceStates<Scalar>{Tensor<Scalar>(h), std::vector<bool>(static_cast<std::size_t>(h.rows()), false),
                                         step});
  }
  return out;
}

// ---------------------------------------------------------------------------
// IncrementalDecoder

template <typename Scalar>
IncrementalDecoder<Scalar>::IncrementalDecoder(const Model<Scalar>& model, const SentenceStates<Scalar>& enc,
                                               const DocumentMemory<Scalar>* mem)
    : model_(model) {
  const auto& cfg = model.config();
  const bool use_memory = mem != nullptr && cfg.decoder_memory();
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& w = model.decoder[static_cast<std::size_t>(l)];
    Projected c{enc.states.value() * w.cross_attn.key.value(), enc.states.value() * w.cross_attn.value.value(),
                enc.padding};
    counted_ += c.keys.size() + c.values.size();
    cross_.push_back(std::move(c));
    std::optional<Projected> m;
    if (use_memory && cfg.is_memory_layer(l)) {
      const MemoryState<Scalar>* state = nullptr;
      for (const auto& s : mem->decoder) {
        if (s.layer == l) state = &s;
      }
      const auto* params = model.memory_params(MemoryStream::decoder, l);
      if (state == nullptr || params == nullptr) throw UsageError("IncrementalDecoder: memory state missing for layer");
      m = Projected{state->memory.value() * params->output_attn.key.value(),
                    state->memory.value() * params->output_attn.value.value(),
                    {}};
      counted_ += m->keys.size() + m->values.size();
    }
    memory_.push_back(std::move(m));
  }
  ActivationCounter::add(counted_);
}

template <typename Scalar>
IncrementalDecoder<Scalar>::~IncrementalDecoder() {
  ActivationCounter::release(counted_);
}

template <typename Scalar>
RowVector<Scalar> IncrementalDecoder<Scalar>::step(DecoderCache<Scalar>& cache, int token) const {
  const auto& cfg = model_.config();
  if (token < 0 || token >= cfg.vocab_size) throw VocabularyError("unknown token id " + std::to_string(token));
  const Index pos = cache.length();
  RowVector<Scalar> x = model_.embedding.value().row(token) * static_cast<Scalar>(std::sqrt(static_cast<double>(cfg.d_model)));
  x += position_row<Scalar>(pos, cfg.d_model);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& w = model_.decoder[static_cast<std::size_t>(l)];
    cache.append(l, x * w.self_attn.key.value(), x * w.self_attn.value.value());
    const RowVector<Scalar> q = x * w.self_attn.query.value();
    RowVector<Scalar> a = attend_row<Scalar>(q, cache.keys(l), cache.values(l), w.self_attn.output, cfg.n_heads, nullptr);
    x = layer_norm_row<Scalar>(x + a, w.self_norm);
    if (const auto& m = memory_[static_cast<std::size_t>(l)]) {
      cache.record_state(l, x);
      const auto* params = model_.memory_params(MemoryStream::decoder, l);
      RowVector<Scalar> read = attend_row<Scalar>(x * params->output_attn.query.value(), m->keys, m->values,
                                                  params->output_attn.output, cfg.n_heads, nullptr);
      x = cfg.strict_eq5 ? read : layer_norm_row<Scalar>(x + read, params->output_norm);
    }
    const auto& c = cross_[static_cast<std::size_t>(l)];
    RowVector<Scalar> ca = attend_row<Scalar>(x * w.cross_attn.query.value(), c.keys, c.values, w.cross_attn.output,
                                              cfg.n_heads, &c.padding);
    x = layer_norm_row<Scalar>(x + ca, w.cross_norm);
    RowVector<Scalar> hidden = (x * w.ffn.w_in.value() + w.ffn.b_in.value()).cwiseMax(Scalar(0));
    RowVector<Scalar> f = hidden * w.ffn.w_out.value() + w.ffn.b_out.value();
    x = layer_norm_row<Scalar>(x + f, w.ffn_norm);
  }
  cache.advance();
  return log_softmax_row<Scalar>(x * model_.embedding.value().transpose());
}

// ---------------------------------------------------------------------------
// Search

namespace {

// Greedy search over a prepared decoder; `cache` keeps every fed position.
template <typename Scalar>
std::vector<int> greedy_search(const IncrementalDecoder<Scalar>& dec, DecoderCache<Scalar>& cache, int max_len) {
  std::vector<int> out;
  int token = kBosId;
  while (static_cast<int>(out.size()) < max_len) {
    const RowVector<Scalar> logp = dec.step(cache, token);
    Index best = 0;
    logp.maxCoeff(&best);
    token = static_cast<int>(best);
    out.push_back(token);
    if (token == kEosId) break;
  }
  return out;
}

template <typename Scalar>
BeamHypothesis beam_search(const IncrementalDecoder<Scalar>& dec, int max_len, const DecodeOptions& opts) {
  struct Alive {
    BeamHypothesis hyp;
    DecoderCache<Scalar> cache;
    RowVector<Scalar> next;  // log-probabilities of the following token
  };
  std::vector<Alive> alive(1);
  alive[0].cache = dec.start();
  alive[0].next = dec.step(alive[0].cache, kBosId);
  std::vector<BeamHypothesis> finished;

  for (int len = 1; len <= max_len && !alive.empty(); ++len) {
    struct Candidate {
      double logprob;
      std::size_t parent;
      int token;
    };
    std::vector<Candidate> cand;
    const auto k = static_cast<std::size_t>(opts.beam);
    for (std::size_t i = 0; i < alive.size(); ++i) {
      const auto& row = alive[i].next;
      std::vector<int> ids(static_cast<std::size_t>(row.cols()));
      for (std::size_t j = 0; j < ids.size(); ++j) ids[j] = static_cast<int>(j);
      const std::size_t take = std::min(k, ids.size());
      std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(take), ids.end(), [&](int a, int b) {
        return row(a) > row(b) || (row(a) == row(b) && a < b);
      });
      for (std::size_t j = 0; j < take; ++j) {
        cand.push_back({alive[i].hyp.logprob + static_cast<double>(row(ids[j])), i, ids[j]});
      }
    }
    std::stable_sort(cand.begin(), cand.end(), [](const Candidate& a, const Candidate& b) {
      if (a.logprob != b.logprob) return a.logprob > b.logprob;
      if (a.parent != b.parent) return a.parent < b.parent;
      return a.token < b.token;
    });
    std::vector<Alive> next;
    for (const auto& c : cand) {
      if (next.size() >= k) break;
      BeamHypothesis h = alive[c.parent].hyp;
      h.tokens.push_back(c.token);
      h.logprob = c.logprob;
      if (c.token == kEosId) {
        h.finished = true;
        finished.push_back(std::move(h));
        continue;
      }
      Alive a{std::move(h), alive[c.parent].cache, {}};
      if (len < max_len) a.next = dec.step(a.cache, c.token);
      next.push_back(std::move(a));
    }
    alive = std::move(next);
    if (finished.size() >= k) break;
  }

  const auto better = [&](const BeamHypothesis& a, const BeamHypothesis& b) {
    return a.score(opts.length_penalty) > b.score(opts.length_penalty);
  };
  if (!finished.empty()) return *std::min_element(finished.begin(), finished.end(), better);
  BeamHypothesis best;
  best.logprob = -std::numeric_limits<double>::infinity();
  for (const auto& a : alive) {
    if (best.tokens.empty() || better(a.hyp, best)) best = a.hyp;
  }
  return best;
}

int sentence_max_len(std::span<const int> src, int max_len) {
  return max_len > 0 ? max_len : default_max_len(static_cast<std::size_t>(content_length(src)));
}

}  // namespace

template <typename Scalar>
std::vector<int> greedy_decode(const Model<Scalar>& model, std::span<const int> src, const DocumentMemory<Scalar>* mem,
                               int max_len) {
  NoGradGuard no_grad;
  const auto enc = encoder_forward(model, src, mem);
  IncrementalDecoder<Scalar> dec(model, enc.states, mem);
  auto cache = dec.start();
  return greedy_search(dec, cache, sentence_max_len(src, max_len));
}

template <typename Scalar>
BeamHypothesis beam_search_sentence(const Model<Scalar>& model, std::span<const int> src,
                                    const DocumentMemory<Scalar>* mem, const DecodeOptions& opts) {
  if (opts.beam < 1) throw UsageError("beam_search_sentence: beam must be >= 1");
  NoGradGuard no_grad;
  const auto enc = encoder_forward(model, src, mem);
  IncrementalDecoder<Scalar> dec(model, enc.states, mem);
  return beam_search(dec, sentence_max_len(src, opts.max_len), opts);
}

template <typename Scalar>
std::vector<std::vector<int>> translate_document(const Model<Scalar>& model,
                                                 const std::vector<std::vector<int>>& sources,
                                                 const DecodeOptions& opts, const AttentionSink* sink) {
  NoGradGuard no_grad;
  const auto& cfg = model.config();
  const bool recurrent = cfg.mem_side != MemorySide::none;
  DocumentMemory<Scalar> mem;
  if (recurrent) mem = reset_document_memory(model);
  std::vector<std::vector<int>> out;
  if (opts.beam < 1) throw UsageError("translate_document: beam must be >= 1");
  for (std::size_t t = 0; t < sources.size(); ++t) {
    const std::span<const int> src(sources[t]);
    const DocumentMemory<Scalar>* read = recurrent ? &mem : nullptr;
    ForwardOptions fo;
    fo.step = recurrent ? static_cast<int>(t) : -1;
    fo.sink = sink;
    const auto enc = encoder_forward(model, src, read, fo);
    IncrementalDecoder<Scalar> dec(model, enc.states, read);
    const int max_len = sentence_max_len(src, opts.max_len);
    auto cache = dec.start();
    const auto tokens = opts.beam == 1 ? greedy_search(dec, cache, max_len) : beam_search(dec, max_len, opts).tokens;
    std::vector<int> hyp;
    for (int tok : tokens) {
      if (tok == kEosId) break;
      hyp.push_back(tok);
    }
    out.push_back(hyp);
    if (!recurrent && sink == nullptr) continue;

    // The memory reads the decoder states of bos + hyp. Greedy search already
    // fed all but possibly the last of those tokens.
    std::vector<int> dec_in{kBosId};
    dec_in.insert(dec_in.end(), hyp.begin(), hyp.end());
    if (static_cast<int>(dec_in.size()) > cfg.max_sentence_len) dec_in.resize(static_cast<std::size_t>(cfg.max_sentence_len));
    std::vector<SentenceStates<Scalar>> dec_states;
    if (opts.beam == 1 && sink == nullptr && cache.length() <= static_cast<Index>(dec_in.size())) {
      while (cache.length() < static_cast<Index>(dec_in.size())) dec.step(cache, dec_in[static_cast<std::size_t>(cache.length())]);
      dec_states = cache.memory_inputs(fo.step);
    } else if (cfg.decoder_memory() || sink != nullptr) {
      dec_states = decoder_forward(model, std::span<const int>(dec_in), enc.states, read, fo).memory_inputs;
    }
    if (recurrent) mem = advance_document_memory(model, mem, enc.memory_inputs, dec_states, fo);
  }
  return out;
}

std::vector<Document> translate_corpus(const Model<float>& model, const std::vector<Document>& docs,
                                       const Vocab& vocab, const DecodeOptions& opts, int threads) {
  std::vector<Document> out = docs;
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t i = first; i < out.size(); i += stride) {
      std::vector<std::vector<int>> sources;
      for (const auto& p : iterate_document(out[i], vocab)) sources.push_back(p.src);
      const auto hyps = translate_document(model, sources, opts);
      out[i].hyp.clear();
      for (const auto& h : hyps) out[i].hyp.push_back(vocab.decode(h));
    }
  };
  const auto n = static_cast<std::size_t>(std::max(1, threads));
  if (n == 1) {
    work(0, 1);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(n);
  for (std::size_t k = 0; k < n; ++k) {
    pool.emplace_back([&, k] {
      try {
        work(k, n);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

#define DOCMEM_INSTANTIATE_DECODING(S)                                                                        \
  template class DecoderCache<S>;                                                                             \
  template class IncrementalDecoder<S>;                                                                       \
  template std::vector<int> greedy_decode(const Model<S>&, std::span<const int>, const DocumentMemory<S>*,    \
                                          int);                                                               \
  template BeamHypothesis beam_search_sentence(const Model<S>&, std::span<const int>,                         \
                                               const DocumentMemory<S>*, const DecodeOptions&);               \
  template std::vector<std::vector<int>> translate_document(const Model<S>&,                                  \
                                                            const std::vector<std::vector<int>>&,             \
                                                            const DecodeOptions&, const AttentionSink*);

DOCMEM_INSTANTIATE_DECODING(float)
DOCMEM_INSTANTIATE_DECODING(double)

#undef DOCMEM_INSTANTIATE_DECODING

}  // namespace docmem
