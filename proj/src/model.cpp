#include "docmem/model.hpp"

#include <cmath>

namespace docmem {

namespace {

constexpr std::uint64_t kMemorySeedSalt = 0x9E3779B97F4A7C15ULL;

template <typename Scalar>
void append_attention(std::vector<NamedParameter<Scalar>>& out, const std::string& prefix,
                      const AttentionWeights<Scalar>& w, bool memory) {
  out.push_back({prefix + ".query", w.query, memory});
  out.push_back({prefix + ".key", w.key, memory});
  out.push_back({prefix + ".value", w.value, memory});
  out.push_back({prefix + ".output", w.output, memory});
}

template <typename Scalar>
void append_ffn(std::vector<NamedParameter<Scalar>>& out, const std::string& prefix,
                const FeedForwardWeights<Scalar>& w, bool memory) {
  out.push_back({prefix + ".w_in", w.w_in, memory});
  out.push_back({prefix + ".b_in", w.b_in, memory});
  out.push_back({prefix + ".w_out", w.w_out, memory});
  out.push_back({prefix + ".b_out", w.b_out, memory});
}

template <typename Scalar>
void append_norm(std::vector<NamedParameter<Scalar>>& out, const std::string& prefix, const NormWeights<Scalar>& w,
                 bool memory) {
  out.push_back({prefix + ".gamma", w.gamma, memory});
  out.push_back({prefix + ".beta", w.beta, memory});
}

template <typename Scalar>
void append_memory(std::vector<NamedParameter<Scalar>>& out, const std::string& prefix,
                   const MemoryParams<Scalar>& p) {
  out.push_back({prefix + ".initial", p.initial, true});
  append_attention(out, prefix + ".update_attn", p.update_attn, true);
  append_norm(out, prefix + ".update_norm", p.update_norm, true);
  append_ffn(out, prefix + ".update_ffn", p.update_ffn, true);
  append_norm(out, prefix + ".update_ffn_norm", p.update_ffn_norm, true);
  append_attention(out, prefix + ".output_attn", p.output_attn, true);
  append_norm(out, prefix + ".output_norm", p.output_norm, true);
}

void check_tokens(std::span<const int> tokens, const ModelConfig& cfg) {
  if (tokens.empty()) throw UsageError("forward: empty token sequence");
  if (static_cast<int>(tokens.size()) > cfg.max_sentence_len) {
    throw UsageError("forward: sequence of " + std::to_string(tokens.size()) + " tokens exceeds max_sentence_len " +
                     std::to_string(cfg.max_sentence_len));
  }
  for (int t : tokens) {
    if (t < 0 || t >= cfg.vocab_size) {
      throw VocabularyError("unknown token id " + std::to_string(t) + " (vocabulary size " +
                            std::to_string(cfg.vocab_size) + ")");
    }
  }
}

template <typename Scalar>
Tensor<Scalar> embed(const Model<Scalar>& model, std::span<const int> tokens, const ForwardOptions& opts,
                     Tensor<Scalar>& raw) {
  const auto& cfg = model.config();
  raw = gather_rows(model.embedding, tokens);
  auto x = add_constant(scale(raw, static_cast<Scalar>(std::sqrt(static_cast<double>(cfg.d_model)))),
                        sinusoidal_pe<Scalar>(static_cast<Index>(tokens.size()), cfg.d_model));
  if (opts.rng) x = dropout(x, cfg.dropout, *opts.rng);
  return x;
}

template <typename Scalar>
Tensor<Scalar> add_norm(const Tensor<Scalar>& x, Tensor<Scalar> sub, const NormWeights<Scalar>& w, double rate,
                        const ForwardOptions& opts) {
  if (opts.rng) sub = dropout(sub, rate, *opts.rng);
  return norm(x + sub, w);
}

void emit(const ForwardOptions& opts, const char* side, int layer, AttentionKind kind,
          std::vector<Eigen::MatrixXd>& probs) {
  if (!opts.sink) return;
  AttentionRecord rec;
  rec.side = side;
  rec.layer = layer;
  rec.kind = kind;
  rec.step = opts.step;
  rec.heads = std::move(probs);
  (*opts.sink)(std::move(rec));
  probs.clear();
}

template <typename Scalar>
const MemoryState<Scalar>* find_state(const std::vector<MemoryState<Scalar>>& states, int layer) {
  for (const auto& s : states) {
    if (s.layer == layer) return &s;
  }
  return nullptr;
}

}  // namespace

template <typename Scalar>
Model<Scalar>::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  embedding = Tensor<Scalar>::parameter(
      normal_matrix<Scalar>(cfg_.vocab_size, cfg_.d_model, 1.0 / std::sqrt(static_cast<double>(cfg_.d_model)), rng));
  for (int l = 0; l < cfg_.n_layers; ++l) {
    EncoderLayerWeights<Scalar> layer;
    layer.self_attn = init_attention<Scalar>(cfg_.d_model, rng);
    layer.self_norm = init_norm<Scalar>(cfg_.d_model);
    layer.ffn = init_feed_forward<Scalar>(cfg_.d_model, cfg_.d_ffn, rng);
    layer.ffn_norm = init_norm<Scalar>(cfg_.d_model);
    encoder.push_back(std::move(layer));
  }
  for (int l = 0; l < cfg_.n_layers; ++l) {
    DecoderLayerWeights<Scalar> layer;
    layer.self_attn = init_attention<Scalar>(cfg_.d_model, rng);
    layer.self_norm = init_norm<Scalar>(cfg_.d_model);
    layer.cross_attn = init_attention<Scalar>(cfg_.d_model, rng);
    layer.cross_norm = init_norm<Scalar>(cfg_.d_model);
    layer.ffn = init_feed_forward<Scalar>(cfg_.d_model, cfg_.d_ffn, rng);
    layer.ffn_norm = init_norm<Scalar>(cfg_.d_model);
    decoder.push_back(std::move(layer));
  }
  // Separate stream: the transformer weights do not depend on the memory
  // settings, so a memory model and its baseline share them for one seed.
  std::mt19937_64 mem_rng(cfg_.seed ^ kMemorySeedSalt);
  for (std::size_t i = 0; i < cfg_.memory_layers().size(); ++i) {
    if (cfg_.encoder_memory()) encoder_memory.push_back(init_memory_params<Scalar>(cfg_, mem_rng));
  }
  for (std::size_t i = 0; i < cfg_.memory_layers().size(); ++i) {
    if (cfg_.decoder_memory()) decoder_memory.push_back(init_memory_params<Scalar>(cfg_, mem_rng));
  }
}

template <typename Scalar>
std::vector<NamedParameter<Scalar>> Model<Scalar>::named_parameters() const {
  std::vector<NamedParameter<Scalar>> out;
  out.push_back({"embedding", embedding, false});
  for (std::size_t l = 0; l < encoder.size(); ++l) {
    const std::string p = "encoder." + std::to_string(l);
    append_attention(out, p + ".self_attn", encoder[l].self_attn, false);
    append_norm(out, p + ".self_norm", encoder[l].self_norm, false);
    append_ffn(out, p + ".ffn", encoder[l].ffn, false);
    append_norm(out, p + ".ffn_norm", encoder[l].ffn_norm, false);
  }
  for (std::size_t l = 0; l < decoder.size(); ++l) {
    const std::string p = "decoder." + std::to_string(l);
    append_attention(out, p + ".self_attn", decoder[l].self_attn, false);
    append_norm(out, p + ".self_norm", decoder[l].self_norm, false);
    append_attention(out, p + ".cross_attn", decoder[l].cross_attn, false);
    append_norm(out, p + ".cross_norm", decoder[l].cross_norm, false);
    append_ffn(out, p + ".ffn", decoder[l].ffn, false);
    append_norm(out, p + ".ffn_norm", decoder[l].ffn_norm, false);
  }
  const auto layers = cfg_.memory_layers();
  for (std::size_t i = 0; i < encoder_memory.size(); ++i) {
    append_memory(out, "memory.encoder." + std::to_string(layers[i]), encoder_memory[i]);
  }
  for (std::size_t i = 0; i < decoder_memory.size(); ++i) {
    append_memory(out, "memory.decoder." + std::to_string(layers[i]), decoder_memory[i]);
  }
  return out;
}

template <typename Scalar>
std::size_t Model<Scalar>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : named_parameters()) n += static_cast<std::size_t>(p.tensor.size());
  return n;
}

template <typename Scalar>
const MemoryParams<Scalar>* Model<Scalar>::memory_params(MemoryStream side, int layer) const {
  const auto& params = side == MemoryStream::encoder ? encoder_memory : decoder_memory;
  const auto layers = cfg_.memory_layers();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (layers[i] == layer) return &params[i];
  }
  return nullptr;
}

template <typename To, typename From>
Model<To> cast_model(const Model<From>& model) {
  Model<To> out(model.config());
  auto src = model.named_parameters();
  auto dst = out.named_parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i].tensor.mutable_value() = src[i].tensor.value().template cast<To>();
  }
  return out;
}

template <typename Scalar>
void copy_parameters(const Model<Scalar>& src, Model<Scalar>& dst) {
  auto from = src.named_parameters();
  auto to = dst.named_parameters();
  if (from.size() != to.size()) throw ShapeError("copy_parameters: parameter sets differ");
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i].name != to[i].name || from[i].tensor.rows() != to[i].tensor.rows() ||
        from[i].tensor.cols() != to[i].tensor.cols()) {
      throw ShapeError("copy_parameters: mismatch at " + from[i].name);
    }
    to[i].tensor.mutable_value() = from[i].tensor.value();
  }
}

template <typename Scalar>
Index DocumentMemory<Scalar>::carried_values() const {
  Index n = 0;
  for (const auto& s : encoder) n += s.memory.size();
  for (const auto& s : decoder) n += s.memory.size();
  return n;
}

template <typename Scalar>
MemoryOptions memory_options(const Model<Scalar>& model, const ForwardOptions& opts) {
  const auto& cfg = model.config();
  MemoryOptions m;
  m.n_heads = cfg.n_heads;
  m.strict_eq5 = cfg.strict_eq5;
  m.truncation = cfg.truncation;
  m.dropout = cfg.dropout;
  m.rng = opts.rng;
  m.sink = opts.sink;
  return m;
}

template <typename Scalar>
EncoderOutput<Scalar> encoder_forward(const Model<Scalar>& model, std::span<const int> tokens,
                                      const DocumentMemory<Scalar>* mem, const ForwardOptions& opts,
                                      const std::vector<bool>* padding) {
  const auto& cfg = model.config();
  check_tokens(tokens, cfg);
  EncoderOutput<Scalar> out;
  std::vector<bool> pad;
  if (padding) {
    if (padding->size() != tokens.size()) throw ShapeError("encoder_forward: padding mask length differs from tokens");
    pad = *padding;
  } else {
    pad.resize(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) pad[i] = tokens[i] == kPadId;
  }
  const bool use_memory = mem != nullptr && cfg.encoder_memory();
  const MemoryOptions mopts = memory_options(model, opts);
  std::vector<Eigen::MatrixXd> probs;
  std::vector<Eigen::MatrixXd>* capture = opts.sink ? &probs : nullptr;

  auto x = embed(model, tokens, opts, out.embedded);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& w = model.encoder[static_cast<std::size_t>(l)];
    AttentionMask mask{pad, false, 0};
    auto a = multi_head_attention(x, x, x, w.self_attn, cfg.n_heads, mask, {cfg.dropout, opts.rng, capture});
    emit(opts, "encoder", l, AttentionKind::self, probs);
    x = add_norm(x, a, w.self_norm, cfg.dropout, opts);
    if (use_memory && cfg.is_memory_layer(l)) {
      const auto* state = find_state(mem->encoder, l);
      const auto* params = model.memory_params(MemoryStream::encoder, l);
      if (state == nullptr || params == nullptr) throw UsageError("encoder_forward: memory state missing for layer");
      SentenceStates<Scalar> h{x, pad, opts.step};
      out.memory_inputs.push_back(h);
      x = output_attention(h, state->readable(), *params, mopts, capture).states;
      emit(opts, "encoder", l, AttentionKind::output, probs);
    }
    x = add_norm(x, feed_forward(x, w.ffn), w.ffn_norm, cfg.dropout, opts);
  }
  out.states = SentenceStates<Scalar>{x, std::move(pad), opts.step};
  return out;
}

template <typename Scalar>
DecoderOutput<Scalar> decoder_forward(const Model<Scalar>& model, std::span<const int> tokens,
                                      const SentenceStates<Scalar>& enc, const DocumentMemory<Scalar>* mem,
                                      const ForwardOptions& opts) {
  const auto& cfg = model.config();
  check_tokens(tokens, cfg);
  DecoderOutput<Scalar> out;
  const bool use_memory = mem != nullptr && cfg.decoder_memory();
  const MemoryOptions mopts = memory_options(model, opts);
  std::vector<Eigen::MatrixXd> probs;
  std::vector<Eigen::MatrixXd>* capture = opts.sink ? &probs : nullptr;
  const std::vector<bool> no_padding(tokens.size(), false);

  auto x = embed(model, tokens, opts, out.embedded);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& w = model.decoder[static_cast<std::size_t>(l)];
    AttentionMask causal{{}, true, 0};
    auto a = multi_head_attention(x, x, x, w.self_attn, cfg.n_heads, causal, {cfg.dropout, opts.rng, capture});
    emit(opts, "decoder", l, AttentionKind::self, probs);
    x = add_norm(x, a, w.self_norm, cfg.dropout, opts);
    if (use_memory && cfg.is_memory_layer(l)) {
      const auto* state = find_state(mem->decoder, l);
      const auto* params = model.memory_params(MemoryStream::decoder, l);
      if (state == nullptr || params == nullptr) throw UsageError("decoder_forward: memory state missing for layer");
      SentenceStates<Scalar> h{x, no_padding, opts.step};
      out.memory_inputs.push_back(h);
      x = output_attention(h, state->readable(), *params, mopts, capture).states;
      emit(opts, "decoder", l, AttentionKind::output, probs);
    }
    AttentionMask cross{enc.padding, false, 0};
    auto c = multi_head_attention(x, enc.states, enc.states, w.cross_attn, cfg.n_heads, cross,
                                  {cfg.dropout, opts.rng, capture});
    emit(opts, "decoder", l, AttentionKind::cross, probs);
    x = add_norm(x, c, w.cross_norm, cfg.dropout, opts);
    x = add_norm(x, feed_forward(x, w.ffn), w.ffn_norm, cfg.dropout, opts);
  }
  out.logits = matmul_transposed(x, model.embedding);
  return out;
}

template <typename Scalar>
DocumentMemory<Scalar> reset_document_memory(const Model<Scalar>& model) {
  DocumentMemory<Scalar> mem;
  const auto layers = model.config().memory_layers();
  for (std::size_t i = 0; i < model.encoder_memory.size(); ++i) {
    mem.encoder.push_back(
        reset_memory(model.encoder_memory[i], MemoryStream::encoder, layers[i], model.config().truncation));
  }
  for (std::size_t i = 0; i < model.decoder_memory.size(); ++i) {
    mem.decoder.push_back(
        reset_memory(model.decoder_memory[i], MemoryStream::decoder, layers[i], model.config().truncation));
  }
  return mem;
}

template <typename Scalar>
DocumentMemory<Scalar> advance_document_memory(const Model<Scalar>& model, const DocumentMemory<Scalar>& mem,
                                               const std::vector<SentenceStates<Scalar>>& encoder_inputs,
                                               const std::vector<SentenceStates<Scalar>>& decoder_inputs,
                                               const ForwardOptions& opts) {
  if (encoder_inputs.size() != mem.encoder.size() || decoder_inputs.size() != mem.decoder.size()) {
    throw SequencingError("advance_document_memory: sentence states do not cover every memory layer");
  }
  const MemoryOptions mopts = memory_options(model, opts);
  DocumentMemory<Scalar> next;
  for (std::size_t i = 0; i < mem.encoder.size(); ++i) {
    next.encoder.push_back(step_memory(mem.encoder[i], encoder_inputs[i], model.encoder_memory[i], mopts));
  }
  for (std::size_t i = 0; i < mem.decoder.size(); ++i) {
    next.decoder.push_back(step_memory(mem.decoder[i], decoder_inputs[i], model.decoder_memory[i], mopts));
  }
  return next;
}

#define DOCMEM_INSTANTIATE_MODEL(S)                                                                               \
  template class Model<S>;                                                                                        \
  template struct DocumentMemory<S>;                                                                              \
  template void copy_parameters(const Model<S>&, Model<S>&);                                                      \
  template MemoryOptions memory_options(const Model<S>&, const ForwardOptions&);                                  \
  template EncoderOutput<S> encoder_forward(const Model<S>&, std::span<const int>, const DocumentMemory<S>*,      \
                                            const ForwardOptions&, const std::vector<bool>*);                     \
  template DecoderOutput<S> decoder_forward(const Model<S>&, std::span<const int>, const SentenceStates<S>&,      \
                                            const DocumentMemory<S>*, const ForwardOptions&);                     \
  template DocumentMemory<S> reset_document_memory(const Model<S>&);                                              \
  template DocumentMemory<S> advance_document_memory(const Model<S>&, const DocumentMemory<S>&,                   \
                                                     const std::vector<SentenceStates<S>>&,                       \
                                                     const std::vector<SentenceStates<S>>&, const ForwardOptions&);

DOCMEM_INSTANTIATE_MODEL(float)
DOCMEM_INSTANTIATE_MODEL(double)

template Model<double> cast_model<double, float>(const Model<float>&);
template Model<float> cast_model<float, double>(const Model<double>&);
template Model<float> cast_model<float, float>(const Model<float>&);
template Model<double> cast_model<double, double>(const Model<double>&);

#undef DOCMEM_INSTANTIATE_MODEL

}  // namespace docmem
