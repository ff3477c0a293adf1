#include "docmem/memory.hpp"

namespace docmem {

std::string to_string(MemoryStream side) { return side == MemoryStream::encoder ? "encoder" : "decoder"; }

template <typename Scalar>
MemoryParams<Scalar> init_memory_params(const ModelConfig& cfg, std::mt19937_64& rng) {
  MemoryParams<Scalar> p;
  p.initial = Tensor<Scalar>::parameter(normal_matrix<Scalar>(cfg.mem_size, cfg.d_model, 1.0, rng));
  p.update_attn = init_attention<Scalar>(cfg.d_model, rng);
  p.update_norm = init_norm<Scalar>(cfg.d_model);
  p.update_ffn = init_feed_forward<Scalar>(cfg.d_model, cfg.d_ffn, rng);
  p.update_ffn_norm = init_norm<Scalar>(cfg.d_model);
  p.output_attn = init_attention<Scalar>(cfg.d_model, rng, cfg.zero_init_output_proj && !cfg.strict_eq5);
  p.output_norm = init_norm<Scalar>(cfg.d_model);
  return p;
}

template <typename Scalar>
Tensor<Scalar> add_memory_pe(const Tensor<Scalar>& memory) {
  return add_constant(memory, sinusoidal_pe<Scalar>(memory.rows(), memory.cols()));
}

template <typename Scalar>
Tensor<Scalar> update_attention(const Tensor<Scalar>& memory, const SentenceStates<Scalar>& h,
                                const MemoryParams<Scalar>& params, const MemoryOptions& opts,
                                std::vector<Eigen::MatrixXd>* probs) {
  if (h.fully_masked()) throw std::invalid_argument("update_attention: sentence has no unmasked positions");
  AttentionMask mask{h.padding, false, 0};
  AttentionOptions attn{opts.dropout, opts.rng, probs};
  auto mixed = multi_head_attention(memory, h.states, h.states, params.update_attn, opts.n_heads, mask, attn);
  if (opts.rng) mixed = dropout(mixed, opts.dropout, *opts.rng);
  auto staged = norm(memory + mixed, params.update_norm);
  auto ffn = feed_forward(staged, params.update_ffn);
  if (opts.rng) ffn = dropout(ffn, opts.dropout, *opts.rng);
  return norm(staged + ffn, params.update_ffn_norm);
}

template <typename Scalar>
SentenceStates<Scalar> output_attention(const SentenceStates<Scalar>& h, const Tensor<Scalar>& memory,
                                        const MemoryParams<Scalar>& params, const MemoryOptions& opts,
                                        std::vector<Eigen::MatrixXd>* probs) {
  AttentionOptions attn{opts.dropout, opts.rng, probs};
  auto read = multi_head_attention(h.states, memory, memory, params.output_attn, opts.n_heads, {}, attn);
  SentenceStates<Scalar> out{Tensor<Scalar>{}, h.padding, h.step};
  if (opts.strict_eq5) {
    out.states = read;
    return out;
  }
  if (opts.rng) read = dropout(read, opts.dropout, *opts.rng);
  out.states = norm(h.states + read, params.output_norm);
  return out;
}

template <typename Scalar>
MemoryState<Scalar> step_memory(const MemoryState<Scalar>& mem, const SentenceStates<Scalar>& h,
                                const MemoryParams<Scalar>& params, const MemoryOptions& opts) {
  if (h.step >= 0 && h.step != mem.step) {
    throw SequencingError("step_memory: memory is at step " + std::to_string(mem.step) +
                          " but the sentence states belong to step " + std::to_string(h.step));
  }
  MemoryState<Scalar> next = mem;
  next.step = mem.step + 1;
  if (opts.truncation == Truncation::one_step) {
    mem.read.sever();
    if (h.fully_masked()) next.memory = mem.memory.detach();
    next.read = passthrough(next.memory);
  }
  if (h.fully_masked()) return next;

  const Tensor<Scalar> input = opts.truncation == Truncation::full ? mem.memory : mem.memory.detach();
  std::vector<Eigen::MatrixXd> probs;
  const Tensor<Scalar> positioned = opts.add_position ? add_memory_pe(input) : input;
  Tensor<Scalar> updated = update_attention(positioned, h, params, opts, opts.sink ? &probs : nullptr);
  if (opts.sink) {
    AttentionRecord rec;
    rec.side = to_string(mem.side);
    rec.layer = mem.layer;
    rec.kind = AttentionKind::update;
    rec.step = mem.step;
    rec.heads = std::move(probs);
    (*opts.sink)(std::move(rec));
  }
  if (opts.truncation == Truncation::immediate) {
    next.memory = updated.detach();
    next.detached = true;
  } else {
    next.memory = std::move(updated);
    next.detached = false;
  }
  next.read = opts.truncation == Truncation::one_step ? passthrough(next.memory) : Tensor<Scalar>{};
  return next;
}

template <typename Scalar>
MemoryState<Scalar> reset_memory(const MemoryParams<Scalar>& params, MemoryStream side, int layer,
                                 Truncation truncation) {
  MemoryState<Scalar> m{params.initial, 0, side, layer, false, {}};
  if (truncation == Truncation::one_step) m.read = passthrough(params.initial);
  return m;
}

#define DOCMEM_INSTANTIATE_MEMORY(S)                                                                           \
  template MemoryParams<S> init_memory_params<S>(const ModelConfig&, std::mt19937_64&);                        \
  template Tensor<S> add_memory_pe(const Tensor<S>&);                                                          \
  template Tensor<S> update_attention(const Tensor<S>&, const SentenceStates<S>&, const MemoryParams<S>&,      \
                                      const MemoryOptions&, std::vector<Eigen::MatrixXd>*);                    \
  template SentenceStates<S> output_attention(const SentenceStates<S>&, const Tensor<S>&,                      \
                                              const MemoryParams<S>&, const MemoryOptions&,                    \
                                              std::vector<Eigen::MatrixXd>*);                                  \
  template MemoryState<S> step_memory(const MemoryState<S>&, const SentenceStates<S>&, const MemoryParams<S>&, \
                                      const MemoryOptions&);                                                   \
  template MemoryState<S> reset_memory(const MemoryParams<S>&, MemoryStream, int, Truncation);

DOCMEM_INSTANTIATE_MEMORY(float)
DOCMEM_INSTANTIATE_MEMORY(double)

#undef DOCMEM_INSTANTIATE_MEMORY

}  // namespace docmem
