#include "docmem/analysis.hpp"

#include "docmem/decoding.hpp"
#include "docmem/ops.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace docmem {

namespace {

using Clock = std::chrono::steady_clock;

std::vector<int> decoder_input(const std::vector<int>& tgt) { return {tgt.begin(), tgt.end() - 1}; }

std::vector<std::string> token_labels(const std::vector<int>& ids, const Vocab& vocab) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(vocab.token(id));
  return out;
}

std::vector<std::string> memory_labels(Index rows) {
  std::vector<std::string> out;
  for (Index i = 0; i < rows; ++i) out.push_back("m" + std::to_string(i));
  return out;
}

double row_entropy(const Eigen::MatrixXd& m, Index r) {
  double h = 0.0;
  for (Index c = 0; c < m.cols(); ++c) {
    const double p = m(r, c);
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

bool same_architecture(ModelConfig a, ModelConfig b) {
  a.seed = b.seed;
  return a == b;
}

}  // namespace

// ---------------------------------------------------------------------------
// Attention capture

template <typename Scalar>
void trace_document(const Model<Scalar>& model, const Document& doc, const Vocab& vocab, const AttentionSink& sink) {
  NoGradGuard no_grad;
  const bool recurrent = model.config().mem_side != MemorySide::none;
  DocumentMemory<Scalar> mem;
  if (recurrent) mem = reset_document_memory(model);
  for (const auto& pair : iterate_document(doc, vocab)) {
    ForwardOptions opts;
    opts.sink = &sink;
    opts.step = pair.index;
    const auto in = decoder_input(pair.tgt);
    const auto enc = encoder_forward(model, std::span<const int>(pair.src), recurrent ? &mem : nullptr, opts);
    const auto dec = decoder_forward(model, std::span<const int>(in), enc.states, recurrent ? &mem : nullptr, opts);
    if (recurrent) mem = advance_document_memory(model, mem, enc.memory_inputs, dec.memory_inputs, opts);
  }
}

template <typename Scalar>
std::vector<LabeledAttention> capture_attention(const Model<Scalar>& model, const Document& doc, const Vocab& vocab,
                                                bool all_kinds) {
  const auto pairs = iterate_document(doc, vocab);
  std::vector<LabeledAttention> out;
  AttentionSink sink = [&](AttentionRecord&& rec) {
    if (!all_kinds && rec.kind != AttentionKind::update && rec.kind != AttentionKind::output) return;
    const auto& pair = pairs.at(static_cast<std::size_t>(rec.step));
    const bool encoder = rec.side == "encoder";
    const auto own = token_labels(encoder ? pair.src : decoder_input(pair.tgt), vocab);
    LabeledAttention a;
    switch (rec.kind) {
      case AttentionKind::self:
        a.query_labels = own;
        a.key_labels = own;
        break;
      case AttentionKind::cross:
        a.query_labels = own;
        a.key_labels = token_labels(pair.src, vocab);
        break;
      case AttentionKind::output:
        a.query_labels = own;
        a.key_labels = memory_labels(rec.heads.front().cols());
        break;
      case AttentionKind::update:
        a.query_labels = memory_labels(rec.heads.front().rows());
        a.key_labels = own;
        break;
    }
    a.record = std::move(rec);
    out.push_back(std::move(a));
  };
  trace_document(model, doc, vocab, sink);
  return out;
}

std::string to_json(const LabeledAttention& a) {
  using nlohmann::json;
  auto rows = [](const Eigen::MatrixXd& m) {
    json r = json::array();
    for (Index i = 0; i < m.rows(); ++i) {
      json row = json::array();
      for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
      r.push_back(std::move(row));
    }
    return r;
  };
  json j;
  j["side"] = a.record.side;
  j["layer"] = a.record.layer;
  j["kind"] = to_string(a.record.kind);
  j["step"] = a.record.step;
  j["queries"] = a.query_labels;
  j["keys"] = a.key_labels;
  json heads = json::array();
  for (const auto& h : a.record.heads) heads.push_back(rows(h));
  j["heads"] = std::move(heads);
  j["mean"] = rows(a.record.head_mean());
  return j.dump();
}

std::vector<std::filesystem::path> export_attention_maps(const std::vector<LabeledAttention>& maps,
                                                         const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  for (const auto& a : maps) {
    const auto name = a.record.side + "_l" + std::to_string(a.record.layer) + "_" + to_string(a.record.kind) + "_s" +
                      std::to_string(a.record.step) + ".json";
    const auto path = out_dir / name;
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << to_json(a) << '\n';
    if (!f) throw std::runtime_error("write failed: " + path.string());
    written.push_back(path);
  }
  return written;
}

// ---------------------------------------------------------------------------
// Information gain

double mean_row_entropy(const AttentionRecord& rec) {
  double total = 0.0;
  std::size_t rows = 0;
  for (const auto& h : rec.heads) {
    for (Index r = 0; r < h.rows(); ++r) total += row_entropy(h, r);
    rows += static_cast<std::size_t>(h.rows());
  }
  return rows ? total / static_cast<double>(rows) : 0.0;
}

InformationGain information_gain(const std::vector<AttentionRecord>& trained,
                                 const std::vector<AttentionRecord>& init) {
  struct Sum {
    double total = 0.0;
    std::size_t rows = 0;
  };
  auto sums = [](const std::vector<AttentionRecord>& recs, AttentionKind kind) {
    Sum s;
    for (const auto& r : recs) {
      if (r.kind != kind) continue;
      for (const auto& h : r.heads) {
        for (Index i = 0; i < h.rows(); ++i) s.total += row_entropy(h, i);
        s.rows += static_cast<std::size_t>(h.rows());
      }
    }
    return s;
  };
  InformationGain ig;
  const auto mean = [](const Sum& s) { return s.rows ? s.total / static_cast<double>(s.rows) : 0.0; };
  for (auto kind : {AttentionKind::update, AttentionKind::output}) {
    const Sum t = sums(trained, kind);
    const Sum i = sums(init, kind);
    if (t.rows != i.rows) {
      throw UsageError("information_gain: " + to_string(kind) + " attention rows differ (" + std::to_string(t.rows) +
                       " vs " + std::to_string(i.rows) + ")");
    }
    if (kind == AttentionKind::update) {
      ig.update_entropy_trained = mean(t);
      ig.update_entropy_init = mean(i);
      ig.update = ig.update_entropy_init - ig.update_entropy_trained;
      ig.update_rows = t.rows;
    } else {
      ig.output_entropy_trained = mean(t);
      ig.output_entropy_init = mean(i);
      ig.output = ig.output_entropy_init - ig.output_entropy_trained;
      ig.output_rows = t.rows;
    }
  }
  return ig;
}

template <typename Scalar>
InformationGain information_gain(const Model<Scalar>& trained, const Model<Scalar>& init,
                                 const std::vector<Document>& docs, const Vocab& vocab) {
  if (!same_architecture(trained.config(), init.config())) {
    throw UsageError("information_gain: trained and initial models have different configs");
  }
  auto collect = [&](const Model<Scalar>& m) {
    std::vector<AttentionRecord> recs;
    AttentionSink sink = [&](AttentionRecord&& r) {
      if (r.kind == AttentionKind::update || r.kind == AttentionKind::output) recs.push_back(std::move(r));
    };
    for (const auto& d : docs) trace_document(m, d, vocab, sink);
    return recs;
  };
  auto ig = information_gain(collect(trained), collect(init));
  ig.mem_size = trained.config().mem_size;
  return ig;
}

std::string to_json(const InformationGain& ig) {
  nlohmann::json j;
  j["mem_size"] = ig.mem_size;
  j["update"] = {{"ig", ig.update},
                 {"entropy_init", ig.update_entropy_init},
                 {"entropy_trained", ig.update_entropy_trained},
                 {"rows", ig.update_rows}};
  j["output"] = {{"ig", ig.output},
                 {"entropy_init", ig.output_entropy_init},
                 {"entropy_trained", ig.output_entropy_trained},
                 {"rows", ig.output_rows}};
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Gradient attribution

template <typename Scalar>
std::vector<AttributionBucket> gradient_attribution(const Model<Scalar>& model, const std::vector<Document>& docs,
                                                    const Vocab& vocab, int bucket, int max_k) {
  if (bucket < 1) throw UsageError("gradient_attribution: bucket must be >= 1");
  ModelConfig cfg = model.config();
  cfg.truncation = Truncation::full;
  Model<double> m(cfg);
  {
    auto from = model.named_parameters();
    auto to = m.named_parameters();
    for (std::size_t i = 0; i < from.size(); ++i) to[i].tensor.mutable_value() = from[i].tensor.value().template cast<double>();
  }
  const bool recurrent = cfg.mem_side != MemorySide::none;

  std::map<int, std::pair<double, std::size_t>> acc;
  for (const auto& doc : docs) {
    const auto pairs = iterate_document(doc, vocab);
    struct Sentence {
      std::vector<int> src;
      std::vector<int> dec_in;
      Tensor<double> src_embedded;
      Tensor<double> dec_embedded;
      Tensor<double> loss;
    };
    std::vector<Sentence> sents;
    DocumentMemory<double> mem;
    if (recurrent) mem = reset_document_memory(m);
    try {
      for (const auto& pair : pairs) {
        ForwardOptions opts;
        opts.step = recurrent ? pair.index : -1;
        Sentence s{pair.src, decoder_input(pair.tgt), {}, {}, {}};
        const std::vector<int> out(pair.tgt.begin() + 1, pair.tgt.end());
        auto enc = encoder_forward(m, std::span<const int>(s.src), recurrent ? &mem : nullptr, opts);
        auto dec = decoder_forward(m, std::span<const int>(s.dec_in), enc.states, recurrent ? &mem : nullptr, opts);
        s.loss = cross_entropy(dec.logits, std::span<const int>(out), 0.0);
        s.src_embedded = enc.embedded;
        s.dec_embedded = dec.embedded;
        if (recurrent) mem = advance_document_memory(m, mem, enc.memory_inputs, dec.memory_inputs, opts);
        sents.push_back(std::move(s));
      }
    } catch (const std::bad_alloc&) {
      throw std::runtime_error("gradient_attribution: out of memory holding a full-document tape for '" + doc.id +
                               "'; use shorter documents");
    }

    for (std::size_t s = 0; s < sents.size(); ++s) {
      for (std::size_t i = 0; i <= s; ++i) {
        sents[i].src_embedded.zero_grad();
        sents[i].dec_embedded.zero_grad();
      }
      sents[s].loss.backward();
      const int anchor = static_cast<int>(s);
      for (int k = 0; k <= anchor && (max_k < 0 || k <= max_k); k += bucket) {
        const int hi = anchor - k;
        const int lo = std::max(0, anchor - k - bucket + 1);
        std::map<int, Eigen::RowVectorXd> rows;
        auto add = [&](const std::vector<int>& ids, const Tensor<double>& embedded) {
          if (!embedded.has_grad()) return;
          const auto& g = embedded.node()->grad;
          for (std::size_t p = 0; p < ids.size(); ++p) {
            if (Vocab::reserved(ids[p])) continue;
            auto [it, fresh] = rows.try_emplace(ids[p], Eigen::RowVectorXd::Zero(g.cols()));
            it->second += g.row(static_cast<Index>(p));
          }
        };
        for (int i = lo; i <= hi; ++i) {
          add(sents[static_cast<std::size_t>(i)].src, sents[static_cast<std::size_t>(i)].src_embedded);
          add(sents[static_cast<std::size_t>(i)].dec_in, sents[static_cast<std::size_t>(i)].dec_embedded);
        }
        double g = 0.0;
        for (const auto& [id, row] : rows) g += row.cwiseAbs().sum();
        auto& [sum, n] = acc[k];
        sum += g;
        ++n;
      }
    }
  }
  std::vector<AttributionBucket> out;
  for (const auto& [k, v] : acc) out.push_back({k, v.first / static_cast<double>(v.second), v.second});
  return out;
}

std::string attribution_csv(const std::vector<AttributionBucket>& rows) {
  std::ostringstream os;
  os.precision(10);
  os << "k,score,anchors\n";
  for (const auto& r : rows) os << r.k << ',' << r.score << ',' << r.anchors << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Dependency tracing

template <typename Scalar>
DependencyTrace trace_dependencies(const Model<Scalar>& model, const std::vector<Document>& docs, const Vocab& vocab,
                                   int top) {
  const auto& cfg = model.config();
  if (!cfg.decoder_memory()) throw UsageError("trace_dependencies: the model has no target-side memory");
  const auto layers = cfg.memory_layers();
  const int layer = *std::max_element(layers.begin(), layers.end());
  if (top <= 0) top = std::max(1, (cfg.mem_size + 3) / 4);
  top = std::min(top, cfg.mem_size);

  DependencyTrace out;
  for (const auto& doc : docs) {
    std::map<int, Eigen::MatrixXd> update, output;
    AttentionSink sink = [&](AttentionRecord&& r) {
      if (r.side != "decoder" || r.layer != layer) return;
      if (r.kind == AttentionKind::update) update[r.step] = r.head_mean();
      if (r.kind == AttentionKind::output) output[r.step] = r.head_mean();
    };
    trace_document(model, doc, vocab, sink);
    for (const auto& ann : doc.annotations) {
      if (ann.distance < 1) continue;
      const int t = ann.sentence - ann.distance;
      const auto words = split_tokens(doc.tgt[static_cast<std::size_t>(t)]);
      int marker = -1;
      for (std::size_t p = 0; p < words.size(); ++p) {
        if (words[p] == EntityCarryTokens::target_marker_a || words[p] == EntityCarryTokens::target_marker_b) {
          marker = static_cast<int>(p);
        }
      }
      if (marker < 0 || !update.count(t) || !output.count(ann.sentence)) continue;
      // Decoder input is bos + words, so word p sits at position p + 1 and is
      // predicted from position p.
      const Eigen::VectorXd col = update[t].col(marker + 1);
      std::vector<int> order(static_cast<std::size_t>(col.size()));
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return col(a) > col(b); });
      Index best = 0;
      output[ann.sentence].row(ann.token).maxCoeff(&best);
      ++out.instances;
      if (std::find(order.begin(), order.begin() + top, static_cast<int>(best)) != order.begin() + top) ++out.hits;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Complexity benchmark

std::string to_string(BenchVariant v) {
  switch (v) {
    case BenchVariant::sentence: return "sentence";
    case BenchVariant::concat: return "concat";
    case BenchVariant::memory: return "memory";
  }
  return "sentence";
}

namespace {

std::vector<int> dummy_tokens(long n, int vocab, long offset) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n));
  const long span = std::max(1, vocab - 4);
  for (long i = 0; i < n; ++i) out.push_back(4 + static_cast<int>(((offset + i) * 7) % span));
  return out;
}

std::vector<int> wrapped(const std::vector<int>& body) {
  std::vector<int> s{kBosId};
  s.insert(s.end(), body.begin(), body.end());
  s.push_back(kEosId);
  return s;
}

// Encodes `body` and feeds bos + body to the incremental decoder: one
// next-token distribution per body token plus the closing eos. Decoder states
// for the memory update come out of the same cache.
struct ForcedPass {
  EncoderOutput<float> enc;
  std::vector<SentenceStates<float>> dec_states;
};

ForcedPass forced_decode(const Model<float>& model, const std::vector<int>& body, const DocumentMemory<float>* mem,
                         const ForwardOptions& opts) {
  const auto src = wrapped(body);
  ForcedPass out;
  out.enc = encoder_forward(model, std::span<const int>(src), mem, opts);
  IncrementalDecoder<float> dec(model, out.enc.states, mem);
  auto cache = dec.start();
  dec.step(cache, kBosId);
  for (int next : body) dec.step(cache, next);
  if (mem != nullptr) out.dec_states = cache.memory_inputs(opts.step);
  return out;
}

void run_variant(const Model<float>& model, BenchVariant v, long n, int chunk) {
  NoGradGuard no_grad;
  const int vocab = model.config().vocab_size;
  if (v == BenchVariant::concat) {
    forced_decode(model, dummy_tokens(n, vocab, 0), nullptr, {});
    return;
  }
  const bool recurrent = v == BenchVariant::memory && model.config().mem_side != MemorySide::none;
  DocumentMemory<float> mem;
  if (recurrent) mem = reset_document_memory(model);
  int step = 0;
  for (long first = 0; first < n; first += chunk, ++step) {
    const auto body = dummy_tokens(std::min<long>(chunk, n - first), vocab, first);
    ForwardOptions opts;
    opts.step = recurrent ? step : -1;
    auto pass = forced_decode(model, body, recurrent ? &mem : nullptr, opts);
    if (recurrent) mem = advance_document_memory(model, mem, pass.enc.memory_inputs, pass.dec_states, opts);
  }
}

}  // namespace

std::vector<ComplexityRow> complexity_benchmark(const ModelConfig& base, const std::vector<long>& token_counts,
                                                const BenchOptions& opts) {
  if (opts.chunk < 1) throw UsageError("complexity_benchmark: chunk must be >= 1");
  std::vector<ComplexityRow> rows;
  for (long n : token_counts) {
    if (n <= 0) throw UsageError("complexity_benchmark: token counts must be positive");
  }
  for (long n : token_counts) {
    std::vector<ModelConfig> configs;
    std::vector<ComplexityRow> at_n;
    for (auto v : opts.variants) {
      ModelConfig cfg = base;
      cfg.dropout = 0.0;
      if (v != BenchVariant::memory) cfg.mem_side = MemorySide::none;
      cfg.max_sentence_len = static_cast<int>(v == BenchVariant::concat ? n + 2 : std::min<long>(opts.chunk, n) + 2);
      configs.push_back(cfg);
      at_n.push_back(ComplexityRow{n, v, 0, std::numeric_limits<double>::infinity()});
    }
    // Repeats go round-robin over the variants so slow phases of the machine
    // hit every variant alike. Each repeat builds a fresh model: heap placement
    // of the weights alone moves timings by tens of percent.
    for (int r = 0; r < std::max(1, opts.repeats); ++r) {
      for (std::size_t i = 0; i < at_n.size(); ++i) {
        const Model<float> model(configs[i]);
        const auto idle = ActivationCounter::reset();
        const auto t0 = Clock::now();
        run_variant(model, at_n[i].variant, n, opts.chunk);
        const double sec = std::chrono::duration<double>(Clock::now() - t0).count();
        at_n[i].peak_values = std::max(at_n[i].peak_values, ActivationCounter::peak() - idle);
        at_n[i].seconds = std::min(at_n[i].seconds, sec);
      }
    }
    rows.insert(rows.end(), at_n.begin(), at_n.end());
  }
  return rows;
}

std::string complexity_csv(const std::vector<ComplexityRow>& rows) {
  std::ostringstream os;
  os.precision(10);
  os << "tokens,variant,peak_values,seconds,seconds_per_token\n";
  for (const auto& r : rows) {
    os << r.tokens << ',' << to_string(r.variant) << ',' << r.peak_values << ',' << r.seconds << ','
       << r.seconds_per_token() << '\n';
  }
  return os.str();
}

#define DOCMEM_INSTANTIATE_ANALYSIS(S)                                                                           \
  template void trace_document(const Model<S>&, const Document&, const Vocab&, const AttentionSink&);           \
  template std::vector<LabeledAttention> capture_attention(const Model<S>&, const Document&, const Vocab&, bool); \
  template InformationGain information_gain(const Model<S>&, const Model<S>&, const std::vector<Document>&,      \
                                            const Vocab&);                                                       \
  template std::vector<AttributionBucket> gradient_attribution(const Model<S>&, const std::vector<Document>&,    \
                                                               const Vocab&, int, int);                          \
  template DependencyTrace trace_dependencies(const Model<S>&, const std::vector<Document>&, const Vocab&, int);

DOCMEM_INSTANTIATE_ANALYSIS(float)
DOCMEM_INSTANTIATE_ANALYSIS(double)

#undef DOCMEM_INSTANTIATE_ANALYSIS

}  // namespace docmem
