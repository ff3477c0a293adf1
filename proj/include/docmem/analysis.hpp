#pragma once

#include "docmem/corpus.hpp"
#include "docmem/model.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace docmem {

// ---------------------------------------------------------------------------
// Attention capture

// A captured attention map with row and column labels. Queries are memory
// rows for update attention and sentence tokens otherwise.
struct LabeledAttention {
  AttentionRecord record;
  std::vector<std::string> query_labels;
  std::vector<std::string> key_labels;
};

// Teacher-forced pass over one document (gold targets, no dropout, no tape)
// that reports every attention map of the requested kinds to `sink`.
template <typename Scalar>
void trace_document(const Model<Scalar>& model, const Document& doc, const Vocab& vocab, const AttentionSink& sink);

// All update/output maps of a document (plus self/cross with `all_kinds`),
// labelled.
template <typename Scalar>
std::vector<LabeledAttention> capture_attention(const Model<Scalar>& model, const Document& doc, const Vocab& vocab,
                                                bool all_kinds = false);

std::string to_json(const LabeledAttention& a);

// One file per record: <side>_l<layer>_<kind>_s<step>.json. Returns the
// files written.
std::vector<std::filesystem::path> export_attention_maps(const std::vector<LabeledAttention>& maps,
                                                         const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Information gain

// Mean Shannon entropy (nats) over every head and query row.
double mean_row_entropy(const AttentionRecord& rec);

struct InformationGain {
  int mem_size = 0;
  double update = 0.0;  // nats
  double output = 0.0;
  double update_entropy_init = 0.0;
  double update_entropy_trained = 0.0;
  double output_entropy_init = 0.0;
  double output_entropy_trained = 0.0;
  std::size_t update_rows = 0;
  std::size_t output_rows = 0;
};

// IG(kind) = mean H(init rows) - mean H(trained rows) over records of that
// kind. Both lists must come from the same documents under the same config.
InformationGain information_gain(const std::vector<AttentionRecord>& trained, const std::vector<AttentionRecord>& init);

// Throws UsageError when the configs differ in anything but the seed.
template <typename Scalar>
InformationGain information_gain(const Model<Scalar>& trained, const Model<Scalar>& init,
                                 const std::vector<Document>& docs, const Vocab& vocab);

std::string to_json(const InformationGain& ig);

// ---------------------------------------------------------------------------
// Gradient attribution

struct AttributionBucket {
  int k = 0;  // sentences [k, k + bucket) before the anchor
  double score = 0.0;
  std::size_t anchors = 0;  // (document, anchor sentence) pairs averaged
};

// Score(k) over a full-document tape (the model is copied into double
// precision with Truncation::full). For every anchor sentence s the
// teacher-forced loss of s is swept back alone; a sentence range contributes
// the L1 norm of the embedding-gradient rows of its distinct non-reserved
// tokens, each row summed over that token's occurrences inside the range.
// Buckets with no anchor are omitted. `max_k` caps the buckets (inclusive).
template <typename Scalar>
std::vector<AttributionBucket> gradient_attribution(const Model<Scalar>& model, const std::vector<Document>& docs,
                                                    const Vocab& vocab, int bucket = 10, int max_k = -1);

std::string attribution_csv(const std::vector<AttributionBucket>& rows);

// ---------------------------------------------------------------------------
// Dependency tracing

struct DependencyTrace {
  std::size_t instances = 0;
  std::size_t hits = 0;
  double rate() const { return instances ? static_cast<double>(hits) / static_cast<double>(instances) : 0.0; }
};

// For each annotated target pronoun at distance >= 1: the memory row the
// predicting decoder position attends to most in output attention (top
// decoder memory layer, head mean) is a hit when it is among the `top` rows
// that attended most to the antecedent marker in the update attention of the
// marker's sentence. top <= 0 means ceil(mem_size / 4).
template <typename Scalar>
DependencyTrace trace_dependencies(const Model<Scalar>& model, const std::vector<Document>& docs, const Vocab& vocab,
                                   int top = 0);

// ---------------------------------------------------------------------------
// Complexity benchmark

enum class BenchVariant { sentence, concat, memory };

std::string to_string(BenchVariant v);

struct ComplexityRow {
  long tokens = 0;  // N
  BenchVariant variant = BenchVariant::sentence;
  std::int64_t peak_values = 0;  // activation high-water mark above the idle level
  double seconds = 0.0;
  double seconds_per_token() const { return tokens ? seconds / static_cast<double>(tokens) : 0.0; }
};

struct BenchOptions {
  int chunk = 100;
  // Timed repetitions; the fastest is kept.
  int repeats = 1;
  std::vector<BenchVariant> variants{BenchVariant::sentence, BenchVariant::concat, BenchVariant::memory};
};

// Dummy-token inference over N target tokens: (a) N/chunk independent chunks
// without memory, (b) one N-token source and target, (c) chunk by chunk with
// memory updates on `base`'s memory settings. Untrained weights from `base`;
// the target tokens are forced, so every variant emits exactly N tokens.
std::vector<ComplexityRow> complexity_benchmark(const ModelConfig& base, const std::vector<long>& token_counts,
                                                const BenchOptions& opts = {});

std::string complexity_csv(const std::vector<ComplexityRow>& rows);

}  // namespace docmem
