#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace docmem {

inline constexpr int kBleuOrder = 4;

struct BleuReport {
  double score = 0.0;  // [0, 100]
  std::array<double, kBleuOrder> precisions{};
  std::array<std::size_t, kBleuOrder> matches{};
  std::array<std::size_t, kBleuOrder> totals{};
  double brevity_penalty = 0.0;
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;
};

// Corpus BLEU over aligned whitespace-tokenized segments: clipped n-gram
// counts pooled across segments, max order 4, no smoothing. Throws
// UsageError on an empty corpus or mismatched counts.
BleuReport corpus_bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs);

// Sentence-level corpus BLEU.
BleuReport s_bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs);

// Each document's sentences joined into one segment, so n-grams across
// sentence boundaries count.
BleuReport d_bleu(const std::vector<std::vector<std::string>>& hyp_docs,
                  const std::vector<std::vector<std::string>>& ref_docs);

// Single-segment BLEU with add-one smoothing on orders 2..4.
double smoothed_sentence_bleu(const std::string& hyp, const std::string& ref);

struct IndexBucket {
  int first = 0;  // sentence indices [first, last], 0-based
  int last = 0;
  double mean_bleu = 0.0;
  std::size_t sentences = 0;
};

// Smoothed per-sentence BLEU averaged over every `bucket` sentence indices
// across documents. Empty buckets are omitted.
std::vector<IndexBucket> bleu_by_index(const std::vector<std::vector<std::string>>& hyp_docs,
                                       const std::vector<std::vector<std::string>>& ref_docs, int bucket = 10);

struct EvaluationReport {
  BleuReport sentence;
  BleuReport document;
  std::vector<IndexBucket> by_index;
};

EvaluationReport evaluate_documents(const std::vector<std::vector<std::string>>& hyp_docs,
                                    const std::vector<std::vector<std::string>>& ref_docs, int bucket = 10);

std::string to_json(const BleuReport& report);
std::string to_json(const EvaluationReport& report);
// Aligned columns for terminals.
std::string to_text(const EvaluationReport& report);

}  // namespace docmem
