#include "docmem/evaluation.hpp"

#include "docmem/corpus.hpp"
#include "docmem/tensor.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace docmem {

namespace {

using Ngrams = std::map<std::vector<std::string>, std::size_t>;

Ngrams count_ngrams(const std::vector<std::string>& toks, int n) {
  Ngrams out;
  if (static_cast<int>(toks.size()) < n) return out;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= toks.size(); ++i) {
    ++out[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                   toks.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  }
  return out;
}

void accumulate(const std::vector<std::string>& hyp, const std::vector<std::string>& ref, BleuReport& r) {
  r.hyp_length += hyp.size();
  r.ref_length += ref.size();
  for (int n = 1; n <= kBleuOrder; ++n) {
    const auto h = count_ngrams(hyp, n);
    const auto g = count_ngrams(ref, n);
    for (const auto& [gram, c] : h) {
      auto it = g.find(gram);
      if (it != g.end()) r.matches[n - 1] += std::min(c, it->second);
    }
    if (hyp.size() >= static_cast<std::size_t>(n)) r.totals[n - 1] += hyp.size() - static_cast<std::size_t>(n) + 1;
  }
}

double brevity(std::size_t c, std::size_t r) {
  if (c == 0) return 0.0;
  return c < r ? std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c)) : 1.0;
}

void finalize(BleuReport& r) {
  r.brevity_penalty = brevity(r.hyp_length, r.ref_length);
  double log_sum = 0.0;
  bool zero = false;
  for (int n = 0; n < kBleuOrder; ++n) {
    r.precisions[n] = r.totals[n] ? static_cast<double>(r.matches[n]) / static_cast<double>(r.totals[n]) : 0.0;
    if (r.precisions[n] == 0.0) {
      zero = true;
    } else {
      log_sum += std::log(r.precisions[n]);
    }
  }
  r.score = zero ? 0.0 : 100.0 * r.brevity_penalty * std::exp(log_sum / kBleuOrder);
}

std::string join(const std::vector<std::string>& sentences) {
  std::string out;
  for (const auto& s : sentences) {
    if (!out.empty() && !s.empty()) out += ' ';
    out += s;
  }
  return out;
}

void check_docs(const std::vector<std::vector<std::string>>& hyp_docs,
                const std::vector<std::vector<std::string>>& ref_docs) {
  if (hyp_docs.size() != ref_docs.size()) {
    throw UsageError("hypothesis and reference corpora differ in document count (" + std::to_string(hyp_docs.size()) +
                     " vs " + std::to_string(ref_docs.size()) + ")");
  }
  for (std::size_t i = 0; i < hyp_docs.size(); ++i) {
    if (hyp_docs[i].size() != ref_docs[i].size()) {
      throw UsageError("document " + std::to_string(i) + ": hypothesis has " + std::to_string(hyp_docs[i].size()) +
                       " sentences, reference has " + std::to_string(ref_docs[i].size()));
    }
  }
}

}  // namespace

BleuReport corpus_bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  if (hyps.empty()) throw UsageError("BLEU: empty corpus");
  if (hyps.size() != refs.size()) {
    throw UsageError("BLEU: " + std::to_string(hyps.size()) + " hypotheses but " + std::to_string(refs.size()) +
                     " references");
  }
  BleuReport r;
  for (std::size_t i = 0; i < hyps.size(); ++i) accumulate(split_tokens(hyps[i]), split_tokens(refs[i]), r);
  finalize(r);
  return r;
}

BleuReport s_bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  return corpus_bleu(hyps, refs);
}

BleuReport d_bleu(const std::vector<std::vector<std::string>>& hyp_docs,
                  const std::vector<std::vector<std::string>>& ref_docs) {
  check_docs(hyp_docs, ref_docs);
  std::vector<std::string> hyps, refs;
  for (std::size_t i = 0; i < hyp_docs.size(); ++i) {
    hyps.push_back(join(hyp_docs[i]));
    refs.push_back(join(ref_docs[i]));
  }
  return corpus_bleu(hyps, refs);
}

double smoothed_sentence_bleu(const std::string& hyp, const std::string& ref) {
  BleuReport r;
  accumulate(split_tokens(hyp), split_tokens(ref), r);
  if (r.matches[0] == 0) return 0.0;
  double log_sum = std::log(static_cast<double>(r.matches[0]) / static_cast<double>(r.totals[0]));
  for (int n = 1; n < kBleuOrder; ++n) {
    log_sum += std::log((static_cast<double>(r.matches[n]) + 1.0) / (static_cast<double>(r.totals[n]) + 1.0));
  }
  return 100.0 * brevity(r.hyp_length, r.ref_length) * std::exp(log_sum / kBleuOrder);
}

std::vector<IndexBucket> bleu_by_index(const std::vector<std::vector<std::string>>& hyp_docs,
                                       const std::vector<std::vector<std::string>>& ref_docs, int bucket) {
  if (bucket < 1) throw UsageError("bleu_by_index: bucket must be >= 1");
  check_docs(hyp_docs, ref_docs);
  std::map<int, std::pair<double, std::size_t>> sums;
  for (std::size_t d = 0; d < hyp_docs.size(); ++d) {
    for (std::size_t s = 0; s < hyp_docs[d].size(); ++s) {
      auto& [total, count] = sums[static_cast<int>(s) / bucket];
      total += smoothed_sentence_bleu(hyp_docs[d][s], ref_docs[d][s]);
      ++count;
    }
  }
  std::vector<IndexBucket> out;
  for (const auto& [b, tc] : sums) {
    out.push_back({b * bucket, b * bucket + bucket - 1, tc.first / static_cast<double>(tc.second), tc.second});
  }
  return out;
}

EvaluationReport evaluate_documents(const std::vector<std::vector<std::string>>& hyp_docs,
                                    const std::vector<std::vector<std::string>>& ref_docs, int bucket) {
  check_docs(hyp_docs, ref_docs);
  EvaluationReport r;
  std::vector<std::string> hyps, refs;
  for (std::size_t i = 0; i < hyp_docs.size(); ++i) {
    hyps.insert(hyps.end(), hyp_docs[i].begin(), hyp_docs[i].end());
    refs.insert(refs.end(), ref_docs[i].begin(), ref_docs[i].end());
  }
  r.sentence = s_bleu(hyps, refs);
  r.document = d_bleu(hyp_docs, ref_docs);
  r.by_index = bleu_by_index(hyp_docs, ref_docs, bucket);
  return r;
}

namespace {

nlohmann::json bleu_json(const BleuReport& r) {
  return {{"score", r.score},
          {"precisions", r.precisions},
          {"matches", r.matches},
          {"totals", r.totals},
          {"brevity_penalty", r.brevity_penalty},
          {"hyp_length", r.hyp_length},
          {"ref_length", r.ref_length}};
}

}  // namespace

std::string to_json(const BleuReport& report) { return bleu_json(report).dump(2); }

std::string to_json(const EvaluationReport& report) {
  nlohmann::json j;
  j["s_bleu"] = bleu_json(report.sentence);
  j["d_bleu"] = bleu_json(report.document);
  nlohmann::json buckets = nlohmann::json::array();
  for (const auto& b : report.by_index) {
    buckets.push_back({{"first", b.first}, {"last", b.last}, {"mean_bleu", b.mean_bleu}, {"sentences", b.sentences}});
  }
  j["bleu_by_index"] = buckets;
  return j.dump(2);
}

std::string to_text(const EvaluationReport& report) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "s-BLEU %6.2f  (BP %.4f, hyp %zu, ref %zu)\n", report.sentence.score,
                report.sentence.brevity_penalty, report.sentence.hyp_length, report.sentence.ref_length);
  out << line;
  std::snprintf(line, sizeof line, "d-BLEU %6.2f  (BP %.4f, hyp %zu, ref %zu)\n", report.document.score,
                report.document.brevity_penalty, report.document.hyp_length, report.document.ref_length);
  out << line;
  if (!report.by_index.empty()) {
    out << "\nindex range   sentences   mean BLEU\n";
    for (const auto& b : report.by_index) {
      std::snprintf(line, sizeof line, "%5d-%-5d   %9zu   %9.2f\n", b.first, b.last, b.sentences, b.mean_bleu);
      out << line;
    }
  }
  return out.str();
}

}  // namespace docmem
