#include "doctest.h"

#include "docmem/analysis.hpp"
#include "model_fixtures.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>

using namespace docmem;
using namespace docmem::testing;

namespace {

GeneratedCorpus small_corpus(int docs, int lo, int hi, std::uint64_t seed = 3) {
  EntityCarrySpec spec;
  spec.n_docs = docs;
  spec.sentences_per_doc = IntChoices::range(lo, hi);
  spec.antecedent_distance = IntChoices::range(1, 3);
  spec.sentence_length = IntChoices::range(3, 5);
  spec.content_words = 8;
  spec.seed = seed;
  return generate_entity_carry_corpus(spec);
}

ModelConfig corpus_config(const GeneratedCorpus& c, MemorySide side) {
  auto cfg = tiny_config(side);
  cfg.vocab_size = c.vocab.size();
  return cfg;
}

AttentionRecord record(AttentionKind kind, Eigen::MatrixXd m) {
  AttentionRecord r;
  r.kind = kind;
  r.heads.push_back(std::move(m));
  return r;
}

}  // namespace

TEST_CASE("entropy: uniform rows give ln k, one-hot rows give 0") {
  const Eigen::MatrixXd uniform = Eigen::MatrixXd::Constant(3, 5, 0.2);
  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(3, 5);
  onehot(0, 1) = onehot(1, 4) = onehot(2, 0) = 1.0;
  CHECK(mean_row_entropy(record(AttentionKind::update, uniform)) == doctest::Approx(std::log(5.0)));
  CHECK(mean_row_entropy(record(AttentionKind::update, onehot)) == 0.0);
}

TEST_CASE("information gain from records") {
  const Eigen::MatrixXd uniform = Eigen::MatrixXd::Constant(2, 4, 0.25);
  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(2, 4);
  onehot(0, 3) = onehot(1, 2) = 1.0;
  const std::vector<AttentionRecord> init{record(AttentionKind::update, uniform), record(AttentionKind::output, uniform)};
  const std::vector<AttentionRecord> trained{record(AttentionKind::update, onehot), record(AttentionKind::output, uniform)};
  const auto ig = information_gain(trained, init);
  CHECK(ig.update == doctest::Approx(std::log(4.0)));
  CHECK(ig.output == 0.0);
  CHECK(ig.update_rows == 2);
  CHECK_THROWS_AS(information_gain(trained, {record(AttentionKind::update, uniform)}), UsageError);
}

TEST_CASE("information gain between models") {
  const auto c = small_corpus(2, 4, 5);
  const auto cfg = corpus_config(c, MemorySide::both);
  Model<float> trained(cfg);
  const auto same = information_gain(trained, trained, c.documents, c.vocab);
  CHECK(same.update == 0.0);
  CHECK(same.output == 0.0);
  CHECK(same.update_rows > 0);
  CHECK(same.output_rows > 0);
  CHECK(same.mem_size == cfg.mem_size);

  auto other = cfg;
  other.seed = 99;
  Model<float> init(other);
  const auto ig = information_gain(trained, init, c.documents, c.vocab);
  CHECK(std::isfinite(ig.update));
  CHECK(std::isfinite(ig.output));
  CHECK(to_json(ig).find("\"update\"") != std::string::npos);

  other.mem_size = cfg.mem_size + 1;
  Model<float> wider(other);
  CHECK_THROWS_AS(information_gain(trained, wider, c.documents, c.vocab), UsageError);
}

TEST_CASE("captured attention: probability rows, shapes and labels") {
  const auto c = small_corpus(1, 4, 4);
  auto cfg = corpus_config(c, MemorySide::both);
  Model<float> m(cfg);
  const auto& doc = c.documents[0];
  const auto maps = capture_attention(m, doc, c.vocab, true);
  const auto pairs = iterate_document(doc, c.vocab);
  int updates = 0;
  for (const auto& a : maps) {
    REQUIRE_FALSE(a.record.heads.empty());
    CHECK(a.record.heads.size() == static_cast<std::size_t>(cfg.n_heads));
    for (const auto& h : a.record.heads) {
      CHECK(h.rows() == static_cast<Index>(a.query_labels.size()));
      CHECK(h.cols() == static_cast<Index>(a.key_labels.size()));
      CHECK((h.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-5);
      CHECK(h.minCoeff() >= 0.0);
    }
    if (a.record.kind == AttentionKind::update && a.record.side == "encoder") {
      ++updates;
      const auto& src = pairs[static_cast<std::size_t>(a.record.step)].src;
      CHECK(a.record.heads[0].rows() == cfg.mem_size);
      CHECK(a.record.heads[0].cols() == static_cast<Index>(src.size()));
      CHECK(a.key_labels.front() == "<bos>");
    }
  }
  CHECK(updates == static_cast<int>(doc.size()));
}

TEST_CASE("attention export writes one parseable record per file") {
  const auto c = small_corpus(1, 3, 3);
  Model<float> m(corpus_config(c, MemorySide::target));
  const auto maps = capture_attention(m, c.documents[0], c.vocab);
  const auto dir = std::filesystem::temp_directory_path() / "docmem_attn_export_test";
  std::filesystem::remove_all(dir);
  const auto files = export_attention_maps(maps, dir);
  CHECK(files.size() == maps.size());
  // Target side only: one update and one output record per sentence.
  CHECK(files.size() == 2 * c.documents[0].size());
  std::ifstream f(dir / "decoder_l1_update_s0.json");
  REQUIRE(f.good());
  const auto j = nlohmann::json::parse(f);
  CHECK(j["kind"] == "update");
  CHECK(j["queries"].size() == 4);
  CHECK(j["mean"].size() == 4);
  CHECK(j["heads"].size() == 2);
  std::filesystem::remove_all(dir);
}

TEST_CASE("gradient attribution: a memoryless model has no cross-sentence gradient") {
  const auto c = small_corpus(2, 6, 7);
  Model<float> m(corpus_config(c, MemorySide::none));
  const auto rows = gradient_attribution(m, c.documents, c.vocab, 2);
  REQUIRE(rows.size() >= 3);
  CHECK(rows[0].k == 0);
  CHECK(rows[0].score > 0.0);
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].score == 0.0);
}

TEST_CASE("gradient attribution: bucket 0 of width 1 matches isolated sentence gradients") {
  const auto c = small_corpus(2, 3, 4);
  Model<float> m(corpus_config(c, MemorySide::none));
  const auto rows = gradient_attribution(m, c.documents, c.vocab, 1);
  // Oracle: each sentence alone through the test fixture, double precision.
  const auto md = cast_model<double>(m);
  double total = 0.0;
  std::size_t anchors = 0;
  for (const auto& doc : c.documents) {
    for (const auto& p : iterate_document(doc, c.vocab)) {
      auto r = forward_pair<double>(md, TokenPair{p.src, p.tgt}, nullptr, -1);
      r.loss.backward();
      std::map<int, Eigen::RowVectorXd> per_token;
      auto add = [&](const std::vector<int>& ids, const Matrix<double>& g) {
        for (std::size_t i = 0; i < ids.size(); ++i) {
          if (ids[i] < 4) continue;
          auto it = per_token.try_emplace(ids[i], Eigen::RowVectorXd::Zero(g.cols())).first;
          it->second += g.row(static_cast<Index>(i));
        }
      };
      add(p.src, r.enc.embedded.grad());
      add(std::vector<int>(p.tgt.begin(), p.tgt.end() - 1), r.dec.embedded.grad());
      for (const auto& [id, row] : per_token) total += row.cwiseAbs().sum();
      ++anchors;
    }
  }
  REQUIRE_FALSE(rows.empty());
  CHECK(rows[0].anchors == anchors);
  CHECK(rows[0].score == doctest::Approx(total / static_cast<double>(anchors)).epsilon(1e-9));
}

TEST_CASE("gradient attribution: memory reaches every earlier bucket, empty buckets are omitted") {
  const auto c = small_corpus(1, 12, 12);
  Model<float> m(corpus_config(c, MemorySide::both));
  const auto rows = gradient_attribution(m, c.documents, c.vocab, 3);
  REQUIRE(rows.size() == 4);
  for (const auto& r : rows) CHECK(r.score > 0.0);
  CHECK(rows.back().k == 9);
  CHECK(rows.back().anchors == 3);
  const auto capped = gradient_attribution(m, c.documents, c.vocab, 3, 3);
  CHECK(capped.size() == 2);
  CHECK(attribution_csv(rows).rfind("k,score,anchors\n", 0) == 0);
}

TEST_CASE("dependency tracing counts every carried pronoun") {
  const auto c = small_corpus(3, 6, 8);
  Model<float> m(corpus_config(c, MemorySide::both));
  std::size_t carried = 0;
  for (const auto& d : c.documents) {
    for (const auto& a : d.annotations) carried += a.distance >= 1;
  }
  const auto t = trace_dependencies(m, c.documents, c.vocab);
  CHECK(t.instances == carried);
  CHECK(t.hits <= t.instances);
  // With every row allowed, each instance is a hit.
  CHECK(trace_dependencies(m, c.documents, c.vocab, 4).hits == carried);
  Model<float> src_only(corpus_config(c, MemorySide::source));
  CHECK_THROWS_AS(trace_dependencies(src_only, c.documents, c.vocab), UsageError);
}

TEST_CASE("complexity benchmark: flat memory footprint, quadratic concat footprint") {
  auto cfg = tiny_config(MemorySide::both);
  BenchOptions o;
  o.chunk = 20;
  const auto rows = complexity_benchmark(cfg, {80, 160}, o);
  REQUIRE(rows.size() == 6);
  auto find = [&](long n, BenchVariant v) {
    for (const auto& r : rows) {
      if (r.tokens == n && r.variant == v) return r;
    }
    FAIL("missing row");
    return ComplexityRow{};
  };
  const auto mem_small = find(80, BenchVariant::memory);
  const auto mem_large = find(160, BenchVariant::memory);
  CHECK(mem_small.peak_values > 0);
  CHECK(mem_large.peak_values == mem_small.peak_values);
  CHECK(find(160, BenchVariant::sentence).peak_values == find(80, BenchVariant::sentence).peak_values);
  const double ratio = static_cast<double>(find(160, BenchVariant::concat).peak_values) /
                       static_cast<double>(find(80, BenchVariant::concat).peak_values);
  CHECK(ratio > 2.5);
  CHECK(ratio < 4.5);
  for (const auto& r : rows) CHECK(r.seconds > 0.0);
  CHECK(complexity_csv(rows).find("80,memory,") != std::string::npos);
  CHECK_THROWS_AS(complexity_benchmark(cfg, {0}, o), UsageError);
}
