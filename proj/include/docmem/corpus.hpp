#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace docmem {

struct CorpusError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Token <-> id bijection. Ids 0..3 are reserved for <pad>, <bos>, <eos> and
// <unk>; content tokens follow in insertion order.
class Vocab {
 public:
  static constexpr int pad = 0;
  static constexpr int bos = 1;
  static constexpr int eos = 2;
  static constexpr int unk = 3;

  Vocab();

  // Returns the existing id when `token` is already present.
  int add(const std::string& token);
  // <unk> for unseen tokens.
  int id(const std::string& token) const;
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  static bool reserved(int id) { return id >= 0 && id <= unk; }

  // Whitespace tokenization; no bos/eos.
  std::vector<int> encode(const std::string& sentence) const;
  // Drops reserved ids.
  std::string decode(std::span<const int> ids) const;

  // One token per line; the line number (from 0) is the id.
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

// A context-dependent target token: `token` of sentence `sentence` resolves
// against an antecedent `distance` sentences earlier (0 = same sentence).
struct Annotation {
  int sentence = 0;
  int token = 0;
  int distance = 0;
  bool operator==(const Annotation&) const = default;
};

struct Document {
  std::string id;
  std::vector<std::string> src;  // one whitespace-tokenized sentence per entry
  std::vector<std::string> tgt;
  std::vector<Annotation> annotations;
  // Translation output; empty unless the document came from `translate`.
  std::vector<std::string> hyp;

  std::size_t size() const { return src.size(); }
  // Distance of the annotated token, if any.
  std::optional<int> distance_at(int sentence, int token) const;
  bool operator==(const Document&) const = default;
};

// Uniform choice over a fixed list of integers.
struct IntChoices {
  std::vector<int> values;

  static IntChoices range(int lo, int hi);
  // "3", "1-10" or "1,3,5,10".
  static IntChoices parse(const std::string& text);
  int min() const;
  int max() const;
  template <typename Rng>
  int sample(Rng& rng) const;
};

struct EntityCarrySpec {
  int n_docs = 100;
  IntChoices sentences_per_doc = IntChoices::range(8, 120);
  IntChoices antecedent_distance = IntChoices::range(1, 10);
  IntChoices sentence_length = IntChoices::range(5, 12);
  int content_words = 40;
  // Pronoun sentences that may follow one entity introduction.
  int max_pronouns_per_marker = 3;
  std::string id_prefix = "doc";
  // Documents. Train and test splits use different seeds.
  std::uint64_t seed = 1;
  // Word map; splits that should share a task share this.
  std::uint64_t lexicon_seed = 1;
};

// Source and target tokens of the entity-carry task.
struct EntityCarryTokens {
  static constexpr const char* marker_a = "mark_a";
  static constexpr const char* marker_b = "mark_b";
  static constexpr const char* pronoun = "pron";
  static constexpr const char* target_marker_a = "MARK_A";
  static constexpr const char* target_marker_b = "MARK_B";
  static constexpr const char* pronoun_a = "PRON_A";
  static constexpr const char* pronoun_b = "PRON_B";
};

struct GeneratedCorpus {
  Vocab vocab;
  std::vector<Document> documents;
  // Source -> target word map for every non-pronoun source token.
  std::map<std::string, std::string> lexicon;
};

// Builds the vocabulary and lexicon of the entity-carry task. The content
// word map depends only on (content_words, lexicon_seed).
GeneratedCorpus entity_carry_lexicon(const EntityCarrySpec& spec);

// Documents over a toy vocabulary with a one-to-one word translation, where
// each pronoun's target (PRON_A / PRON_B) is fixed by the most recent marker.
// Throws CorpusError when the smallest distance cannot fit in the shortest
// document or a distribution is empty.
GeneratedCorpus generate_entity_carry_corpus(const EntityCarrySpec& spec);

// JSONL, one document per line:
// {"id": str, "src": [str,...], "tgt": [str,...], "ann": [[sent, tok, dist],...]}
// plus "hyp": [str,...] for translation output.
void save_corpus(const std::vector<Document>& docs, const std::filesystem::path& path);
std::vector<Document> load_corpus(const std::filesystem::path& path);
std::string document_to_json(const Document& doc);
// Throws CorpusError naming `line` on malformed input.
Document document_from_json(const std::string& text, int line);

struct SentencePair {
  int index = 0;
  std::vector<int> src;  // <bos> ... <eos>
  std::vector<int> tgt;  // <bos> ... <eos>
};

// Sentence pairs in document order.
std::vector<SentencePair> iterate_document(const Document& doc, const Vocab& vocab);

// Accuracy of the context-free dictionary baseline: non-pronoun tokens are
// looked up; a pronoun without an in-sentence marker is always guessed as
// PRON_A.
struct DictionaryOracleScore {
  double non_pronoun_accuracy = 0;
  double pronoun_accuracy = 0;  // distance >= 1 only
  double marker_a_share = 0;    // share of distance >= 1 pronouns resolving to A
  std::size_t pronouns = 0;
};

DictionaryOracleScore dictionary_oracle(const std::vector<Document>& docs, const GeneratedCorpus& corpus);

std::vector<std::string> split_tokens(const std::string& sentence);

template <typename Rng>
int IntChoices::sample(Rng& rng) const {
  if (values.empty()) throw CorpusError("empty distribution");
  const auto i = static_cast<std::size_t>(rng() % values.size());
  return values[i];
}

}  // namespace docmem
