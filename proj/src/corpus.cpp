#include "docmem/corpus.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace docmem {

using json = nlohmann::json;
using T = EntityCarryTokens;

Vocab::Vocab() {
  for (const char* t : {"<pad>", "<bos>", "<eos>", "<unk>"}) add(t);
}

int Vocab::add(const std::string& token) {
  if (token.empty() || token.find_first_of(" \t\r\n") != std::string::npos) {
    throw CorpusError("invalid vocabulary token '" + token + "'");
  }
  auto it = ids_.find(token);
  if (it != ids_.end()) return it->second;
  const int id = size();
  tokens_.push_back(token);
  ids_.emplace(token, id);
  return id;
}

int Vocab::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? unk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw CorpusError("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::string> split_tokens(const std::string& sentence) {
  std::vector<std::string> out;
  std::istringstream in(sentence);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

std::vector<int> Vocab::encode(const std::string& sentence) const {
  std::vector<int> out;
  for (const auto& t : split_tokens(sentence)) out.push_back(id(t));
  return out;
}

std::string Vocab::decode(std::span<const int> ids) const {
  std::string out;
  for (int i : ids) {
    if (reserved(i)) continue;
    if (!out.empty()) out += ' ';
    out += token(i);
  }
  return out;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot read vocabulary " + path.string());
  Vocab v;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (number < 4) {
      if (line != v.tokens_[static_cast<std::size_t>(number)]) {
        throw CorpusError(path.string() + ":" + std::to_string(number + 1) + ": expected reserved token " +
                          v.tokens_[static_cast<std::size_t>(number)]);
      }
    } else {
      if (v.contains(line)) {
        throw CorpusError(path.string() + ":" + std::to_string(number + 1) + ": duplicate token '" + line + "'");
      }
      v.add(line);
    }
    ++number;
  }
  return v;
}

std::optional<int> Document::distance_at(int sentence, int token) const {
  for (const auto& a : annotations) {
    if (a.sentence == sentence && a.token == token) return a.distance;
  }
  return std::nullopt;
}

IntChoices IntChoices::range(int lo, int hi) {
  if (hi < lo) throw CorpusError("empty range " + std::to_string(lo) + "-" + std::to_string(hi));
  IntChoices c;
  c.values.resize(static_cast<std::size_t>(hi - lo + 1));
  std::iota(c.values.begin(), c.values.end(), lo);
  return c;
}

IntChoices IntChoices::parse(const std::string& text) {
  try {
    const auto dash = text.find('-', 1);
    if (dash != std::string::npos && text.find(',') == std::string::npos) {
      return range(std::stoi(text.substr(0, dash)), std::stoi(text.substr(dash + 1)));
    }
    IntChoices c;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
      if (!item.empty()) c.values.push_back(std::stoi(item));
    }
    if (c.values.empty()) throw CorpusError("empty distribution");
    return c;
  } catch (const CorpusError&) {
    throw;
  } catch (const std::exception&) {
    throw CorpusError("cannot parse distribution '" + text + "' (expected N, LO-HI or a,b,c)");
  }
}

int IntChoices::min() const {
  if (values.empty()) throw CorpusError("empty distribution");
  return *std::min_element(values.begin(), values.end());
}

int IntChoices::max() const {
  if (values.empty()) throw CorpusError("empty distribution");
  return *std::max_element(values.begin(), values.end());
}

namespace {

std::string numbered(const char* prefix, int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%s%02d", prefix, i);
  return buf;
}

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

int uniform(std::mt19937_64& rng, int lo, int hi) {
  return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

}  // namespace

GeneratedCorpus entity_carry_lexicon(const EntityCarrySpec& spec) {
  if (spec.content_words < 1) throw CorpusError("content_words must be >= 1");
  GeneratedCorpus out;
  std::vector<std::string> src_words, tgt_words;
  for (int i = 0; i < spec.content_words; ++i) {
    src_words.push_back(numbered("s", i));
    tgt_words.push_back(numbered("t", i));
  }
  for (const auto& w : src_words) out.vocab.add(w);
  for (const char* t : {T::marker_a, T::marker_b, T::pronoun}) out.vocab.add(t);
  for (const auto& w : tgt_words) out.vocab.add(w);
  for (const char* t : {T::target_marker_a, T::target_marker_b, T::pronoun_a, T::pronoun_b}) out.vocab.add(t);

  std::vector<int> perm(static_cast<std::size_t>(spec.content_words));
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(spec.lexicon_seed ^ 0x5DEECE66DULL);
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng() % i]);
  for (std::size_t i = 0; i < perm.size(); ++i) out.lexicon[src_words[i]] = tgt_words[static_cast<std::size_t>(perm[i])];
  out.lexicon[T::marker_a] = T::target_marker_a;
  out.lexicon[T::marker_b] = T::target_marker_b;
  return out;
}

GeneratedCorpus generate_entity_carry_corpus(const EntityCarrySpec& spec) {
  if (spec.n_docs < 0) throw CorpusError("n_docs must be >= 0");
  const int min_sents = spec.sentences_per_doc.min();
  const int min_dist = spec.antecedent_distance.min();
  const int min_len = spec.sentence_length.min();
  if (min_sents < 1) throw CorpusError("documents need at least one sentence");
  if (min_dist < 0) throw CorpusError("antecedent distance must be >= 0");
  if (min_dist > min_sents - 1) {
    throw CorpusError("antecedent distance " + std::to_string(min_dist) + " does not fit in a " +
                      std::to_string(min_sents) + "-sentence document");
  }
  if (min_len < (min_dist == 0 ? 2 : 1)) {
    throw CorpusError("sentence length too short for the marker and pronoun");
  }
  if (spec.max_pronouns_per_marker < 1) throw CorpusError("max_pronouns_per_marker must be >= 1");

  GeneratedCorpus out = entity_carry_lexicon(spec);
  std::vector<std::string> content;
  for (int i = 0; i < spec.content_words; ++i) content.push_back(numbered("s", i));

  std::mt19937_64 rng(spec.seed);
  long balance = 0;  // pronouns resolving to A minus those resolving to B

  for (int d = 0; d < spec.n_docs; ++d) {
    const int n = spec.sentences_per_doc.sample(rng);
    std::vector<std::vector<std::string>> src(static_cast<std::size_t>(n));
    std::vector<std::vector<std::string>> tgt(static_cast<std::size_t>(n));
    for (auto& s : src) {
      const int len = spec.sentence_length.sample(rng);
      for (int k = 0; k < len; ++k) s.push_back(content[rng() % content.size()]);
    }
    // Pronoun targets are filled in once the antecedent is known.
    std::vector<std::pair<int, int>> pron_slots;
    std::vector<bool> pron_is_a;
    Document doc;
    doc.id = spec.id_prefix + "-" + std::to_string(d);

    int marker = 0;
    while (marker < n) {
      bool is_a = (rng() & 1U) != 0;
      if (balance > 4) is_a = false;
      if (balance < -4) is_a = true;
      auto& ms = src[static_cast<std::size_t>(marker)];
      const int count = uniform(rng, 1, spec.max_pronouns_per_marker);
      std::set<int> distances;
      for (int k = 0; k < count; ++k) distances.insert(spec.antecedent_distance.sample(rng));

      int marker_pos = uniform(rng, 0, static_cast<int>(ms.size()) - 1);
      if (distances.count(0) && marker_pos == static_cast<int>(ms.size()) - 1) --marker_pos;
      ms[static_cast<std::size_t>(marker_pos)] = is_a ? T::marker_a : T::marker_b;

      int last = marker;
      for (int dist : distances) {
        const int j = marker + dist;
        if (j >= n) break;
        auto& ps = src[static_cast<std::size_t>(j)];
        const int lo = dist == 0 ? marker_pos + 1 : 0;
        const int pos = uniform(rng, lo, static_cast<int>(ps.size()) - 1);
        ps[static_cast<std::size_t>(pos)] = T::pronoun;
        doc.annotations.push_back({j, pos, dist});
        balance += is_a ? 1 : -1;
        last = j;
      }
      marker = last + 1 + uniform(rng, 0, 2);
    }

    for (int s = 0; s < n; ++s) {
      const auto& ss = src[static_cast<std::size_t>(s)];
      auto& ts = tgt[static_cast<std::size_t>(s)];
      for (const auto& w : ss) ts.push_back(w == T::pronoun ? std::string() : out.lexicon.at(w));
    }
    // Resolve each pronoun against the most recent marker, scanning in order.
    std::string current;
    for (int s = 0; s < n; ++s) {
      const auto& ss = src[static_cast<std::size_t>(s)];
      for (std::size_t k = 0; k < ss.size(); ++k) {
        if (ss[k] == T::marker_a) current = T::pronoun_a;
        if (ss[k] == T::marker_b) current = T::pronoun_b;
        if (ss[k] == T::pronoun) tgt[static_cast<std::size_t>(s)][k] = current;
      }
    }
    for (int s = 0; s < n; ++s) {
      doc.src.push_back(join(src[static_cast<std::size_t>(s)]));
      doc.tgt.push_back(join(tgt[static_cast<std::size_t>(s)]));
    }
    out.documents.push_back(std::move(doc));
  }
  return out;
}

std::string document_to_json(const Document& doc) {
  json j;
  j["id"] = doc.id;
  j["src"] = doc.src;
  j["tgt"] = doc.tgt;
  json ann = json::array();
  for (const auto& a : doc.annotations) ann.push_back({a.sentence, a.token, a.distance});
  j["ann"] = ann;
  if (!doc.hyp.empty()) j["hyp"] = doc.hyp;
  return j.dump();
}

Document document_from_json(const std::string& text, int line) {
  const std::string where = "line " + std::to_string(line) + ": ";
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw CorpusError(where + "invalid JSON (" + e.what() + ")");
  }
  if (!j.is_object()) throw CorpusError(where + "expected a JSON object");
  for (const char* key : {"id", "src", "tgt"}) {
    if (!j.contains(key)) throw CorpusError(where + "missing \"" + key + "\"");
  }
  Document doc;
  try {
    doc.id = j.at("id").get<std::string>();
    doc.src = j.at("src").get<std::vector<std::string>>();
    doc.tgt = j.at("tgt").get<std::vector<std::string>>();
    if (j.contains("ann")) {
      for (const auto& a : j.at("ann")) {
        if (!a.is_array() || a.size() != 3) throw CorpusError(where + "\"ann\" entries must be [sent, tok, dist]");
        doc.annotations.push_back({a[0].get<int>(), a[1].get<int>(), a[2].get<int>()});
      }
    }
    if (j.contains("hyp")) doc.hyp = j.at("hyp").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw CorpusError(where + e.what());
  }
  if (doc.src.empty()) throw CorpusError(where + "document has no sentences");
  if (doc.src.size() != doc.tgt.size()) {
    throw CorpusError(where + "src has " + std::to_string(doc.src.size()) + " sentences but tgt has " +
                      std::to_string(doc.tgt.size()));
  }
  if (!doc.hyp.empty() && doc.hyp.size() != doc.src.size()) {
    throw CorpusError(where + "hyp and src differ in sentence count");
  }
  for (const auto& a : doc.annotations) {
    if (a.sentence < 0 || a.sentence >= static_cast<int>(doc.src.size()) || a.distance < 0 ||
        a.distance > a.sentence) {
      throw CorpusError(where + "annotation outside the document");
    }
  }
  return doc;
}

void save_corpus(const std::vector<Document>& docs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write corpus " + path.string());
  for (const auto& d : docs) out << document_to_json(d) << '\n';
}

std::vector<Document> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot read corpus " + path.string());
  std::vector<Document> docs;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      docs.push_back(document_from_json(line, number));
    } catch (const CorpusError& e) {
      throw CorpusError(path.string() + ": " + e.what());
    }
  }
  return docs;
}

std::vector<SentencePair> iterate_document(const Document& doc, const Vocab& vocab) {
  std::vector<SentencePair> out;
  out.reserve(doc.size());
  auto wrap = [&](const std::string& s) {
    std::vector<int> ids{Vocab::bos};
    for (int i : vocab.encode(s)) ids.push_back(i);
    ids.push_back(Vocab::eos);
    return ids;
  };
  for (std::size_t t = 0; t < doc.size(); ++t) {
    out.push_back({static_cast<int>(t), wrap(doc.src[t]), wrap(doc.tgt[t])});
  }
  return out;
}

DictionaryOracleScore dictionary_oracle(const std::vector<Document>& docs, const GeneratedCorpus& corpus) {
  std::size_t plain = 0, plain_right = 0, prons = 0, pron_right = 0, share_a = 0;
  for (const auto& doc : docs) {
    for (std::size_t s = 0; s < doc.size(); ++s) {
      const auto src = split_tokens(doc.src[s]);
      const auto tgt = split_tokens(doc.tgt[s]);
      std::string in_sentence;
      for (std::size_t k = 0; k < src.size(); ++k) {
        if (src[k] == T::marker_a) in_sentence = T::pronoun_a;
        if (src[k] == T::marker_b) in_sentence = T::pronoun_b;
        if (src[k] != T::pronoun) {
          auto it = corpus.lexicon.find(src[k]);
          ++plain;
          plain_right += it != corpus.lexicon.end() && k < tgt.size() && it->second == tgt[k];
          continue;
        }
        const auto dist = doc.distance_at(static_cast<int>(s), static_cast<int>(k));
        if (!dist || *dist == 0) continue;
        const std::string guess = in_sentence.empty() ? T::pronoun_a : in_sentence;
        ++prons;
        pron_right += k < tgt.size() && tgt[k] == guess;
        share_a += k < tgt.size() && tgt[k] == T::pronoun_a;
      }
    }
  }
  DictionaryOracleScore score;
  score.pronouns = prons;
  if (plain) score.non_pronoun_accuracy = static_cast<double>(plain_right) / static_cast<double>(plain);
  if (prons) {
    score.pronoun_accuracy = static_cast<double>(pron_right) / static_cast<double>(prons);
    score.marker_a_share = static_cast<double>(share_a) / static_cast<double>(prons);
  }
  return score;
}

}  // namespace docmem
