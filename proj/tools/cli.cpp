#include "cli.hpp"

#include "docmem/analysis.hpp"
#include "docmem/decoding.hpp"
#include "docmem/evaluation.hpp"
#include "docmem/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

namespace docmem::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string content_hash(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const std::string header = "blob " + std::to_string(bytes.size());
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, header.data(), header.size() + 1);  // with the NUL
  EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

namespace {

// Options every subcommand understands.
struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> mem_size;
  std::optional<std::string> mem_side;
  std::optional<std::string> mem_layers;
  std::optional<std::string> trunc_window;
  std::optional<std::string> opt_window;
  std::optional<int> beam;
  bool strict_eq5 = false;
  int threads = 1;
  std::vector<std::string> set;
  std::string manifest;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "key=value configuration file")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "random seed (model, data order, corpus)");
  sub->add_option("--mem-size", c.mem_size, "memory rows d_M");
  sub->add_option("--mem-side", c.mem_side, "memory side")->check(CLI::IsMember({"src", "tgt", "both", "none"}));
  sub->add_option("--mem-layers", c.mem_layers, "comma-separated memory layers");
  sub->add_option("--trunc-window", c.trunc_window, "gradient truncation g")->check(CLI::IsMember({"0", "1", "full"}));
  sub->add_option("--opt-window", c.opt_window, "optimization window W (integer or full)");
  sub->add_option("--beam", c.beam, "beam size")->check(CLI::PositiveNumber);
  sub->add_flag("--strict-eq5", c.strict_eq5, "output attention without residual and norm");
  sub->add_option("--threads", c.threads, "worker threads for translate")->check(CLI::PositiveNumber);
  sub->add_option("--set", c.set, "extra key=value overrides");
  sub->add_option("--manifest", c.manifest, "run manifest path");
}

// Config file, then --set, then dedicated flags.
KeyValueConfig resolve(const Common& c) {
  KeyValueConfig kv = c.config.empty() ? KeyValueConfig{} : KeyValueConfig::load(c.config);
  for (const auto& s : c.set) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + s + "'");
    kv.set(s.substr(0, eq), s.substr(eq + 1));
  }
  if (c.seed) kv.set("seed", std::to_string(*c.seed));
  if (c.mem_size) kv.set("mem_size", std::to_string(*c.mem_size));
  if (c.mem_side) kv.set("mem_side", *c.mem_side);
  if (c.mem_layers) kv.set("mem_layers", *c.mem_layers);
  if (c.trunc_window) kv.set("trunc_window", *c.trunc_window);
  if (c.opt_window) kv.set("opt_window", *c.opt_window);
  if (c.beam) kv.set("beam", std::to_string(*c.beam));
  if (c.strict_eq5) kv.set("strict_eq5", "1");
  return kv;
}

struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  KeyValueConfig config;
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
  std::optional<fs::path> checkpoint;

  json to_json() const {
    json j;
    j["command"] = command;
    j["argv"] = argv;
    j["config"] = config.values();
    j["seed"] = config.get_u64("seed", 1);
    json in = json::array(), out = json::array();
    for (const auto& p : inputs) in.push_back(p.string());
    for (const auto& p : outputs) out.push_back(p.string());
    j["inputs"] = in;
    j["outputs"] = out;
    if (checkpoint) {
      j["checkpoint"] = checkpoint->string();
      j["checkpoint_hash"] = content_hash(*checkpoint);
    }
    return j;
  }
};

// Beside the primary output, or at --manifest, or on `err` when there is
// neither.
void emit_manifest(const Manifest& m, const Common& c, std::ostream& err) {
  fs::path path = c.manifest;
  if (path.empty() && !m.outputs.empty()) path = m.outputs.front().string() + ".manifest.json";
  const auto text = m.to_json().dump(2);
  if (path.empty()) {
    err << text << '\n';
    return;
  }
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write manifest " + path.string());
  f << text << '\n';
}

void guard_outputs(const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) {
  for (const auto& o : outputs) {
    for (const auto& i : inputs) {
      if (fs::exists(o) && fs::exists(i) && fs::equivalent(o, i)) {
        throw UsageError("output " + o.string() + " would overwrite input " + i.string());
      }
    }
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

fs::path vocab_path_for(const std::string& vocab, const std::string& corpus) {
  return vocab.empty() ? fs::path(corpus + ".vocab") : fs::path(vocab);
}

Vocab load_vocab(const fs::path& p) {
  if (!fs::exists(p)) throw std::runtime_error("vocabulary not found: " + p.string() + " (pass --vocab)");
  return Vocab::load(p);
}

std::vector<Document> load_docs(const fs::path& p) {
  if (!fs::exists(p)) throw std::runtime_error("corpus not found: " + p.string());
  return load_corpus(p);
}

// Model from a checkpoint. Memory settings on the command line may drop the
// memory (--mem-side none), which keeps only the sentence-level weights.
Model<float> load_model(const fs::path& path, const KeyValueConfig& kv) {
  if (!fs::exists(path)) throw std::runtime_error("checkpoint not found: " + path.string());
  const Checkpoint ckpt = load_checkpoint(path);
  if (kv.get("mem_side").value_or("") == "none" && ckpt.config.mem_side != MemorySide::none) {
    ModelConfig cfg = ckpt.config;
    cfg.mem_side = MemorySide::none;
    Model<float> m(cfg);
    Checkpoint kept = ckpt;
    kept.entries.clear();
    for (const auto& p : m.named_parameters()) {
      const auto* e = ckpt.find(p.name);
      if (e == nullptr) throw CheckpointError("checkpoint lacks " + p.name);
      kept.entries.push_back(*e);
    }
    apply_checkpoint(kept, m);
    return m;
  }
  return model_from_checkpoint<float>(ckpt);
}

void log_rows(std::ostream& out, const TrainLogRow& row) {
  if (!std::isnan(row.valid_loss)) out << train_log_line(row) << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Document-level translation with a recurrent sentence memory"};
  app.require_subcommand(1);
  Common common;

  // gen-corpus
  struct {
    std::string out, vocab, sentences, distance, length, prefix = "doc";
    std::optional<int> docs, content_words;
    std::optional<std::uint64_t> lexicon_seed;
  } gen;
  auto* gen_cmd = app.add_subcommand("gen-corpus", "generate an entity-carry corpus");
  gen_cmd->add_option("--out", gen.out, "corpus JSONL")->required();
  gen_cmd->add_option("--vocab", gen.vocab, "vocabulary file (default <out>.vocab)");
  gen_cmd->add_option("--docs", gen.docs, "number of documents");
  gen_cmd->add_option("--sentences", gen.sentences, "sentences per document, e.g. 8-120");
  gen_cmd->add_option("--distance", gen.distance, "antecedent distances, e.g. 1-10 or 1,3,5,10");
  gen_cmd->add_option("--length", gen.length, "content tokens per sentence, e.g. 5-12");
  gen_cmd->add_option("--content-words", gen.content_words, "content vocabulary size");
  gen_cmd->add_option("--lexicon-seed", gen.lexicon_seed, "seed of the word map (shared across splits)");
  gen_cmd->add_option("--prefix", gen.prefix, "document id prefix");
  add_common(gen_cmd, common);

  // train-sentence / finetune-doc
  struct {
    std::string train, valid, vocab, out, log, init;
  } tr;
  auto* pre_cmd = app.add_subcommand("train-sentence", "sentence-level pretraining");
  auto* ft_cmd = app.add_subcommand("finetune-doc", "document-level finetuning with memory");
  for (auto* s : {pre_cmd, ft_cmd}) {
    s->add_option("--train", tr.train, "training corpus")->required();
    s->add_option("--valid", tr.valid, "validation corpus")->required();
    s->add_option("--vocab", tr.vocab, "vocabulary (default <train>.vocab)");
    s->add_option("--out", tr.out, "checkpoint to write")->required();
    s->add_option("--log", tr.log, "training log CSV");
    add_common(s, common);
  }
  ft_cmd->add_option("--init", tr.init, "sentence-level checkpoint")->required();

  // translate
  struct {
    std::string model, input, vocab, out;
    double length_penalty = 0.6;
    int max_len = 0;
  } tl;
  auto* tl_cmd = app.add_subcommand("translate", "translate documents sentence by sentence");
  tl_cmd->add_option("--model", tl.model, "checkpoint")->required();
  tl_cmd->add_option("--input", tl.input, "corpus JSONL")->required();
  tl_cmd->add_option("--vocab", tl.vocab, "vocabulary (default <input>.vocab)");
  tl_cmd->add_option("--out", tl.out, "output JSONL with hyp")->required();
  tl_cmd->add_option("--length-penalty", tl.length_penalty, "alpha in logprob / len^alpha");
  tl_cmd->add_option("--max-len", tl.max_len, "token cap per sentence (0 = 2*len+8)");
  add_common(tl_cmd, common);

  // evaluate
  struct {
    std::string hyp, ref, json_out, model, vocab;
    int bucket = 10;
  } ev;
  auto* ev_cmd = app.add_subcommand("evaluate", "s-BLEU, d-BLEU and BLEU by sentence index");
  ev_cmd->add_option("--hyp", ev.hyp, "translated corpus (hyp field)")->required();
  ev_cmd->add_option("--ref", ev.ref, "reference corpus (default: tgt of --hyp)");
  ev_cmd->add_option("--json", ev.json_out, "write the report as JSON");
  ev_cmd->add_option("--bucket", ev.bucket, "sentence-index bucket width")->check(CLI::PositiveNumber);
  ev_cmd->add_option("--model", ev.model, "also report teacher-forced token accuracy of this checkpoint");
  ev_cmd->add_option("--vocab", ev.vocab, "vocabulary for --model (default <ref>.vocab)");
  add_common(ev_cmd, common);

  // analysis
  struct {
    std::string model, input, vocab, out;
    int bucket = 10, max_k = -1, max_docs = 0, doc = 0;
    bool all_kinds = false, trace = false;
    std::string tokens = "500,1000,2000";
    int chunk = 100, repeats = 1;
  } an;
  auto* ig_cmd = app.add_subcommand("analyze-ig", "attention-entropy information gain");
  auto* grad_cmd = app.add_subcommand("analyze-grad", "gradient attribution Score(k)");
  auto* attn_cmd = app.add_subcommand("dump-attn", "export memory attention maps");
  for (auto* s : {ig_cmd, grad_cmd, attn_cmd}) {
    s->add_option("--model", an.model, "checkpoint")->required();
    s->add_option("--input", an.input, "corpus JSONL")->required();
    s->add_option("--vocab", an.vocab, "vocabulary (default <input>.vocab)");
    s->add_option("--max-docs", an.max_docs, "use at most this many documents (0 = all)");
    add_common(s, common);
  }
  ig_cmd->add_option("--out", an.out, "JSON report");
  grad_cmd->add_option("--out", an.out, "CSV of Score(k)");
  grad_cmd->add_option("--bucket", an.bucket, "sentences per bucket")->check(CLI::PositiveNumber);
  grad_cmd->add_option("--max-k", an.max_k, "largest k reported");
  attn_cmd->add_option("--out", an.out, "output directory")->required();
  attn_cmd->add_option("--doc", an.doc, "document index");
  attn_cmd->add_flag("--all-kinds", an.all_kinds, "also export self and cross attention");
  attn_cmd->add_flag("--trace", an.trace, "report pronoun-to-marker dependency tracing over the corpus");

  auto* bench_cmd = app.add_subcommand("bench-complexity", "space and time of dummy-token decoding");
  bench_cmd->add_option("--tokens", an.tokens, "comma-separated total token counts");
  bench_cmd->add_option("--chunk", an.chunk, "tokens per chunk")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--repeats", an.repeats, "timed repetitions (fastest kept)")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--out", an.out, "CSV of rows");
  add_common(bench_cmd, common);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    if (auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front()) {
      err << "see: " << sub->get_name() << " --help\n";
    }
    return kUsage;
  }

  try {
    const KeyValueConfig kv = resolve(common);
    Manifest man;
    man.command = app.get_subcommands().front()->get_name();
    man.argv = args;
    man.config = kv;
    const std::uint64_t seed = kv.get_u64("seed", 1);

    if (gen_cmd->parsed()) {
      EntityCarrySpec spec;
      spec.n_docs = gen.docs.value_or(kv.get_int("docs", spec.n_docs));
      if (auto v = gen.sentences.empty() ? kv.get("sentences_per_doc") : gen.sentences) {
        spec.sentences_per_doc = IntChoices::parse(*v);
      }
      if (auto v = gen.distance.empty() ? kv.get("antecedent_distance") : gen.distance) {
        spec.antecedent_distance = IntChoices::parse(*v);
      }
      if (auto v = gen.length.empty() ? kv.get("sentence_length") : gen.length) {
        spec.sentence_length = IntChoices::parse(*v);
      }
      spec.content_words = gen.content_words.value_or(kv.get_int("content_words", spec.content_words));
      spec.lexicon_seed = gen.lexicon_seed.value_or(kv.get_u64("lexicon_seed", spec.lexicon_seed));
      spec.seed = seed;
      spec.id_prefix = gen.prefix;
      if (spec.n_docs < 1) throw UsageError("--docs must be >= 1");
      const auto corpus = generate_entity_carry_corpus(spec);
      const fs::path out_path = gen.out;
      const fs::path vocab_path = vocab_path_for(gen.vocab, gen.out);
      if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
      save_corpus(corpus.documents, out_path);
      corpus.vocab.save(vocab_path);
      const auto oracle = dictionary_oracle(corpus.documents, corpus);
      out << "documents " << corpus.documents.size() << ", vocabulary " << corpus.vocab.size()
          << ", carried pronouns " << oracle.pronouns << ", dictionary PRON accuracy " << oracle.pronoun_accuracy
          << '\n';
      man.outputs = {out_path, vocab_path};
    } else if (pre_cmd->parsed() || ft_cmd->parsed()) {
      const bool doc_stage = ft_cmd->parsed();
      const fs::path vocab_path = vocab_path_for(tr.vocab, tr.train);
      const Vocab vocab = load_vocab(vocab_path);
      const auto train = load_docs(tr.train);
      const auto valid = load_docs(tr.valid);
      man.inputs = {tr.train, tr.valid, vocab_path};
      if (doc_stage) man.inputs.push_back(tr.init);
      man.outputs = {tr.out};
      if (!tr.log.empty()) man.outputs.push_back(tr.log);
      guard_outputs(man.inputs, man.outputs);

      TrainConfig tc;
      tc.stage = doc_stage ? Stage::document : Stage::sentence;
      tc = TrainConfig::from_key_values(kv, tc);
      tc.stage = doc_stage ? Stage::document : Stage::sentence;
      tc.seed = seed;
      std::optional<Model<float>> model;
      if (doc_stage) {
        if (!fs::exists(tr.init)) throw std::runtime_error("checkpoint not found: " + tr.init);
        const Checkpoint init = load_checkpoint(tr.init);
        ModelConfig cfg = ModelConfig::from_key_values(kv, init.config);
        if (!kv.contains("mem_side") && cfg.mem_side == MemorySide::none) cfg.mem_side = MemorySide::both;
        if (cfg.vocab_size != vocab.size()) throw UsageError("checkpoint vocabulary size differs from --vocab");
        model.emplace(cfg);
        apply_checkpoint(init, *model, true);
      } else {
        ModelConfig cfg = ModelConfig::from_key_values(kv);
        cfg.vocab_size = vocab.size();
        cfg.mem_side = MemorySide::none;
        model.emplace(cfg);
      }
      auto sink = [&](const TrainLogRow& row) { log_rows(out, row); };
      const TrainResult r = doc_stage ? document_finetune(*model, train, valid, vocab, tc, sink)
                                      : sentence_pretrain(*model, train, valid, vocab, tc, sink);
      save_checkpoint(*model, tr.out, static_cast<std::uint64_t>(r.steps));
      if (!tr.log.empty()) write_train_log(r.log, tr.log);
      out << "steps " << r.steps << ", epochs " << r.epochs << ", best valid loss " << r.best_valid_loss
          << (r.early_stopped ? ", early stopped" : "") << (r.budget_exhausted ? ", budget exhausted" : "") << '\n';
      man.config.merge(model->config().to_key_values());
      man.config.merge(tc.to_key_values());
      man.checkpoint = tr.out;
    } else if (tl_cmd->parsed()) {
      const fs::path vocab_path = vocab_path_for(tl.vocab, tl.input);
      const Vocab vocab = load_vocab(vocab_path);
      const auto docs = load_docs(tl.input);
      man.inputs = {tl.model, tl.input, vocab_path};
      man.outputs = {tl.out};
      guard_outputs(man.inputs, man.outputs);
      const auto model = load_model(tl.model, kv);
      if (model.config().vocab_size != vocab.size()) throw UsageError("checkpoint vocabulary size differs from --vocab");
      DecodeOptions o;
      o.beam = kv.get_int("beam", o.beam);
      o.length_penalty = tl.length_penalty;
      o.max_len = tl.max_len;
      const auto translated = translate_corpus(model, docs, vocab, o, common.threads);
      save_corpus(translated, tl.out);
      out << "translated " << translated.size() << " documents\n";
      man.checkpoint = tl.model;
    } else if (ev_cmd->parsed()) {
      const auto hyp_docs = load_docs(ev.hyp);
      const auto ref_docs = ev.ref.empty() ? hyp_docs : load_docs(ev.ref);
      man.inputs = {ev.hyp};
      if (!ev.ref.empty()) man.inputs.push_back(ev.ref);
      if (hyp_docs.size() != ref_docs.size()) throw UsageError("hypothesis and reference document counts differ");
      std::vector<std::vector<std::string>> hyps, refs;
      for (std::size_t i = 0; i < hyp_docs.size(); ++i) {
        if (hyp_docs[i].hyp.size() != ref_docs[i].tgt.size()) {
          throw UsageError("document " + hyp_docs[i].id + " has " + std::to_string(hyp_docs[i].hyp.size()) +
                           " hypotheses for " + std::to_string(ref_docs[i].tgt.size()) + " references");
        }
        hyps.push_back(hyp_docs[i].hyp);
        refs.push_back(ref_docs[i].tgt);
      }
      const auto report = evaluate_documents(hyps, refs, ev.bucket);
      out << to_text(report);
      if (!ev.model.empty()) {
        const fs::path vocab_path = vocab_path_for(ev.vocab, ev.ref.empty() ? ev.hyp : ev.ref);
        const Vocab vocab = load_vocab(vocab_path);
        const auto model = load_model(ev.model, kv);
        const auto acc = evaluate_teacher_forced(model, ref_docs, vocab, true);
        out << "token accuracy " << std::fixed << std::setprecision(4) << acc.plain_accuracy() << ", PRON accuracy "
            << acc.pron_accuracy(1) << '\n';
        for (const auto& [d, tc] : acc.pronouns) {
          if (d >= 1) out << "  distance " << d << ": " << acc.pron_accuracy(d, d) << " (" << tc.first << ")\n";
        }
        man.inputs.push_back(ev.model);
        man.inputs.push_back(vocab_path);
        man.checkpoint = ev.model;
      }
      if (!ev.json_out.empty()) {
        guard_outputs(man.inputs, {ev.json_out});
        write_text(ev.json_out, to_json(report) + "\n");
        man.outputs = {ev.json_out};
      }
    } else if (ig_cmd->parsed() || grad_cmd->parsed() || attn_cmd->parsed()) {
      const fs::path vocab_path = vocab_path_for(an.vocab, an.input);
      const Vocab vocab = load_vocab(vocab_path);
      auto docs = load_docs(an.input);
      if (an.max_docs > 0 && static_cast<std::size_t>(an.max_docs) < docs.size()) docs.resize(static_cast<std::size_t>(an.max_docs));
      man.inputs = {an.model, an.input, vocab_path};
      if (!an.out.empty()) man.outputs = {an.out};
      guard_outputs(man.inputs, man.outputs);
      man.checkpoint = an.model;
      const auto model = load_model(an.model, kv);
      if (ig_cmd->parsed()) {
        ModelConfig init_cfg = model.config();
        init_cfg.seed = kv.contains("seed") ? seed : init_cfg.seed + 1;
        if (init_cfg.seed == model.config().seed) ++init_cfg.seed;
        const Model<float> init(init_cfg);
        const auto text = to_json(information_gain(model, init, docs, vocab));
        out << text << '\n';
        if (!an.out.empty()) write_text(an.out, text + "\n");
      } else if (grad_cmd->parsed()) {
        const auto csv = attribution_csv(gradient_attribution(model, docs, vocab, an.bucket, an.max_k));
        out << csv;
        if (!an.out.empty()) write_text(an.out, csv);
      } else {
        if (an.doc < 0 || static_cast<std::size_t>(an.doc) >= docs.size()) {
          throw UsageError("--doc " + std::to_string(an.doc) + " is out of range (" + std::to_string(docs.size()) +
                           " documents)");
        }
        const auto maps = capture_attention(model, docs[static_cast<std::size_t>(an.doc)], vocab, an.all_kinds);
        const auto files = export_attention_maps(maps, an.out);
        out << "wrote " << files.size() << " attention records to " << an.out << '\n';
        if (an.trace) {
          const auto t = trace_dependencies(model, docs, vocab);
          out << "dependency tracing: " << t.hits << " / " << t.instances << " (" << t.rate() << ")\n";
        }
      }
    } else if (bench_cmd->parsed()) {
      ModelConfig cfg = ModelConfig::from_key_values(kv);
      if (!kv.contains("mem_side")) cfg.mem_side = MemorySide::both;
      std::vector<long> counts;
      for (int n : parse_int_list(an.tokens)) counts.push_back(n);
      BenchOptions o;
      o.chunk = an.chunk;
      o.repeats = an.repeats;
      const auto csv = complexity_csv(complexity_benchmark(cfg, counts, o));
      out << csv;
      if (!an.out.empty()) {
        write_text(an.out, csv);
        man.outputs = {an.out};
      }
      man.config.merge(cfg.to_key_values());
    }
    emit_manifest(man, common, err);
    return kOk;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace docmem::cli
