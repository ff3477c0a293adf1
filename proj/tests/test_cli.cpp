#include "doctest.h"

#include "cli.hpp"
#include "docmem/decoding.hpp"
#include "docmem/training.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

using namespace docmem;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& f) const { return (path / f).string(); }
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_tiny_config(const std::string& path) {
  std::ofstream f(path);
  f << "# small model for command tests\n"
       "d_model=16\nn_heads=2\nd_ffn=24\nmem_size=4\ndropout=0\n"
       "warmup_steps=20\nmax_steps=20\nvalidate_every=10\nbatch_sentences=4\n";
}

// gen-corpus -> train-sentence -> finetune-doc -> translate -> evaluate.
std::string pipeline(const TempDir& d, const std::string& tag) {
  const auto cfg = d / "tiny.cfg";
  write_tiny_config(cfg);
  const auto train = d / (tag + "train.jsonl");
  const auto valid = d / (tag + "valid.jsonl");
  const auto vocab = train + ".vocab";
  REQUIRE(run({"gen-corpus", "--out", train, "--docs", "6", "--sentences", "3-5", "--distance", "1-2", "--seed", "5"}).code == 0);
  REQUIRE(run({"gen-corpus", "--out", valid, "--vocab", d / (tag + "v.vocab"), "--docs", "2", "--sentences", "3-5",
               "--distance", "1-2", "--seed", "6"}).code == 0);
  REQUIRE(run({"train-sentence", "--train", train, "--valid", valid, "--out", d / (tag + "base.ckpt"), "--config", cfg,
               "--seed", "9"}).code == 0);
  REQUIRE(run({"finetune-doc", "--init", d / (tag + "base.ckpt"), "--train", train, "--valid", valid, "--out",
               d / (tag + "mem.ckpt"), "--config", cfg, "--seed", "9", "--opt-window", "3"}).code == 0);
  REQUIRE(run({"translate", "--model", d / (tag + "mem.ckpt"), "--input", valid, "--vocab", vocab, "--out",
               d / (tag + "hyp.jsonl"), "--beam", "2"}).code == 0);
  const auto ev = run({"evaluate", "--hyp", d / (tag + "hyp.jsonl")});
  REQUIRE(ev.code == 0);
  return ev.out;
}

}  // namespace

TEST_CASE("cli: content hash is the git blob hash") {
  TempDir d("docmem_cli_hash");
  std::ofstream(d / "hello") << "hello\n";
  CHECK(cli::content_hash(d / "hello") == "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST_CASE("cli: evaluate on a corpus translated perfectly reports 100 twice") {
  TempDir d("docmem_cli_eval");
  REQUIRE(run({"gen-corpus", "--out", d / "c.jsonl", "--docs", "3", "--sentences", "4-6"}).code == 0);
  auto docs = load_corpus(d / "c.jsonl");
  for (auto& doc : docs) doc.hyp = doc.tgt;
  save_corpus(docs, d / "hyp.jsonl");
  const auto r = run({"evaluate", "--hyp", d / "hyp.jsonl", "--ref", d / "c.jsonl", "--json", d / "report.json"});
  CHECK(r.code == 0);
  CHECK(r.out.find("s-BLEU 100.00") != std::string::npos);
  CHECK(r.out.find("d-BLEU 100.00") != std::string::npos);
  CHECK(fs::exists(d / "report.json.manifest.json"));
}

TEST_CASE("cli: usage errors exit 2, runtime failures exit 1") {
  TempDir d("docmem_cli_codes");
  CHECK(run({}).code == cli::kUsage);
  CHECK(run({"no-such-command"}).code == cli::kUsage);
  CHECK(run({"bench-complexity", "--mem-side", "left"}).code == cli::kUsage);
  CHECK(run({"bench-complexity", "--trunc-window", "2"}).code == cli::kUsage);
  CHECK(run({"gen-corpus", "--out", d / "c.jsonl", "--set", "oops"}).code == cli::kUsage);
  CHECK(run({"gen-corpus", "--out", d / "c.jsonl", "--docs", "0"}).code == cli::kUsage);
  const auto missing = run({"translate", "--model", d / "none.ckpt", "--input", d / "none.jsonl", "--out", d / "h.jsonl"});
  CHECK(missing.code == cli::kFailure);
  CHECK_FALSE(missing.err.empty());
  CHECK(run({"gen-corpus", "--help"}).code == cli::kOk);
}

TEST_CASE("cli: outputs never overwrite inputs") {
  TempDir d("docmem_cli_inputs");
  REQUIRE(run({"gen-corpus", "--out", d / "c.jsonl", "--docs", "2", "--sentences", "3-4"}).code == 0);
  const auto before = slurp(d / "c.jsonl");
  const auto r = run({"evaluate", "--hyp", d / "c.jsonl", "--json", d / "c.jsonl"});
  CHECK(r.code != 0);
  CHECK(slurp(d / "c.jsonl") == before);
  write_tiny_config(d / "tiny.cfg");
  CHECK(run({"train-sentence", "--train", d / "c.jsonl", "--valid", d / "c.jsonl", "--out", d / "c.jsonl", "--config",
             d / "tiny.cfg"}).code == cli::kUsage);
  CHECK(slurp(d / "c.jsonl") == before);
}

TEST_CASE("cli: the whole pipeline is reproducible and emits manifests") {
  TempDir d("docmem_cli_pipeline");
  const auto first = pipeline(d, "a_");
  const auto second = pipeline(d, "b_");
  CHECK(first == second);
  CHECK(slurp(d / "a_mem.ckpt") == slurp(d / "b_mem.ckpt"));
  CHECK(slurp(d / "a_hyp.jsonl") == slurp(d / "b_hyp.jsonl"));
  for (const auto* f : {"a_train.jsonl", "a_base.ckpt", "a_mem.ckpt", "a_hyp.jsonl"}) {
    CHECK(fs::exists(d / (std::string(f) + ".manifest.json")));
  }
  const auto m = nlohmann::json::parse(slurp(d / "a_mem.ckpt.manifest.json"));
  CHECK(m["command"] == "finetune-doc");
  CHECK(m["seed"] == 9);
  CHECK(m["config"]["opt_window"] == "3");
  CHECK(m["config"]["mem_side"] == "both");
  CHECK(m["checkpoint_hash"] == cli::content_hash(d / "a_mem.ckpt"));
}

TEST_CASE("cli: --mem-side none on one-sentence documents is the sentence baseline") {
  TempDir d("docmem_cli_baseline");
  write_tiny_config(d / "tiny.cfg");
  const auto train = d / "train.jsonl";
  REQUIRE(run({"gen-corpus", "--out", train, "--docs", "4", "--sentences", "3-4", "--distance", "1"}).code == 0);
  REQUIRE(run({"train-sentence", "--train", train, "--valid", train, "--out", d / "base.ckpt", "--config",
               d / "tiny.cfg"}).code == 0);
  // Frozen pretrained weights: only the memory changes during finetuning.
  REQUIRE(run({"finetune-doc", "--init", d / "base.ckpt", "--train", train, "--valid", train, "--out",
               d / "mem.ckpt", "--config", d / "tiny.cfg", "--set", "freeze_pretrained=1"}).code == 0);

  auto docs = load_corpus(train);
  std::vector<Document> single;
  for (const auto& doc : docs) {
    Document s = doc;
    s.src.resize(1);
    s.tgt.resize(1);
    s.annotations.clear();
    single.push_back(s);
  }
  save_corpus(single, d / "single.jsonl");
  const auto vocab = train + ".vocab";
  REQUIRE(run({"translate", "--model", d / "base.ckpt", "--input", d / "single.jsonl", "--vocab", vocab, "--out",
               d / "base_hyp.jsonl"}).code == 0);
  REQUIRE(run({"translate", "--model", d / "mem.ckpt", "--input", d / "single.jsonl", "--vocab", vocab, "--out",
               d / "none_hyp.jsonl", "--mem-side", "none"}).code == 0);
  const auto base = load_corpus(d / "base_hyp.jsonl");
  const auto none = load_corpus(d / "none_hyp.jsonl");
  REQUIRE(base.size() == none.size());
  // Oracle: direct beam search with the library on the pretrained model.
  const auto model = model_from_checkpoint<float>(load_checkpoint(d / "base.ckpt"));
  const auto v = Vocab::load(vocab);
  for (std::size_t i = 0; i < base.size(); ++i) {
    CHECK(none[i].hyp == base[i].hyp);
    const auto src = iterate_document(single[i], v)[0].src;
    DecodeOptions o;
    auto tokens = beam_search_sentence<float>(model, std::span<const int>(src), nullptr, o).tokens;
    if (!tokens.empty() && tokens.back() == kEosId) tokens.pop_back();
    CHECK(base[i].hyp[0] == v.decode(tokens));
  }
}

TEST_CASE("cli: analysis commands") {
  TempDir d("docmem_cli_analysis");
  write_tiny_config(d / "tiny.cfg");
  const auto train = d / "train.jsonl";
  REQUIRE(run({"gen-corpus", "--out", train, "--docs", "3", "--sentences", "5-6", "--distance", "1-2"}).code == 0);
  REQUIRE(run({"train-sentence", "--train", train, "--valid", train, "--out", d / "base.ckpt", "--config",
               d / "tiny.cfg"}).code == 0);
  REQUIRE(run({"finetune-doc", "--init", d / "base.ckpt", "--train", train, "--valid", train, "--out",
               d / "mem.ckpt", "--config", d / "tiny.cfg"}).code == 0);

  const auto ig = run({"analyze-ig", "--model", d / "mem.ckpt", "--input", train, "--out", d / "ig.json"});
  CHECK(ig.code == 0);
  CHECK(nlohmann::json::parse(slurp(d / "ig.json")).contains("update"));

  const auto grad = run({"analyze-grad", "--model", d / "mem.ckpt", "--input", train, "--bucket", "2", "--out",
                         d / "score.csv", "--max-docs", "1"});
  CHECK(grad.code == 0);
  CHECK(slurp(d / "score.csv").rfind("k,score,anchors\n0,", 0) == 0);

  const auto attn = run({"dump-attn", "--model", d / "mem.ckpt", "--input", train, "--out", d / "attn", "--trace"});
  CHECK(attn.code == 0);
  CHECK(fs::exists(d / "attn/decoder_l1_output_s0.json"));
  CHECK(attn.out.find("dependency tracing") != std::string::npos);
  CHECK(run({"dump-attn", "--model", d / "mem.ckpt", "--input", train, "--out", d / "attn2", "--doc", "7"}).code ==
        cli::kUsage);

  const auto bench = run({"bench-complexity", "--config", d / "tiny.cfg", "--tokens", "40,80", "--chunk", "20", "--out",
                          d / "bench.csv"});
  CHECK(bench.code == 0);
  CHECK(slurp(d / "bench.csv").find("80,concat,") != std::string::npos);
  CHECK(fs::exists(d / "bench.csv.manifest.json"));
}
