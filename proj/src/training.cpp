#include "docmem/training.hpp"

#include "docmem/ops.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace docmem {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::string to_string(Stage stage) { return stage == Stage::sentence ? "sentence" : "document"; }

Stage parse_stage(const std::string& text) {
  if (text == "sentence") return Stage::sentence;
  if (text == "document") return Stage::document;
  throw ConfigError("unknown stage '" + text + "' (expected sentence or document)");
}

void TrainConfig::validate() const {
  if (opt_window < 1) throw ConfigError("opt_window must be >= 1");
  if (!(base_lr > 0.0) || !(new_param_lr > 0.0)) throw ConfigError("learning rates must be > 0");
  if (warmup_steps < 1) throw ConfigError("warmup_steps must be >= 1");
  if (batch_sentences < 1) throw ConfigError("batch_sentences must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) throw ConfigError("label_smoothing must be in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
}

namespace {

std::string number(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

}  // namespace

KeyValueConfig TrainConfig::to_key_values() const {
  KeyValueConfig kv;
  kv.set("stage", to_string(stage));
  kv.set("base_lr", number(base_lr));
  kv.set("new_param_lr", number(new_param_lr));
  kv.set("warmup_steps", std::to_string(warmup_steps));
  kv.set("opt_window", full_window ? "full" : std::to_string(opt_window));
  kv.set("batch_sentences", std::to_string(batch_sentences));
  kv.set("patience", std::to_string(patience));
  kv.set("max_epochs", std::to_string(max_epochs));
  kv.set("max_steps", std::to_string(max_steps));
  kv.set("max_seconds", number(max_seconds));
  kv.set("validate_every", std::to_string(validate_every));
  kv.set("label_smoothing", number(label_smoothing));
  kv.set("weight_decay", number(weight_decay));
  kv.set("beta1", number(beta1));
  kv.set("beta2", number(beta2));
  kv.set("adam_eps", number(adam_eps));
  kv.set("freeze_pretrained", freeze_pretrained ? "1" : "0");
  kv.set("seed", std::to_string(seed));
  return kv;
}

TrainConfig TrainConfig::from_key_values(const KeyValueConfig& kv, const TrainConfig& base) {
  TrainConfig c = base;
  if (auto v = kv.get("stage")) c.stage = parse_stage(*v);
  c.base_lr = kv.get_double("base_lr", c.base_lr);
  c.new_param_lr = kv.get_double("new_param_lr", c.new_param_lr);
  c.warmup_steps = kv.get_int("warmup_steps", c.warmup_steps);
  if (auto v = kv.get("opt_window")) {
    if (*v == "full") {
      c.full_window = true;
    } else {
      c.full_window = false;
      c.opt_window = kv.get_int("opt_window", c.opt_window);
    }
  }
  c.batch_sentences = kv.get_int("batch_sentences", c.batch_sentences);
  c.patience = kv.get_int("patience", c.patience);
  c.max_epochs = kv.get_int("max_epochs", c.max_epochs);
  c.max_steps = static_cast<long>(kv.get_u64("max_steps", static_cast<std::uint64_t>(c.max_steps)));
  c.max_seconds = kv.get_double("max_seconds", c.max_seconds);
  c.validate_every = static_cast<long>(kv.get_u64("validate_every", static_cast<std::uint64_t>(c.validate_every)));
  c.label_smoothing = kv.get_double("label_smoothing", c.label_smoothing);
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.beta1 = kv.get_double("beta1", c.beta1);
  c.beta2 = kv.get_double("beta2", c.beta2);
  c.adam_eps = kv.get_double("adam_eps", c.adam_eps);
  c.freeze_pretrained = kv.get_bool("freeze_pretrained", c.freeze_pretrained);
  c.seed = kv.get_u64("seed", c.seed);
  return c;
}

double lr_at(long step, int warmup, double base_lr) {
  if (step < 1) throw UsageError("lr_at: step must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return base_lr * std::min(s / w, std::sqrt(w / s));
}

int sample_optimization_window(int window, std::mt19937_64& rng) {
  if (window < 1) throw ConfigError("optimization window must be >= 1");
  return std::uniform_int_distribution<int>(1, window)(rng);
}

// ---------------------------------------------------------------------------
// AdamW

template <typename Scalar>
void AdamW<Scalar>::add_group(std::vector<Tensor<Scalar>> params, double lr) {
  Group g;
  g.lr = lr;
  for (auto& p : params) {
    if (!p.requires_grad() || !p.is_leaf()) throw UsageError("AdamW: parameters must be trainable leaves");
    g.slots.push_back({p, Matrix<Scalar>::Zero(p.rows(), p.cols()), Matrix<Scalar>::Zero(p.rows(), p.cols())});
  }
  groups_.push_back(std::move(g));
}

template <typename Scalar>
void AdamW<Scalar>::step(double factor) {
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  const auto b1 = static_cast<Scalar>(opts_.beta1);
  const auto b2 = static_cast<Scalar>(opts_.beta2);
  for (auto& g : groups_) {
    const double lr = g.lr * factor;
    for (auto& s : g.slots) {
      auto& p = s.param.mutable_value();
      if (opts_.weight_decay > 0.0) p *= static_cast<Scalar>(1.0 - lr * opts_.weight_decay);
      if (!s.param.has_grad()) continue;
      const Matrix<Scalar> grad = s.param.grad();
      s.m = b1 * s.m + (Scalar(1) - b1) * grad;
      s.v = b2 * s.v + (Scalar(1) - b2) * grad.cwiseProduct(grad);
      const auto mhat = s.m.array() / static_cast<Scalar>(bc1);
      const auto vhat = s.v.array() / static_cast<Scalar>(bc2);
      p.array() -= static_cast<Scalar>(lr) * mhat / (vhat.sqrt() + static_cast<Scalar>(opts_.eps));
      s.param.zero_grad();
    }
  }
}

template <typename Scalar>
void AdamW<Scalar>::zero_grad() {
  for (auto& g : groups_)
    for (auto& s : g.slots) s.param.zero_grad();
}

template <typename Scalar>
void AdamW<Scalar>::scale_grad(double factor) {
  for (auto& g : groups_) {
    for (auto& s : g.slots) {
      if (s.param.has_grad()) s.param.node()->grad *= static_cast<Scalar>(factor);
    }
  }
}

template class AdamW<float>;
template class AdamW<double>;

// ---------------------------------------------------------------------------
// Checkpoints

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

template <typename Scalar>
Checkpoint make_checkpoint(const Model<Scalar>& model, std::uint64_t step) {
  Checkpoint c;
  c.config = model.config();
  c.step = step;
  for (const auto& p : model.named_parameters()) {
    CheckpointEntry e;
    e.name = p.name;
    e.shape = {static_cast<std::uint64_t>(p.tensor.rows()), static_cast<std::uint64_t>(p.tensor.cols())};
    const Matrix<float> v = p.tensor.value().template cast<float>();
    e.values.assign(v.data(), v.data() + v.size());
    c.entries.push_back(std::move(e));
  }
  return c;
}

namespace {

constexpr char kMagic[4] = {'D', 'M', 'T', 'C'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  template <typename T>
  T get(const char* what) {
    T v{};
    bytes(reinterpret_cast<char*>(&v), sizeof v, what);
    return v;
  }

  void bytes(char* dst, std::size_t n, const char* what) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw CheckpointError(path_ + ": truncated checkpoint while reading " + what);
    }
  }

 private:
  std::istream& in_;
  std::string path_;
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& e : ckpt.entries) {
    if (e.name.size() > 0xFFFF) throw CheckpointError("entry name too long: " + e.name);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(e.shape.size()));
    std::uint64_t count = 1;
    for (auto x : e.shape) {
      put<std::uint64_t>(out, x);
      count *= x;
    }
    if (count != e.values.size()) throw CheckpointError("entry " + e.name + ": shape does not match value count");
    out.write(reinterpret_cast<const char*>(e.values.data()), static_cast<std::streamsize>(sizeof(float) * count));
  }
  const std::string cfg = ckpt.config.to_key_values().to_string();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  put<std::uint64_t>(out, ckpt.step);
  if (!out) throw CheckpointError("write failed for checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint " + path.string());
  const auto size = std::filesystem::file_size(path);
  Reader r(in, path.string());
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw CheckpointError(path.string() + ": bad magic (not a DMTC checkpoint)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kVersion) {
    throw CheckpointError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>("entry count");
  Checkpoint c;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto len = r.get<std::uint16_t>("entry name length");
    e.name.resize(len);
    r.bytes(e.name.data(), len, "entry name");
    const auto rank = r.get<std::uint8_t>("entry rank");
    std::uint64_t n = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      e.shape.push_back(r.get<std::uint64_t>("entry extent"));
      n *= e.shape.back();
    }
    if (n > size) throw CheckpointError(path.string() + ": entry " + e.name + " claims more values than the file holds");
    e.values.resize(n);
    r.bytes(reinterpret_cast<char*>(e.values.data()), sizeof(float) * n, ("values of " + e.name).c_str());
    if (c.find(e.name)) throw CheckpointError(path.string() + ": duplicate entry " + e.name);
    c.entries.push_back(std::move(e));
  }
  const auto cfg_len = r.get<std::uint32_t>("config length");
  if (cfg_len > size) throw CheckpointError(path.string() + ": corrupt config length");
  std::string cfg(cfg_len, '\0');
  r.bytes(cfg.data(), cfg_len, "config");
  c.config = ModelConfig::from_key_values(KeyValueConfig::parse(cfg));
  c.step = r.get<std::uint64_t>("step");
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError(path.string() + ": trailing bytes");
  return c;
}

template <typename Scalar>
void apply_checkpoint(const Checkpoint& ckpt, Model<Scalar>& model, bool allow_fresh_memory) {
  auto params = model.named_parameters();
  std::vector<const CheckpointEntry*> found(params.size(), nullptr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    const auto* e = ckpt.find(p.name);
    if (e == nullptr) {
      if (p.memory && allow_fresh_memory) continue;
      throw CheckpointError("checkpoint has no entry " + p.name);
    }
    std::uint64_t rows = 1, cols = 1;
    if (e->shape.size() == 2) {
      rows = e->shape[0];
      cols = e->shape[1];
    } else if (e->shape.size() == 1) {
      cols = e->shape[0];
    } else {
      throw ShapeError("checkpoint entry " + p.name + " has rank " + std::to_string(e->shape.size()));
    }
    if (rows != static_cast<std::uint64_t>(p.tensor.rows()) || cols != static_cast<std::uint64_t>(p.tensor.cols())) {
      throw ShapeError("checkpoint entry " + p.name + " has shape " +
                       shape_string(static_cast<Index>(rows), static_cast<Index>(cols)) + " but the model expects " +
                       shape_string(p.tensor.rows(), p.tensor.cols()));
    }
    found[i] = e;
  }
  for (const auto& e : ckpt.entries) {
    const bool known = std::any_of(params.begin(), params.end(), [&](const auto& p) { return p.name == e.name; });
    if (!known) throw CheckpointError("checkpoint entry " + e.name + " has no matching model parameter");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (found[i] == nullptr) continue;
    auto& dst = params[i].tensor.mutable_value();
    const Eigen::Map<const Matrix<float>> src(found[i]->values.data(), dst.rows(), dst.cols());
    dst = src.template cast<Scalar>();
  }
}

template <typename Scalar>
Model<Scalar> model_from_checkpoint(const Checkpoint& ckpt) {
  Model<Scalar> model(ckpt.config);
  apply_checkpoint(ckpt, model);
  return model;
}

template Checkpoint make_checkpoint(const Model<float>&, std::uint64_t);
template Checkpoint make_checkpoint(const Model<double>&, std::uint64_t);
template void apply_checkpoint(const Checkpoint&, Model<float>&, bool);
template void apply_checkpoint(const Checkpoint&, Model<double>&, bool);
template Model<float> model_from_checkpoint(const Checkpoint&);
template Model<double> model_from_checkpoint(const Checkpoint&);

// ---------------------------------------------------------------------------
// Evaluation

double AccuracyReport::plain_accuracy() const {
  return plain_total ? static_cast<double>(plain_correct) / static_cast<double>(plain_total) : 0.0;
}

double AccuracyReport::pron_accuracy(int lo, int hi) const {
  std::size_t total = 0, correct = 0;
  for (const auto& [d, tc] : pronouns) {
    if (d < lo || d > hi) continue;
    total += tc.first;
    correct += tc.second;
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

double AccuracyReport::mean_loss() const {
  return loss_tokens ? loss_sum / static_cast<double>(loss_tokens) : 0.0;
}

namespace {

template <typename Scalar>
struct SentenceRun {
  Tensor<Scalar> loss;
  EncoderOutput<Scalar> enc;
  DecoderOutput<Scalar> dec;
  std::vector<int> targets;
};

template <typename Scalar>
SentenceRun<Scalar> run_sentence(const Model<Scalar>& model, const SentencePair& pair,
                                 const DocumentMemory<Scalar>* mem, const ForwardOptions& opts, double smoothing) {
  SentenceRun<Scalar> r;
  r.enc = encoder_forward(model, pair.src, mem, opts);
  const std::span<const int> inputs(pair.tgt.data(), pair.tgt.size() - 1);
  r.targets.assign(pair.tgt.begin() + 1, pair.tgt.end());
  r.dec = decoder_forward(model, inputs, r.enc.states, mem, opts);
  r.loss = cross_entropy(r.dec.logits, r.targets, smoothing, kPadId);
  return r;
}

template <typename Scalar>
void score_sentence(const SentenceRun<Scalar>& r, const Document& doc, int sentence, AccuracyReport& report) {
  const auto& logits = r.dec.logits.value();
  for (Index k = 0; k < logits.rows(); ++k) {
    Index best = 0;
    logits.row(k).maxCoeff(&best);
    const bool right = static_cast<int>(best) == r.targets[static_cast<std::size_t>(k)];
    if (r.targets[static_cast<std::size_t>(k)] == kEosId) continue;
    if (auto d = doc.distance_at(sentence, static_cast<int>(k))) {
      auto& tc = report.pronouns[*d];
      ++tc.first;
      tc.second += right;
    } else {
      ++report.plain_total;
      report.plain_correct += right;
    }
  }
  report.loss_sum += static_cast<double>(r.loss.item()) * static_cast<double>(r.targets.size());
  report.loss_tokens += r.targets.size();
}

bool has_memory(const ModelConfig& cfg) { return cfg.mem_side != MemorySide::none; }

}  // namespace

template <typename Scalar>
AccuracyReport evaluate_teacher_forced(const Model<Scalar>& model, const std::vector<Document>& docs,
                                       const Vocab& vocab, bool document_mode, double label_smoothing) {
  NoGradGuard no_grad;
  AccuracyReport report;
  const bool recurrent = document_mode && has_memory(model.config());
  for (const auto& doc : docs) {
    const auto pairs = iterate_document(doc, vocab);
    DocumentMemory<Scalar> mem;
    if (recurrent) mem = reset_document_memory(model);
    for (const auto& pair : pairs) {
      ForwardOptions opts;
      opts.step = recurrent ? pair.index : -1;
      auto r = run_sentence(model, pair, recurrent ? &mem : nullptr, opts, label_smoothing);
      score_sentence(r, doc, pair.index, report);
      if (recurrent) mem = advance_document_memory(model, mem, r.enc.memory_inputs, r.dec.memory_inputs, opts);
    }
  }
  return report;
}

template AccuracyReport evaluate_teacher_forced(const Model<float>&, const std::vector<Document>&, const Vocab&,
                                                bool, double);
template AccuracyReport evaluate_teacher_forced(const Model<double>&, const std::vector<Document>&, const Vocab&,
                                                bool, double);

// ---------------------------------------------------------------------------
// Training loops

namespace {

using Clock = std::chrono::steady_clock;

struct ParameterSnapshot {
  std::vector<Matrix<float>> values;

  static ParameterSnapshot take(const Model<float>& model) {
    ParameterSnapshot s;
    for (const auto& p : model.named_parameters()) s.values.push_back(p.tensor.value());
    return s;
  }
  void restore(Model<float>& model) const {
    auto params = model.named_parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i].tensor.mutable_value() = values[i];
  }
};

// Validation, early stopping and budget bookkeeping shared by both stages.
class Trainer {
 public:
  Trainer(Model<float>& model, const std::vector<Document>& valid, const Vocab& vocab, const TrainConfig& cfg,
          const TrainLogSink& sink, bool document_mode)
      : model_(model), valid_(valid), vocab_(vocab), cfg_(cfg), sink_(sink), document_mode_(document_mode),
        start_(Clock::now()) {}

  // Records one optimizer update; returns false when training must stop.
  bool after_update(long step, double lr, double loss, bool epoch_end) {
    if (!std::isfinite(loss)) {
      throw TrainingError("training diverged at step " + std::to_string(step) + ": loss is " + std::to_string(loss) +
                          " (lower the learning rate or raise warmup)");
    }
    TrainLogRow row{step, lr, loss};
    bool stop = false;
    const bool periodic = cfg_.validate_every > 0 && step % cfg_.validate_every == 0;
    if (periodic || (cfg_.validate_every == 0 && epoch_end)) stop = validate(row);
    result_.steps = step;
    result_.log.push_back(row);
    if (sink_) sink_(row);
    if (cfg_.max_steps > 0 && step >= cfg_.max_steps) {
      result_.budget_exhausted = true;
      stop = true;
    }
    if (cfg_.max_seconds > 0.0 && elapsed() >= cfg_.max_seconds) {
      result_.budget_exhausted = true;
      stop = true;
    }
    return !stop;
  }

  // Epoch boundary without a fresh update (validation on epoch end).
  bool end_epoch() {
    ++result_.epochs;
    if (cfg_.validate_every != 0 || result_.log.empty()) return true;
    auto& row = result_.log.back();
    if (!std::isnan(row.valid_loss)) return !result_.early_stopped;
    const bool stop = validate(row);
    // The sink sees the filled-in row a second time.
    if (sink_) sink_(row);
    return !stop;
  }

  TrainResult finish() {
    if (!valid_.empty()) {
      // One last look so updates after the final validation are not lost.
      if (result_.log.empty() || std::isnan(result_.log.back().valid_loss)) {
        const double loss =
            evaluate_teacher_forced(model_, valid_, vocab_, document_mode_, cfg_.label_smoothing).mean_loss();
        if (!best_ || loss < result_.best_valid_loss) {
          result_.best_valid_loss = loss;
          best_ = ParameterSnapshot::take(model_);
        }
      }
      best_->restore(model_);
    }
    result_.seconds = elapsed();
    return std::move(result_);
  }

  double elapsed() const { return std::chrono::duration<double>(Clock::now() - start_).count(); }

 private:
  bool validate(TrainLogRow& row) {
    if (valid_.empty()) return false;
    const auto report = evaluate_teacher_forced(model_, valid_, vocab_, document_mode_, cfg_.label_smoothing);
    row.valid_loss = report.mean_loss();
    row.pron_accuracy = report.pron_accuracy(1);
    if (row.valid_loss < result_.best_valid_loss) {
      result_.best_valid_loss = row.valid_loss;
      best_ = ParameterSnapshot::take(model_);
      bad_ = 0;
    } else if (++bad_ >= cfg_.patience) {
      result_.early_stopped = true;
      return true;
    }
    return false;
  }

  Model<float>& model_;
  const std::vector<Document>& valid_;
  const Vocab& vocab_;
  const TrainConfig& cfg_;
  const TrainLogSink& sink_;
  bool document_mode_;
  Clock::time_point start_;
  TrainResult result_;
  std::optional<ParameterSnapshot> best_;
  int bad_ = 0;
};

std::vector<Tensor<float>> group_params(const Model<float>& model, bool memory) {
  std::vector<Tensor<float>> out;
  for (const auto& p : model.named_parameters()) {
    if (p.memory == memory) out.push_back(p.tensor);
  }
  return out;
}

void clear_all_grads(const Model<float>& model) {
  for (auto& p : model.named_parameters()) p.tensor.zero_grad();
}

}  // namespace

TrainResult sentence_pretrain(Model<float>& model, const std::vector<Document>& train,
                              const std::vector<Document>& valid, const Vocab& vocab, const TrainConfig& cfg,
                              const TrainLogSink& sink) {
  cfg.validate();
  if (cfg.stage != Stage::sentence) throw UsageError("sentence_pretrain: config stage must be 'sentence'");
  if (has_memory(model.config())) throw UsageError("sentence_pretrain: memory must be disabled (mem_side=none)");

  std::vector<SentencePair> pairs;
  for (const auto& doc : train) {
    for (auto& p : iterate_document(doc, vocab)) pairs.push_back(std::move(p));
  }
  if (pairs.empty()) throw UsageError("sentence_pretrain: empty training corpus");

  AdamW<float> opt({cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay});
  opt.add_group(group_params(model, false), cfg.base_lr);
  clear_all_grads(model);
  Trainer trainer(model, valid, vocab, cfg, sink, false);
  std::mt19937_64 order_rng(cfg.seed);
  std::mt19937_64 dropout_rng(cfg.seed ^ 0xD1B54A32D192ED03ULL);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);

  long step = 0;
  bool go = true;
  for (int epoch = 0; epoch < cfg.max_epochs && go; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    for (std::size_t begin = 0; begin < order.size() && go; begin += static_cast<std::size_t>(cfg.batch_sentences)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_sentences));
      const double inv = 1.0 / static_cast<double>(end - begin);
      double loss_sum = 0.0;
      for (std::size_t i = begin; i < end; ++i) {
        ForwardOptions opts;
        opts.rng = &dropout_rng;
        auto r = run_sentence<float>(model, pairs[order[i]], nullptr, opts, cfg.label_smoothing);
        loss_sum += r.loss.item();
        scale(r.loss, static_cast<float>(inv)).backward();
      }
      ++step;
      const double lr = lr_at(step, cfg.warmup_steps, cfg.base_lr);
      opt.step(lr / cfg.base_lr);
      go = trainer.after_update(step, lr, loss_sum * inv, false);
    }
    if (go) go = trainer.end_epoch();
  }
  return trainer.finish();
}

TrainResult document_finetune(Model<float>& model, const std::vector<Document>& train,
                              const std::vector<Document>& valid, const Vocab& vocab, const TrainConfig& cfg,
                              const TrainLogSink& sink) {
  cfg.validate();
  if (cfg.stage != Stage::document) throw UsageError("document_finetune: config stage must be 'document'");
  if (train.empty()) throw UsageError("document_finetune: empty training corpus");

  AdamW<float> opt({cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay});
  if (!cfg.freeze_pretrained) opt.add_group(group_params(model, false), cfg.base_lr);
  opt.add_group(group_params(model, true), cfg.new_param_lr);
  clear_all_grads(model);
  Trainer trainer(model, valid, vocab, cfg, sink, true);
  std::mt19937_64 order_rng(cfg.seed);
  std::mt19937_64 window_rng(cfg.seed ^ 0x8CB92BA72F3D8DD7ULL);
  std::mt19937_64 dropout_rng(cfg.seed ^ 0xD1B54A32D192ED03ULL);
  const bool recurrent = has_memory(model.config());

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  long step = 0;
  int target = 0;  // sentence losses to accumulate before the next update
  int held = 0;
  double loss_sum = 0.0;
  bool go = true;

  auto update = [&] {
    if (held != target) opt.scale_grad(static_cast<double>(target) / static_cast<double>(held));
    ++step;
    const double lr = lr_at(step, cfg.warmup_steps, 1.0);
    opt.step(lr);
    clear_all_grads(model);
    const double mean = loss_sum / static_cast<double>(held);
    held = 0;
    target = 0;
    loss_sum = 0.0;
    return trainer.after_update(step, lr * cfg.base_lr, mean, false);
  };

  for (int epoch = 0; epoch < cfg.max_epochs && go; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    for (std::size_t di = 0; di < order.size() && go; ++di) {
      const auto& doc = train[order[di]];
      const auto pairs = iterate_document(doc, vocab);
      DocumentMemory<float> mem;
      if (recurrent) mem = reset_document_memory(model);
      if (cfg.full_window) target = static_cast<int>(pairs.size());
      for (const auto& pair : pairs) {
        if (target == 0) target = sample_optimization_window(cfg.opt_window, window_rng);
        ForwardOptions opts;
        opts.rng = &dropout_rng;
        opts.step = recurrent ? pair.index : -1;
        auto r = run_sentence<float>(model, pair, recurrent ? &mem : nullptr, opts, cfg.label_smoothing);
        loss_sum += r.loss.item();
        scale(r.loss, 1.0f / static_cast<float>(target)).backward();
        ++held;
        if (recurrent) mem = advance_document_memory(model, mem, r.enc.memory_inputs, r.dec.memory_inputs, opts);
        if (held == target) {
          go = update();
          if (!go) break;
        }
      }
      if (cfg.full_window && held > 0 && go) go = update();
    }
    if (held > 0 && go) go = update();
    if (go) go = trainer.end_epoch();
  }
  return trainer.finish();
}

std::string train_log_line(const TrainLogRow& row) {
  std::ostringstream s;
  s.precision(9);
  auto field = [&](double v) {
    if (!std::isnan(v)) s << v;
  };
  s << row.step << ',';
  field(row.lr);
  s << ',';
  field(row.train_loss);
  s << ',';
  field(row.valid_loss);
  s << ',';
  field(row.pron_accuracy);
  return s.str();
}

void write_train_log(const std::vector<TrainLogRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write training log " + path.string());
  out << "step,lr,train_loss,valid_loss,pron_accuracy\n";
  for (const auto& r : rows) out << train_log_line(r) << '\n';
}

}  // namespace docmem
