#pragma once

#include "docmem/config.hpp"
#include "docmem/corpus.hpp"
#include "docmem/model.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace docmem {

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Stage { sentence, document };

std::string to_string(Stage stage);
Stage parse_stage(const std::string& text);

struct TrainConfig {
  Stage stage = Stage::sentence;
  // Sentence stage: the only rate. Document stage: rate of pretrained weights.
  double base_lr = 5e-4;
  // Document stage: rate of the memory parameters.
  double new_param_lr = 3e-4;
  int warmup_steps = 4000;
  // Upper bound W of the sampled accumulation count.
  int opt_window = 1;
  // Accumulate a whole document per update (W = "full").
  bool full_window = false;
  // Sentence stage: sentence losses per update.
  int batch_sentences = 1;
  int patience = 5;
  int max_epochs = 20;
  long max_steps = 0;        // 0 = unbounded
  double max_seconds = 0.0;  // 0 = unbounded
  // Validation every this many updates; 0 = once per epoch.
  long validate_every = 0;
  double label_smoothing = 0.1;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-9;
  // Document stage: update memory parameters only.
  bool freeze_pretrained = false;
  std::uint64_t seed = 1;

  void validate() const;
  KeyValueConfig to_key_values() const;
  // Unknown keys are ignored. `opt_window` accepts an integer or "full".
  static TrainConfig from_key_values(const KeyValueConfig& kv, const TrainConfig& base);
};

// base_lr * min(step / warmup, sqrt(warmup / step)).
double lr_at(long step, int warmup, double base_lr);

// Uniform integer in [1, W].
int sample_optimization_window(int window, std::mt19937_64& rng);

// Adam with bias-corrected moments and decoupled weight decay applied as
// p <- p * (1 - lr * wd) before the adaptive step.
template <typename Scalar>
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;
    double weight_decay = 0.0;
  };

  explicit AdamW(Options opts) : opts_(opts) {}

  // Parameters of one group share a peak learning rate.
  void add_group(std::vector<Tensor<Scalar>> params, double lr);
  // lr of group g is lr_g * factor. Reads and then clears parameter grads.
  void step(double factor);
  void zero_grad();
  // Multiplies every stored gradient by s.
  void scale_grad(double s);
  long steps() const { return t_; }
  std::size_t group_count() const { return groups_.size(); }

 private:
  struct Slot {
    Tensor<Scalar> param;
    Matrix<Scalar> m;
    Matrix<Scalar> v;
  };
  struct Group {
    std::vector<Slot> slots;
    double lr = 0.0;
  };
  Options opts_;
  std::vector<Group> groups_;
  long t_ = 0;
};

struct CheckpointEntry {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<float> values;
  bool operator==(const CheckpointEntry&) const = default;
};

struct Checkpoint {
  std::vector<CheckpointEntry> entries;
  ModelConfig config;
  std::uint64_t step = 0;

  const CheckpointEntry* find(const std::string& name) const;
};

template <typename Scalar>
Checkpoint make_checkpoint(const Model<Scalar>& model, std::uint64_t step = 0);

// Binary layout, little-endian: "DMTC", version u32, entry count u32; per
// entry: name length u16, name bytes, rank u8, extents u64 each, f32 values
// row-major. A trailer follows: config text length u32, key=value config
// text, step u64.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename Scalar>
void save_checkpoint(const Model<Scalar>& model, const std::filesystem::path& path, std::uint64_t step = 0) {
  save_checkpoint(make_checkpoint(model, step), path);
}

// Copies entries into `model`. Every non-memory parameter must be present
// with a matching shape; with `allow_fresh_memory` absent memory parameters
// keep their initialization. Extra entries are rejected. Nothing is written
// unless every entry checks out.
template <typename Scalar>
void apply_checkpoint(const Checkpoint& ckpt, Model<Scalar>& model, bool allow_fresh_memory = false);

// A model built from the checkpoint's own config snapshot.
template <typename Scalar>
Model<Scalar> model_from_checkpoint(const Checkpoint& ckpt);

struct TrainLogRow {
  long step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  // NaN unless a validation ran after this update.
  double valid_loss = std::numeric_limits<double>::quiet_NaN();
  double pron_accuracy = std::numeric_limits<double>::quiet_NaN();
};

using TrainLogSink = std::function<void(const TrainLogRow&)>;

struct TrainResult {
  long steps = 0;
  int epochs = 0;
  double best_valid_loss = std::numeric_limits<double>::infinity();
  bool early_stopped = false;
  bool budget_exhausted = false;
  double seconds = 0.0;
  std::vector<TrainLogRow> log;
};

// Token accuracy under teacher forcing.
struct AccuracyReport {
  std::size_t plain_total = 0;
  std::size_t plain_correct = 0;
  // distance -> (total, correct)
  std::map<int, std::pair<std::size_t, std::size_t>> pronouns;
  double loss_sum = 0.0;
  std::size_t loss_tokens = 0;

  double plain_accuracy() const;
  // Over pronouns with distance in [lo, hi].
  double pron_accuracy(int lo = 1, int hi = std::numeric_limits<int>::max()) const;
  double mean_loss() const;
};

// Document mode runs the memory recurrence (when the model has one) with
// gold-target decoder states; otherwise every sentence is independent.
template <typename Scalar>
AccuracyReport evaluate_teacher_forced(const Model<Scalar>& model, const std::vector<Document>& docs,
                                       const Vocab& vocab, bool document_mode, double label_smoothing = 0.0);

// Shuffled single-sentence training with early stopping on sentence-level
// validation loss. The best parameters are restored on exit.
TrainResult sentence_pretrain(Model<float>& model, const std::vector<Document>& train,
                              const std::vector<Document>& valid, const Vocab& vocab, const TrainConfig& cfg,
                              const TrainLogSink& sink = {});

// Sentence-by-sentence training through each document with the memory
// recurrence, window-sampled gradient accumulation and two learning-rate
// groups. Validation loss is document-mode loss.
TrainResult document_finetune(Model<float>& model, const std::vector<Document>& train,
                              const std::vector<Document>& valid, const Vocab& vocab, const TrainConfig& cfg,
                              const TrainLogSink& sink = {});

// CSV header "step,lr,train_loss,valid_loss,pron_accuracy"; NaN fields empty.
void write_train_log(const std::vector<TrainLogRow>& rows, const std::filesystem::path& path);
std::string train_log_line(const TrainLogRow& row);

}  // namespace docmem
