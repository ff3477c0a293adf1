#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace docmem {

enum class MemorySide { none, source, target, both };

// How far gradients travel back through the memory recurrence.
//   immediate: memory is detached as soon as it is produced (g = 0)
//   one_step:  a loss at sentence t reaches sentence t-1 only (g = 1)
//   full:      the whole document stays on the tape (analysis mode)
enum class Truncation { immediate, one_step, full };

std::string to_string(MemorySide side);
std::string to_string(Truncation g);
MemorySide parse_memory_side(const std::string& text);
Truncation parse_truncation(const std::string& text);

// Flat `key=value` configuration text. Blank lines and `#` comments are
// ignored; later keys override earlier ones.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text);
  static KeyValueConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  std::optional<std::string> get(const std::string& key) const;
  const std::map<std::string, std::string>& values() const { return values_; }
  // Keys in `other` win.
  void merge(const KeyValueConfig& other);
  std::string to_string() const;

  int get_int(const std::string& key, int fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;

 private:
  std::map<std::string, std::string> values_;
};

struct ModelConfig {
  int n_layers = 2;
  int d_model = 64;
  int n_heads = 4;
  int d_ffn = 128;
  int vocab_size = 200;
  int max_sentence_len = 64;
  double dropout = 0.1;
  int mem_size = 8;
  MemorySide mem_side = MemorySide::both;
  // Empty means the top layer only.
  std::vector<int> mem_layers;
  Truncation truncation = Truncation::one_step;
  // Output attention replaces the sentence state instead of being added
  // residually and normalized.
  bool strict_eq5 = false;
  // Start the output-attention projection at zero so a freshly attached
  // memory leaves a pretrained model's outputs unchanged.
  bool zero_init_output_proj = true;
  std::uint64_t seed = 1;

  // Throws ConfigError on violated invariants.
  void validate() const;
  std::vector<int> memory_layers() const;
  bool encoder_memory() const { return mem_side == MemorySide::source || mem_side == MemorySide::both; }
  bool decoder_memory() const { return mem_side == MemorySide::target || mem_side == MemorySide::both; }
  bool is_memory_layer(int layer) const;

  KeyValueConfig to_key_values() const;
  // Unknown keys are ignored so model and training settings can share a file.
  static ModelConfig from_key_values(const KeyValueConfig& kv, const ModelConfig& base);
  static ModelConfig from_key_values(const KeyValueConfig& kv);

  bool operator==(const ModelConfig&) const = default;
};

std::vector<int> parse_int_list(const std::string& text);

}  // namespace docmem
