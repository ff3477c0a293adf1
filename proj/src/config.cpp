#include "docmem/config.hpp"

#include "docmem/tensor.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace docmem {

std::string to_string(MemorySide side) {
  switch (side) {
    case MemorySide::none: return "none";
    case MemorySide::source: return "src";
    case MemorySide::target: return "tgt";
    case MemorySide::both: return "both";
  }
  return "none";
}

std::string to_string(Truncation g) {
  switch (g) {
    case Truncation::immediate: return "0";
    case Truncation::one_step: return "1";
    case Truncation::full: return "full";
  }
  return "1";
}

MemorySide parse_memory_side(const std::string& text) {
  if (text == "none") return MemorySide::none;
  if (text == "src" || text == "source") return MemorySide::source;
  if (text == "tgt" || text == "target") return MemorySide::target;
  if (text == "both") return MemorySide::both;
  throw ConfigError("unknown memory side '" + text + "' (expected src, tgt, both or none)");
}

Truncation parse_truncation(const std::string& text) {
  if (text == "0") return Truncation::immediate;
  if (text == "1") return Truncation::one_step;
  if (text == "full") return Truncation::full;
  throw ConfigError("unknown truncation window '" + text + "' (expected 0, 1 or full)");
}

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text) {
  KeyValueConfig cfg;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(number) + ": expected key=value");
    }
    const std::string key = trim(stripped.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(number) + ": empty key");
    cfg.values_[key] = trim(stripped.substr(eq + 1));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::optional<std::string> KeyValueConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

void KeyValueConfig::merge(const KeyValueConfig& other) {
  for (const auto& [k, v] : other.values_) values_[k] = v;
}

std::string KeyValueConfig::to_string() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

int KeyValueConfig::get_int(const std::string& key, int fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    int parsed = std::stoi(*v, &used);
    if (used != v->size()) throw std::invalid_argument(*v);
    return parsed;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + *v + "'");
  }
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    double parsed = std::stod(*v, &used);
    if (used != v->size()) throw std::invalid_argument(*v);
    return parsed;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + *v + "'");
  }
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  if (*v == "1" || *v == "true" || *v == "yes") return true;
  if (*v == "0" || *v == "false" || *v == "no") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + *v + "'");
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    auto parsed = std::stoull(*v, &used);
    if (used != v->size()) throw std::invalid_argument(*v);
    return parsed;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected an unsigned integer, got '" + *v + "'");
  }
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ConfigError("expected a comma-separated integer list, got '" + text + "'");
    }
  }
  return out;
}

void ModelConfig::validate() const {
  if (n_layers < 1) throw ConfigError("n_layers must be >= 1");
  if (d_model < 2 || d_model % 2 != 0) throw ConfigError("d_model must be even and >= 2");
  if (n_heads < 1 || d_model % n_heads != 0) {
    throw ConfigError("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                      std::to_string(n_heads) + ")");
  }
  if (d_ffn < 1) throw ConfigError("d_ffn must be >= 1");
  if (vocab_size < 5) throw ConfigError("vocab_size must cover the reserved ids");
  if (max_sentence_len < 1) throw ConfigError("max_sentence_len must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
  if (mem_size < 1) throw ConfigError("mem_size must be >= 1");
  for (int l : mem_layers) {
    if (l < 0 || l >= n_layers) {
      throw ConfigError("memory layer " + std::to_string(l) + " outside [0, " + std::to_string(n_layers) + ")");
    }
  }
}

std::vector<int> ModelConfig::memory_layers() const {
  if (mem_side == MemorySide::none) return {};
  if (mem_layers.empty()) return {n_layers - 1};
  std::vector<int> out = mem_layers;
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

bool ModelConfig::is_memory_layer(int layer) const {
  const auto layers = memory_layers();
  return std::find(layers.begin(), layers.end(), layer) != layers.end();
}

KeyValueConfig ModelConfig::to_key_values() const {
  KeyValueConfig kv;
  kv.set("n_layers", std::to_string(n_layers));
  kv.set("d_model", std::to_string(d_model));
  kv.set("n_heads", std::to_string(n_heads));
  kv.set("d_ffn", std::to_string(d_ffn));
  kv.set("vocab_size", std::to_string(vocab_size));
  kv.set("max_sentence_len", std::to_string(max_sentence_len));
  std::ostringstream drop;
  drop.precision(17);
  drop << dropout;
  kv.set("dropout", drop.str());
  kv.set("mem_size", std::to_string(mem_size));
  kv.set("mem_side", docmem::to_string(mem_side));
  std::string layers;
  for (std::size_t i = 0; i < mem_layers.size(); ++i) layers += (i ? "," : "") + std::to_string(mem_layers[i]);
  kv.set("mem_layers", layers);
  kv.set("trunc_window", docmem::to_string(truncation));
  kv.set("strict_eq5", strict_eq5 ? "1" : "0");
  kv.set("zero_init_output_proj", zero_init_output_proj ? "1" : "0");
  kv.set("seed", std::to_string(seed));
  return kv;
}

ModelConfig ModelConfig::from_key_values(const KeyValueConfig& kv) { return from_key_values(kv, ModelConfig{}); }

ModelConfig ModelConfig::from_key_values(const KeyValueConfig& kv, const ModelConfig& base) {
  ModelConfig c = base;
  c.n_layers = kv.get_int("n_layers", c.n_layers);
  c.d_model = kv.get_int("d_model", c.d_model);
  c.n_heads = kv.get_int("n_heads", c.n_heads);
  c.d_ffn = kv.get_int("d_ffn", c.d_ffn);
  c.vocab_size = kv.get_int("vocab_size", c.vocab_size);
  c.max_sentence_len = kv.get_int("max_sentence_len", c.max_sentence_len);
  c.dropout = kv.get_double("dropout", c.dropout);
  c.mem_size = kv.get_int("mem_size", c.mem_size);
  if (auto v = kv.get("mem_side")) c.mem_side = parse_memory_side(*v);
  if (auto v = kv.get("mem_layers")) c.mem_layers = parse_int_list(*v);
  if (auto v = kv.get("trunc_window")) c.truncation = parse_truncation(*v);
  c.strict_eq5 = kv.get_bool("strict_eq5", c.strict_eq5);
  c.zero_init_output_proj = kv.get_bool("zero_init_output_proj", c.zero_init_output_proj);
  c.seed = kv.get_u64("seed", c.seed);
  return c;
}

}  // namespace docmem
