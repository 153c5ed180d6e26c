#pragma once

#include <charconv>
#include <cstddef>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fabir/errors.hpp"

namespace fabir {

enum class SoftmaxAxis { RowWise, ColumnWise };
enum class SelectorKind { Conv, Linear };

inline std::string to_string(SoftmaxAxis a) { return a == SoftmaxAxis::RowWise ? "row" : "column"; }
inline std::string to_string(SelectorKind k) { return k == SelectorKind::Conv ? "conv" : "linear"; }

/// Architecture hyperparameters. Defaults are the published configuration;
/// the boolean switches mirror the architecture ablations.
struct ModelConfig {
  // Embeddings
  std::size_t word_dim = 100;
  std::size_t char_embed_dim = 8;
  std::size_t char_conv_width = 5;
  std::size_t char_dim = 100;
  std::size_t highway_layers = 2;

  // Transformer-style body
  std::size_t d_model = 100;
  std::size_t n_heads = 4;
  std::size_t ff_hidden_processing = 200;
  std::size_t ff_hidden_reduction = 400;
  std::size_t att_kernel_h = 1;
  std::size_t att_kernel_w = 5;
  std::size_t n_processing_layers = 3;

  // Keep probabilities
  double keep_processing = 0.9;
  double keep_reduction = 0.8;
  double keep_char = 0.75;
  double keep_selector = 0.8;

  // Answer selector
  std::size_t selector_hidden = 32;
  std::size_t selector_kernel = 9;
  std::size_t max_answer_len = 15;

  // Ablation switches
  bool use_char_embed = true;
  bool use_conv_attention = true;
  bool use_reduction_layer = true;
  SoftmaxAxis cross_softmax_axis = SoftmaxAxis::ColumnWise;
  SelectorKind selector_kind = SelectorKind::Conv;
  bool bidirectional_cross = false;
  bool scale_logits = false;

  double layer_norm_eps = 1e-6;

  std::size_t d_input() const { return word_dim + (use_char_embed ? char_dim : 0); }

  void validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError(msg); };
    if (d_model == 0 || n_heads == 0) fail("d_model and n_heads must be positive");
    if (d_model % n_heads != 0) fail("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" + std::to_string(n_heads) + ")");
    if (d_model % 2 != 0) fail("d_model must be even for the position encoding");
    if (word_dim == 0) fail("word_dim must be positive");
    if (use_char_embed && (char_dim == 0 || char_embed_dim == 0 || char_conv_width == 0)) fail("char pipeline dimensions must be positive");
    if (use_reduction_layer) {
      if (d_input() % n_heads != 0) fail("d_input (" + std::to_string(d_input()) + ") must be divisible by n_heads");
      if (d_input() % 2 != 0) fail("d_input must be even for the position encoding");
    }
    if (use_conv_attention) {
      if (att_kernel_h % 2 == 0 || att_kernel_w % 2 == 0) fail("attention kernel sizes must be odd");
    } else if (att_kernel_h != 1 || att_kernel_w != 5) {
      fail("attention kernel size set while convolutional attention is disabled");
    }
    if (selector_kernel % 2 == 0) fail("selector kernel size must be odd");
    if (max_answer_len == 0) fail("max_answer_len must be positive");
    for (double k : {keep_processing, keep_reduction, keep_char, keep_selector}) {
      if (!(k > 0.0) || k > 1.0) fail("keep probabilities must lie in (0, 1]");
    }
    if (!(layer_norm_eps > 0.0)) fail("layer_norm_eps must be positive");
  }

  std::map<std::string, std::string> to_kv() const;
  void set(const std::string& key, const std::string& value);
  static ModelConfig from_kv(const std::map<std::string, std::string>& kv) {
    ModelConfig c;
    for (const auto& [k, v] : kv) c.set(k, v);
    c.validate();
    return c;
  }
};

namespace detail {

inline std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long n = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    n = std::stoull(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  if (pos != v.size()) throw ConfigError("key '" + key + "' expects a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(n);
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double d = 0;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "' expects a number, got '" + v + "'");
  }
  if (pos != v.size()) throw ConfigError("key '" + key + "' expects a number, got '" + v + "'");
  return d;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "' expects true/false, got '" + v + "'");
}

// Shortest text that parses back to the same double.
inline std::string fmt_double(double d) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), d);
  return {buf, r.ptr};
}

struct ConfigField {
  std::function<std::string(const ModelConfig&)> get;
  std::function<void(ModelConfig&, const std::string&, const std::string&)> set;
  const char* help;
};

#define FABIR_SIZE_FIELD(name, help) \
  {#name, {[](const ModelConfig& c) { return std::to_string(c.name); }, [](ModelConfig& c, const std::string& k, const std::string& v) { c.name = parse_size(k, v); }, help}}
#define FABIR_DOUBLE_FIELD(name, help) \
  {#name, {[](const ModelConfig& c) { return fmt_double(c.name); }, [](ModelConfig& c, const std::string& k, const std::string& v) { c.name = parse_double(k, v); }, help}}
#define FABIR_BOOL_FIELD(name, help) \
  {#name, {[](const ModelConfig& c) { return std::string(c.name ? "true" : "false"); }, [](ModelConfig& c, const std::string& k, const std::string& v) { c.name = parse_bool(k, v); }, help}}

inline const std::map<std::string, ConfigField>& model_fields() {
  static const std::map<std::string, ConfigField> fields = {
      FABIR_SIZE_FIELD(word_dim, "width of the frozen word vectors"),
      FABIR_SIZE_FIELD(char_embed_dim, "width of learned character embeddings"),
      FABIR_SIZE_FIELD(char_conv_width, "character convolution width"),
      FABIR_SIZE_FIELD(char_dim, "character-CNN output width"),
      FABIR_SIZE_FIELD(highway_layers, "highway layers after the embedding concat"),
      FABIR_SIZE_FIELD(d_model, "model width"),
      FABIR_SIZE_FIELD(n_heads, "attention heads"),
      FABIR_SIZE_FIELD(ff_hidden_processing, "feedforward hidden size in processing layers"),
      FABIR_SIZE_FIELD(ff_hidden_reduction, "feedforward hidden size in the reduction layer"),
      FABIR_SIZE_FIELD(att_kernel_h, "attention conv kernel height (query axis)"),
      FABIR_SIZE_FIELD(att_kernel_w, "attention conv kernel width (key axis)"),
      FABIR_SIZE_FIELD(n_processing_layers, "number of processing layers"),
      FABIR_DOUBLE_FIELD(keep_processing, "keep probability in processing layers"),
      FABIR_DOUBLE_FIELD(keep_reduction, "keep probability in the reduction layer"),
      FABIR_DOUBLE_FIELD(keep_char, "keep probability before the char convolution"),
      FABIR_DOUBLE_FIELD(keep_selector, "keep probability before selector convolutions"),
      FABIR_SIZE_FIELD(selector_hidden, "answer selector hidden channels"),
      FABIR_SIZE_FIELD(selector_kernel, "answer selector kernel size"),
      FABIR_SIZE_FIELD(max_answer_len, "maximum answer length in tokens"),
      FABIR_BOOL_FIELD(use_char_embed, "character-level embeddings"),
      FABIR_BOOL_FIELD(use_conv_attention, "convolutional attention (else plain multi-head)"),
      FABIR_BOOL_FIELD(use_reduction_layer, "reduction layer (else feedforward reduction)"),
      FABIR_BOOL_FIELD(bidirectional_cross, "also attend passage-over-question into Q"),
      FABIR_BOOL_FIELD(scale_logits, "scale logits by 1/sqrt(d_head)"),
      FABIR_DOUBLE_FIELD(layer_norm_eps, "layer norm epsilon"),
      {"cross_softmax_axis",
       {[](const ModelConfig& c) { return to_string(c.cross_softmax_axis); },
        [](ModelConfig& c, const std::string& k, const std::string& v) {
          if (v == "row") c.cross_softmax_axis = SoftmaxAxis::RowWise;
          else if (v == "column") c.cross_softmax_axis = SoftmaxAxis::ColumnWise;
          else throw ConfigError("key '" + k + "' expects row|column, got '" + v + "'");
        },
        "cross-attention softmax axis: row|column"}},
      {"selector_kind",
       {[](const ModelConfig& c) { return to_string(c.selector_kind); },
        [](ModelConfig& c, const std::string& k, const std::string& v) {
          if (v == "conv") c.selector_kind = SelectorKind::Conv;
          else if (v == "linear") c.selector_kind = SelectorKind::Linear;
          else throw ConfigError("key '" + k + "' expects conv|linear, got '" + v + "'");
        },
        "answer selector: conv|linear"}},
  };
  return fields;
}

#undef FABIR_SIZE_FIELD
#undef FABIR_DOUBLE_FIELD
#undef FABIR_BOOL_FIELD

}  // namespace detail

inline std::map<std::string, std::string> ModelConfig::to_kv() const {
  std::map<std::string, std::string> kv;
  for (const auto& [name, field] : detail::model_fields()) kv[name] = field.get(*this);
  return kv;
}

inline void ModelConfig::set(const std::string& key, const std::string& value) {
  const auto& fields = detail::model_fields();
  auto it = fields.find(key);
  if (it == fields.end()) throw ConfigError("unknown model config key '" + key + "'");
  it->second.set(*this, key, value);
}

/// Parses a flat `key = value` text file. Blank lines and lines starting with
/// '#' are ignored.
inline std::map<std::string, std::string> parse_kv_text(std::istream& in, const std::string& source = "config") {
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline std::map<std::string, std::string> load_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_kv_text(in, path);
}

}  // namespace fabir
