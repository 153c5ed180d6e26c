#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "fabir/config.hpp"
#include "fabir/context.hpp"
#include "fabir/ops.hpp"
#include "fabir/parameters.hpp"

namespace fabir {

inline std::string ascii_lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

/// Frozen word vectors. Row 0 is PAD (all zeros), row 1 is UNK; the UNK
/// vector itself is a trainable model parameter, so its row here stays zero.
template <typename T>
class WordVocab {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;

  explicit WordVocab(std::size_t dim = 100) : dim_(dim) {
    tokens_ = {"<pad>", "<unk>"};
    rows_.assign(2 * dim, T(0));
  }

  // Returns false if the (lowercased) token was already present.
  bool add(const std::string& token, const std::vector<T>& vec) {
    if (vec.size() != dim_) throw DimensionError("word vector width " + std::to_string(vec.size()) + " != " + std::to_string(dim_));
    const std::string key = ascii_lower(token);
    if (index_.count(key)) return false;
    index_[key] = tokens_.size();
    tokens_.push_back(key);
    rows_.insert(rows_.end(), vec.begin(), vec.end());
    return true;
  }

  std::size_t lookup(const std::string& token) const {
    auto it = index_.find(ascii_lower(token));
    return it == index_.end() ? kUnk : it->second;
  }

  std::size_t size() const { return tokens_.size(); }
  std::size_t dim() const { return dim_; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<T>& rows() const { return rows_; }

  Tensor<T> matrix() const { return Tensor<T>({size(), dim_}, rows_); }

 private:
  std::size_t dim_;
  std::vector<std::string> tokens_;
  std::vector<T> rows_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Reads a whitespace-separated text file: one token then `dim` floats per line.
/// Duplicate tokens keep their first occurrence.
template <typename T>
WordVocab<T> load_word_vectors(std::istream& in, std::size_t dim = 100, const std::string& source = "word vectors") {
  WordVocab<T> vocab(dim);
  std::string line;
  std::size_t lineno = 0;
  std::vector<T> vec;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string token;
    ls >> token;
    vec.clear();
    std::string field;
    while (ls >> field) {
      try {
        std::size_t pos = 0;
        const double v = std::stod(field, &pos);
        if (pos != field.size()) throw std::invalid_argument(field);
        vec.push_back(static_cast<T>(v));
      } catch (const std::exception&) {
        throw ParseError(source + ": line " + std::to_string(lineno) + ": invalid number '" + field + "'");
      }
    }
    if (vec.size() != dim) {
      throw ParseError(source + ": line " + std::to_string(lineno) + ": expected " + std::to_string(dim) +
                       " values after the token, found " + std::to_string(vec.size()));
    }
    vocab.add(token, vec);
  }
  return vocab;
}

template <typename T>
WordVocab<T> load_word_vectors(const std::string& path, std::size_t dim = 100) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open word vector file '" + path + "'");
  return load_word_vectors<T>(in, dim, path);
}

/// Printable ASCII plus PAD (index 0) and UNK (index 1).
struct CharVocab {
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kSize = 2 + 95;

  static std::size_t id(char c) {
    const auto u = static_cast<unsigned char>(c);
    return (u >= 32 && u <= 126) ? 2 + (u - 32) : kUnk;
  }
};

// Token-level ids for one piece of text.
struct EncodedText {
  std::vector<std::size_t> word_ids;
  std::vector<std::vector<std::size_t>> char_ids;
  std::size_t size() const { return word_ids.size(); }
};

template <typename T>
EncodedText encode_tokens(const std::vector<std::string>& tokens, const WordVocab<T>& vocab) {
  EncodedText enc;
  for (const auto& tok : tokens) {
    enc.word_ids.push_back(vocab.lookup(tok));
    std::vector<std::size_t> chars;
    for (char c : tok) chars.push_back(CharVocab::id(c));
    enc.char_ids.push_back(std::move(chars));
  }
  return enc;
}

// Appends PAD tokens (PAD word, no characters) up to `len`.
inline EncodedText pad_encoded(EncodedText enc, std::size_t len) {
  while (enc.word_ids.size() < len) {
    enc.word_ids.push_back(0);
    enc.char_ids.emplace_back();
  }
  return enc;
}

template <typename T>
struct HighwayLayerParams {
  Tensor<T> transform_w, transform_b, gate_w, gate_b;
};

template <typename T>
struct EmbeddingParams {
  Tensor<T> word_table;  // frozen, [V x word_dim]
  Tensor<T> unk;         // [1 x word_dim]
  Tensor<T> char_table;  // [97 x char_embed_dim], PAD row zero and frozen
  Tensor<T> char_kernel; // [1 x width x char_embed_dim x char_dim]
  Tensor<T> char_bias;   // [char_dim]
  std::vector<HighwayLayerParams<T>> highway;
};

template <typename T>
EmbeddingParams<T> make_embedding_params(ParameterSet<T>& params, const ModelConfig& cfg, const WordVocab<T>& vocab,
                                         Rng& rng) {
  if (vocab.dim() != cfg.word_dim) {
    throw ConfigError("word vectors have width " + std::to_string(vocab.dim()) + " but word_dim is " +
                      std::to_string(cfg.word_dim));
  }
  EmbeddingParams<T> p;
  p.word_table = params.add("embed.word_vectors", vocab.matrix(), false);
  p.unk = params.add("embed.unk", normal_init<T>({1, cfg.word_dim}, 0.1, rng));
  if (cfg.use_char_embed) {
    Tensor<T> table = normal_init<T>({CharVocab::kSize, cfg.char_embed_dim}, 0.5, rng);
    std::fill_n(table.mutable_data().begin(), cfg.char_embed_dim, T(0));
    p.char_table = params.add("embed.char_table", table);
    const std::size_t w = cfg.char_conv_width;
    p.char_kernel = params.add("embed.char_conv.kernel",
                               xavier_uniform<T>({1, w, cfg.char_embed_dim, cfg.char_dim}, w * cfg.char_embed_dim, w * cfg.char_dim, rng));
    p.char_bias = params.add("embed.char_conv.bias", Tensor<T>::zeros({cfg.char_dim}));
  }
  const std::size_t d = cfg.d_input();
  for (std::size_t l = 0; l < cfg.highway_layers; ++l) {
    const std::string prefix = "embed.highway." + std::to_string(l) + ".";
    HighwayLayerParams<T> h;
    h.transform_w = params.add(prefix + "transform.w", xavier_uniform<T>({d, d}, d, d, rng));
    h.transform_b = params.add(prefix + "transform.b", Tensor<T>::zeros({d}));
    h.gate_w = params.add(prefix + "gate.w", xavier_uniform<T>({d, d}, d, d, rng));
    h.gate_b = params.add(prefix + "gate.b", Tensor<T>::zeros({d}));
    p.highway.push_back(h);
  }
  return p;
}

/// Character-CNN word vectors before the tanh squashing, one row per token.
///
/// Each word is padded with PAD characters to max(length, kernel width), the
/// kernel slides over time without padding, and the responses are max-pooled
/// over that word's own windows.
template <typename T>
Tensor<T> char_embed(const std::vector<std::vector<std::size_t>>& char_ids, const EmbeddingParams<T>& p,
                     const ModelConfig& cfg, const ForwardContext& ctx) {
  const std::size_t n = char_ids.size();
  const std::size_t width = cfg.char_conv_width;
  std::size_t max_len = width;
  for (const auto& w : char_ids) max_len = std::max(max_len, w.size());
  std::vector<std::size_t> flat(n * max_len, CharVocab::kPad);
  for (std::size_t t = 0; t < n; ++t) std::copy(char_ids[t].begin(), char_ids[t].end(), flat.begin() + t * max_len);

  Tensor<T> chars = gather_rows(p.char_table, flat, CharVocab::kPad);
  chars = ctx.drop(chars, cfg.keep_char);
  chars = reshape(chars, {n, max_len, cfg.char_embed_dim});
  Tensor<T> conv = add(conv2d(chars, p.char_kernel, Padding::Valid), p.char_bias);

  const std::size_t windows = max_len - width + 1;
  if (windows > 1) {
    // Windows past a word's own padded length are excluded from the max.
    std::vector<T> offset(n * windows, T(0));
    bool any = false;
    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t own = std::max(char_ids[t].size(), width) - width + 1;
      for (std::size_t k = own; k < windows; ++k) {
        offset[t * windows + k] = T(-1e9);
        any = true;
      }
    }
    if (any) conv = add(conv, Tensor<T>({n, windows, 1}, std::move(offset)));
  }
  return max_over_axis(conv, 1);
}

/// One highway layer: t * ReLU(x Wh + bh) + (1 - t) * x with t = sigmoid(x Wt + bt).
template <typename T>
Tensor<T> highway_layer(const Tensor<T>& x, const HighwayLayerParams<T>& h) {
  const Tensor<T> gate = sigmoid(add(matmul(x, h.gate_w), h.gate_b));
  const Tensor<T> transformed = relu(add(matmul(x, h.transform_w), h.transform_b));
  return add(x, mul(gate, sub(transformed, x)));
}

template <typename T>
Tensor<T> highway(const Tensor<T>& x, const EmbeddingParams<T>& p) {
  Tensor<T> y = x;
  for (const auto& h : p.highway) y = highway_layer(y, h);
  return y;
}

/// Embedding matrix for a token sequence: rows are
/// Highway([word vector; tanh(char vector)]), width d_input.
template <typename T>
Tensor<T> embed_text(const EncodedText& text, const EmbeddingParams<T>& p, const ModelConfig& cfg,
                     const ForwardContext& ctx) {
  const std::size_t n = text.size();
  if (n == 0) throw ContractError("embed_text needs at least one token");
  Tensor<T> words = gather_rows(p.word_table, text.word_ids);
  std::vector<T> unk_mask(n, T(0));
  bool any_unk = false;
  for (std::size_t t = 0; t < n; ++t) {
    if (text.word_ids[t] == WordVocab<T>::kUnk) {
      unk_mask[t] = T(1);
      any_unk = true;
    }
  }
  if (any_unk) words = add(words, matmul(Tensor<T>({n, 1}, std::move(unk_mask)), p.unk));
  Tensor<T> x = words;
  if (cfg.use_char_embed) x = concat<T>({words, tanh(char_embed(text.char_ids, p, cfg, ctx))}, 1);
  return highway(x, p);
}

}  // namespace fabir
