#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fabir/errors.hpp"
#include "fabir/model.hpp"
#include "fabir/optimizer.hpp"

// Checkpoint file layout (all integers little-endian):
//   8 bytes   magic "FABIRCK1"
//   8 bytes   manifest length N (uint64)
//   N bytes   manifest, compact JSON with sorted keys
//   rest      payload: IEEE-754 binary32 values, little-endian
// The manifest's "tensors" table gives each tensor's name, shape, trainable
// flag and offset/count in payload elements.

namespace fabir {

inline constexpr char kCheckpointMagic[9] = "FABIRCK1";

struct Checkpoint {
  nlohmann::json manifest;
  std::vector<float> payload;
  std::size_t stray_bytes = 0;  // payload bytes beyond the last whole value

  std::string serialize() const {
    const std::string m = manifest.dump();
    std::string out(kCheckpointMagic, 8);
    const std::uint64_t n = m.size();
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((n >> (8 * b)) & 0xFF));
    out += m;
    out.reserve(out.size() + 4 * payload.size());
    for (float f : payload) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
    }
    return out;
  }

  static Checkpoint parse(const std::string& bytes) {
    if (bytes.size() < 16 || bytes.compare(0, 8, kCheckpointMagic) != 0) throw CheckpointError("not a checkpoint file (bad magic)");
    std::uint64_t n = 0;
    for (int b = 0; b < 8; ++b) n |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + b])) << (8 * b);
    if (n > bytes.size() - 16) throw CheckpointError("checkpoint manifest truncated");
    Checkpoint c;
    try {
      c.manifest = nlohmann::json::parse(bytes.substr(16, n));
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
    }
    const std::size_t payload_bytes = bytes.size() - 16 - n;
    c.payload.resize(payload_bytes / 4);
    for (std::size_t i = 0; i < c.payload.size(); ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b)
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[16 + n + 4 * i + b])) << (8 * b);
      std::memcpy(&c.payload[i], &bits, 4);
    }
    c.stray_bytes = payload_bytes % 4;
    return c;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot open '" + path + "' for writing");
    const std::string bytes = serialize();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("failed writing '" + path + "'");
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    Checkpoint c = parse(ss.str());
    return c;
  }
};

namespace detail {

template <typename T>
void append_tensor(Checkpoint& c, nlohmann::json& table, const std::string& name, const Shape& shape,
                   const std::vector<T>& values, bool trainable) {
  table.push_back({{"name", name}, {"shape", shape}, {"offset", c.payload.size()}, {"count", values.size()},
                   {"trainable", trainable}});
  for (T v : values) c.payload.push_back(static_cast<float>(v));
}

}  // namespace detail

/// Snapshot of a model, its optimizer state and the training history so far.
template <typename T>
Checkpoint make_checkpoint(const Model<T>& model, const AdamState<T>* adam, std::size_t epoch,
                           const nlohmann::json& history = nlohmann::json::array()) {
  Checkpoint c;
  auto& m = c.manifest;
  m["format"] = "fabir-checkpoint";
  m["version"] = 1;
  m["config"] = model.config.to_kv();
  m["vocab"] = model.vocab.tokens();
  m["epoch"] = epoch;
  m["history"] = history;
  nlohmann::json table = nlohmann::json::array();
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const auto& p = model.params[i];
    detail::append_tensor(c, table, p.name, p.tensor.shape(), p.tensor.values(), model.params.is_trainable(i));
  }
  if (adam) {
    m["optimizer"] = {{"step", adam->step}, {"beta1", adam->hyper.beta1}, {"beta2", adam->hyper.beta2}, {"eps", adam->hyper.eps}};
    for (const auto& [name, values] : adam->m) detail::append_tensor(c, table, "adam.m/" + name, Shape{values.size()}, values, false);
    for (const auto& [name, values] : adam->v) detail::append_tensor(c, table, "adam.v/" + name, Shape{values.size()}, values, false);
  } else {
    m["optimizer"] = nullptr;
  }
  m["tensors"] = table;
  m["payload_count"] = c.payload.size();
  return c;
}

inline ModelConfig checkpoint_config(const Checkpoint& c) {
  if (!c.manifest.contains("config") || !c.manifest["config"].is_object()) throw CheckpointError("checkpoint has no config");
  std::map<std::string, std::string> kv;
  for (auto it = c.manifest["config"].begin(); it != c.manifest["config"].end(); ++it) kv[it.key()] = it.value().get<std::string>();
  try {
    return ModelConfig::from_kv(kv);
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config invalid: ") + e.what());
  }
}

namespace detail {

// Payload slice for a table entry; names the entry when the payload is short.
inline std::vector<float> tensor_slice(const Checkpoint& c, const nlohmann::json& entry) {
  const std::size_t offset = entry.at("offset").get<std::size_t>();
  const std::size_t count = entry.at("count").get<std::size_t>();
  if (offset + count > c.payload.size()) {
    throw CheckpointError("checkpoint payload too short for tensor '" + entry.at("name").get<std::string>() + "' (needs " +
                          std::to_string(offset + count) + " values, payload has " + std::to_string(c.payload.size()) + ")");
  }
  return {c.payload.begin() + static_cast<std::ptrdiff_t>(offset), c.payload.begin() + static_cast<std::ptrdiff_t>(offset + count)};
}

}  // namespace detail

/// Copies checkpoint tensors into `model` after auditing names and shapes.
/// Restores Adam state too when `adam` is given.
template <typename T>
void restore_checkpoint(const Checkpoint& c, Model<T>& model, AdamState<T>* adam = nullptr) {
  if (c.manifest.value("format", "") != "fabir-checkpoint") throw CheckpointError("not a fabir checkpoint manifest");
  const auto& table = c.manifest.at("tensors");
  const std::size_t declared = c.manifest.value("payload_count", std::size_t{0});
  std::map<std::string, const nlohmann::json*> by_name;
  for (const auto& e : table) by_name[e.at("name").get<std::string>()] = &e;

  // Truncation check in table order so the first damaged tensor is named.
  if (c.payload.size() != declared || c.stray_bytes != 0) {
    for (const auto& e : table) {
      const std::size_t end = e.at("offset").get<std::size_t>() + e.at("count").get<std::size_t>();
      if (end > c.payload.size()) {
        throw CheckpointError("checkpoint payload length mismatch: tensor '" + e.at("name").get<std::string>() +
                              "' extends past the " + std::to_string(c.payload.size()) + " stored values");
      }
    }
    throw CheckpointError("checkpoint payload has " + std::to_string(c.payload.size()) + " values, manifest declares " +
                          std::to_string(declared));
  }

  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const auto& p = model.params[i];
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks parameter '" + p.name + "'");
    const auto shape = it->second->at("shape").template get<Shape>();
    if (shape != p.tensor.shape()) {
      throw CheckpointError("parameter '" + p.name + "' has shape " + shape_str(shape) + " in the checkpoint but " +
                            shape_str(p.tensor.shape()) + " in the model");
    }
  }
  for (const auto& [name, entry] : by_name) {
    if (name.rfind("adam.", 0) == 0) continue;
    if (!model.params.contains(name)) throw CheckpointError("checkpoint parameter '" + name + "' not present in the model");
  }
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const auto& p = model.params[i];
    const auto values = detail::tensor_slice(c, *by_name[p.name]);
    Tensor<T> target = p.tensor;
    auto data = target.mutable_data();
    for (std::size_t k = 0; k < data.size(); ++k) data[k] = static_cast<T>(values[k]);
  }
  if (adam && c.manifest.contains("optimizer") && c.manifest["optimizer"].is_object()) {
    const auto& o = c.manifest["optimizer"];
    adam->step = o.at("step").get<std::size_t>();
    adam->hyper = {o.at("beta1").get<double>(), o.at("beta2").get<double>(), o.at("eps").get<double>()};
    adam->m.clear();
    adam->v.clear();
    for (const auto& [name, entry] : by_name) {
      const bool is_m = name.rfind("adam.m/", 0) == 0;
      const bool is_v = name.rfind("adam.v/", 0) == 0;
      if (!is_m && !is_v) continue;
      const auto values = detail::tensor_slice(c, *entry);
      std::vector<T> converted(values.begin(), values.end());
      (is_m ? adam->m : adam->v)[name.substr(7)] = std::move(converted);
    }
  }
}

/// Rebuilds the model described by a checkpoint (config, vocabulary, weights).
template <typename T>
Model<T> model_from_checkpoint(const Checkpoint& c, AdamState<T>* adam = nullptr,
                               const std::map<std::string, std::string>& overrides = {}) {
  ModelConfig cfg = checkpoint_config(c);
  for (const auto& [k, v] : overrides) cfg.set(k, v);
  cfg.validate();
  const auto tokens = c.manifest.at("vocab").get<std::vector<std::string>>();
  WordVocab<T> vocab(cfg.word_dim);
  // Rows come from the payload during restore; only the token order matters here.
  const std::vector<T> zeros(cfg.word_dim, T(0));
  for (std::size_t i = 2; i < tokens.size(); ++i) vocab.add(tokens[i], zeros);
  Model<T> model = build_model<T>(cfg, std::move(vocab), 0);
  restore_checkpoint(c, model, adam);
  // Keep the vocab's own copy of the rows consistent with the restored table.
  WordVocab<T> restored(cfg.word_dim);
  const auto& table = model.embed.word_table.values();
  for (std::size_t i = 2; i < tokens.size(); ++i) {
    restored.add(tokens[i], std::vector<T>(table.begin() + static_cast<std::ptrdiff_t>(i * cfg.word_dim),
                                           table.begin() + static_cast<std::ptrdiff_t>((i + 1) * cfg.word_dim)));
  }
  model.vocab = std::move(restored);
  return model;
}

}  // namespace fabir
