#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fabir/answer_selector.hpp"
#include "fabir/config.hpp"
#include "fabir/context.hpp"
#include "fabir/data_io.hpp"
#include "fabir/embeddings.hpp"
#include "fabir/layers.hpp"
#include "fabir/parameters.hpp"

namespace fabir {

/// Full network: embeddings -> reduction layer -> processing layers -> answer selector.
template <typename T>
struct Model {
  ModelConfig config;
  WordVocab<T> vocab;
  ParameterSet<T> params;
  EmbeddingParams<T> embed;
  ReductionLayerParams<T> reduction;
  std::vector<ProcessingLayerParams<T>> layers;
  SelectorParams<T> selector;

  /// Distributions [p_len x 2] for one example whose encodings are padded to
  /// masks.p_len / masks.q_len.
  Tensor<T> forward(const EncodedText& passage, const EncodedText& question, const SequenceMasks& masks,
                    const ForwardContext& ctx = {}) const {
    if (passage.size() != masks.p_len || question.size() != masks.q_len) {
      throw DimensionError("forward: encodings of " + std::to_string(passage.size()) + "/" +
                           std::to_string(question.size()) + " tokens for masks " + std::to_string(masks.p_len) + "/" +
                           std::to_string(masks.q_len));
    }
    const Tensor<T> omega_p = embed_text(passage, embed, config, ctx);
    const Tensor<T> omega_q = embed_text(question, embed, config, ctx);
    auto [p, q] = reduction_layer(omega_p, omega_q, masks, reduction, config, ctx);
    for (const auto& layer : layers) std::tie(p, q) = processing_layer(p, q, masks, layer, config, config.keep_processing, ctx);
    return selector_forward(p, selector, masks.p_valid, config, ctx);
  }

  std::size_t trainable_parameter_count() const { return params.trainable_count(); }
};

template <typename T>
Model<T> build_model(const ModelConfig& config, WordVocab<T> vocab, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  Model<T> m;
  m.config = config;
  m.vocab = std::move(vocab);
  m.embed = make_embedding_params(m.params, config, m.vocab, rng);
  m.reduction = make_reduction_layer(m.params, "reduction", config, rng);
  for (std::size_t l = 0; l < config.n_processing_layers; ++l) {
    m.layers.push_back(make_processing_layer(m.params, "layers." + std::to_string(l), config.d_model,
                                             config.ff_hidden_processing, config, rng));
  }
  m.selector = make_selector(m.params, "selector", config, rng);
  return m;
}

/// Per-module trainable parameter totals keyed by the first component of the
/// parameter name (embed, reduction, layers, selector).
template <typename T>
std::map<std::string, std::size_t> parameter_breakdown(const ParameterSet<T>& params) {
  std::map<std::string, std::size_t> out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params.is_trainable(i)) continue;
    const auto& name = params[i].name;
    out[name.substr(0, name.find('.'))] += params[i].tensor.numel();
  }
  return out;
}

/// Example ready for the model: token ids plus the first alignable gold span.
struct PreparedExample {
  TokenizedExample source;
  EncodedText passage;
  EncodedText question;
  std::optional<GoldSpan> gold;
};

template <typename T>
PreparedExample prepare_example(TokenizedExample tok, const WordVocab<T>& vocab) {
  PreparedExample p;
  p.passage = encode_tokens(token_texts(tok.passage_tokens), vocab);
  p.question = encode_tokens(token_texts(tok.question_tokens), vocab);
  if (!tok.spans.empty()) p.gold = tok.spans.front();
  p.source = std::move(tok);
  return p;
}

/// Mean negative log-likelihood over the examples of one batch.
template <typename T>
Tensor<T> batch_loss(const Model<T>& model, const std::vector<PreparedExample>& data, const Batch& batch,
                     const ForwardContext& ctx) {
  std::vector<Tensor<T>> losses;
  for (std::size_t idx : batch.indices) {
    const auto& ex = data[idx];
    if (!ex.gold) throw DataError("example '" + ex.source.id + "' has no aligned answer span");
    const SequenceMasks masks{batch.passage_len, ex.passage.size(), batch.question_len, ex.question.size()};
    const Tensor<T> dist = model.forward(pad_encoded(ex.passage, batch.passage_len),
                                         pad_encoded(ex.question, batch.question_len), masks, ctx);
    losses.push_back(nll_loss(dist, ex.gold->start, ex.gold->end, ex.source.id));
  }
  return mean(concat(losses, 0));
}

}  // namespace fabir
