#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>

#include "fabir/attention.hpp"
#include "fabir/config.hpp"
#include "fabir/context.hpp"
#include "fabir/ops.hpp"
#include "fabir/parameters.hpp"
#include "fabir/positional_encoding.hpp"

namespace fabir {

template <typename T>
struct FeedForwardParams {
  Tensor<T> w1, b1, w2, b2;
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gain, bias;
};

template <typename T>
FeedForwardParams<T> make_feed_forward(ParameterSet<T>& params, const std::string& prefix, std::size_t d_in,
                                       std::size_t d_hidden, std::size_t d_out, Rng& rng) {
  FeedForwardParams<T> p;
  p.w1 = params.add(prefix + ".w1", xavier_uniform<T>({d_in, d_hidden}, d_in, d_hidden, rng));
  p.b1 = params.add(prefix + ".b1", Tensor<T>::zeros({d_hidden}));
  p.w2 = params.add(prefix + ".w2", xavier_uniform<T>({d_hidden, d_out}, d_hidden, d_out, rng));
  p.b2 = params.add(prefix + ".b2", Tensor<T>::zeros({d_out}));
  return p;
}

template <typename T>
LayerNormParams<T> make_layer_norm(ParameterSet<T>& params, const std::string& prefix, std::size_t d) {
  return {params.add(prefix + ".gain", Tensor<T>::full({d}, T(1))), params.add(prefix + ".bias", Tensor<T>::zeros({d}))};
}

// ReLU(x W1 + b1) W2 + b2, applied to every row.
template <typename T>
Tensor<T> feed_forward(const Tensor<T>& x, const FeedForwardParams<T>& p) {
  return add(matmul(relu(add(matmul(x, p.w1), p.b1)), p.w2), p.b2);
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const LayerNormParams<T>& p, T eps) {
  return layer_norm(x, p.gain, p.bias, eps);
}

/// Residual sublayer: LayerNorm(x + dropout(fx)) where fx = f(x).
template <typename T>
Tensor<T> sublayer_wrap(const Tensor<T>& x, const Tensor<T>& fx, const LayerNormParams<T>& norm, T eps,
                        double keep_prob = 1.0, const ForwardContext& ctx = {}) {
  if (fx.shape() != x.shape()) {
    throw DimensionError("sublayer output " + shape_str(fx.shape()) + " does not match residual input " + shape_str(x.shape()));
  }
  return layer_norm(add(x, ctx.drop(fx, keep_prob)), norm, eps);
}

// Validity of the passage and question positions of one (possibly padded) example.
struct SequenceMasks {
  std::size_t p_len = 0, p_valid = 0;
  std::size_t q_len = 0, q_valid = 0;

  static SequenceMasks unpadded(std::size_t p, std::size_t q) { return {p, p, q, q}; }
  AttentionMask passage_self() const { return AttentionMask::from_lengths(p_len, p_valid, p_len, p_valid); }
  AttentionMask question_self() const { return AttentionMask::from_lengths(q_len, q_valid, q_len, q_valid); }
  AttentionMask passage_over_question() const { return AttentionMask::from_lengths(p_len, p_valid, q_len, q_valid); }
  AttentionMask question_over_passage() const { return AttentionMask::from_lengths(q_len, q_valid, p_len, p_valid); }
};

template <typename T>
struct ProcessingLayerParams {
  AttentionParams<T> self_att;  // shared by the P and Q streams
  AttentionParams<T> cross_att;
  std::optional<AttentionParams<T>> cross_q_att;  // bidirectional ablation only
  FeedForwardParams<T> ff_p, ff_q;
  LayerNormParams<T> norm_self_p, norm_self_q, norm_cross_p, norm_ff_p, norm_ff_q;
  std::optional<LayerNormParams<T>> norm_cross_q;
};

template <typename T>
ProcessingLayerParams<T> make_processing_layer(ParameterSet<T>& params, const std::string& prefix, std::size_t d,
                                               std::size_t d_hidden, const ModelConfig& cfg, Rng& rng) {
  ProcessingLayerParams<T> p;
  p.self_att.proj = make_head_projections(params, prefix + ".self", d, d, d, d, cfg.n_heads, rng);
  p.self_att.kernel = make_conv_kernel(params, prefix + ".self", cfg, rng);
  p.cross_att.proj = make_head_projections(params, prefix + ".cross", d, d, d, d, cfg.n_heads, rng);
  p.cross_att.kernel = make_conv_kernel(params, prefix + ".cross", cfg, rng);
  if (cfg.bidirectional_cross) {
    AttentionParams<T> q;
    q.proj = make_head_projections(params, prefix + ".cross_q", d, d, d, d, cfg.n_heads, rng);
    q.kernel = make_conv_kernel(params, prefix + ".cross_q", cfg, rng);
    p.cross_q_att = q;
  }
  p.ff_p = make_feed_forward(params, prefix + ".ff_p", d, d_hidden, d, rng);
  p.ff_q = make_feed_forward(params, prefix + ".ff_q", d, d_hidden, d, rng);
  p.norm_self_p = make_layer_norm(params, prefix + ".norm_self_p", d);
  p.norm_self_q = make_layer_norm(params, prefix + ".norm_self_q", d);
  p.norm_cross_p = make_layer_norm(params, prefix + ".norm_cross_p", d);
  if (cfg.bidirectional_cross) p.norm_cross_q = make_layer_norm(params, prefix + ".norm_cross_q", d);
  p.norm_ff_p = make_layer_norm(params, prefix + ".norm_ff_p", d);
  p.norm_ff_q = make_layer_norm(params, prefix + ".norm_ff_q", d);
  return p;
}

/// Processing layer: shared self-attention on each stream, cross-attention of
/// Q over P into the passage stream, then a per-stream feedforward. Every
/// sublayer is residual and followed by layer normalization.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> processing_layer(const Tensor<T>& P, const Tensor<T>& Q, const SequenceMasks& masks,
                                                 const ProcessingLayerParams<T>& p, const ModelConfig& cfg,
                                                 double keep_prob, const ForwardContext& ctx = {}) {
  const T eps = static_cast<T>(cfg.layer_norm_eps);
  AttentionOptions self_opts{SoftmaxAxis::RowWise, cfg.scale_logits, keep_prob};
  AttentionOptions cross_opts{cfg.cross_softmax_axis, cfg.scale_logits, keep_prob};

  Tensor<T> p_out = sublayer_wrap(P, self_attention(P, p.self_att, masks.passage_self(), self_opts, ctx), p.norm_self_p, eps, keep_prob, ctx);
  Tensor<T> q_out = sublayer_wrap(Q, self_attention(Q, p.self_att, masks.question_self(), self_opts, ctx), p.norm_self_q, eps, keep_prob, ctx);
  const Tensor<T> p_cross = cross_attention(p_out, q_out, p.cross_att, masks.passage_over_question(), cross_opts, ctx);
  if (p.cross_q_att) {
    const Tensor<T> q_cross = cross_attention(q_out, p_out, *p.cross_q_att, masks.question_over_passage(), cross_opts, ctx);
    q_out = sublayer_wrap(q_out, q_cross, *p.norm_cross_q, eps, keep_prob, ctx);
  }
  p_out = sublayer_wrap(p_out, p_cross, p.norm_cross_p, eps, keep_prob, ctx);
  p_out = sublayer_wrap(p_out, feed_forward(p_out, p.ff_p), p.norm_ff_p, eps, keep_prob, ctx);
  q_out = sublayer_wrap(q_out, feed_forward(q_out, p.ff_q), p.norm_ff_q, eps, keep_prob, ctx);
  return {p_out, q_out};
}

template <typename T>
struct ReductionLayerParams {
  // Full reduction layer
  std::optional<DecoupledParams<T>> decoupled;
  std::optional<ProcessingLayerParams<T>> processing;
  Tensor<T> w_reduction;  // [d_model x d_input]
  // Ablation: feedforward reduction d_input -> d_model
  std::optional<FeedForwardParams<T>> ff;
};

template <typename T>
ReductionLayerParams<T> make_reduction_layer(ParameterSet<T>& params, const std::string& prefix, const ModelConfig& cfg,
                                             Rng& rng) {
  ReductionLayerParams<T> p;
  const std::size_t di = cfg.d_input(), dm = cfg.d_model;
  if (cfg.use_reduction_layer) {
    p.decoupled = make_decoupled_params(params, prefix + ".decoupled", cfg, rng);
    p.processing = make_processing_layer(params, prefix + ".processing", di, cfg.ff_hidden_reduction, cfg, rng);
    p.w_reduction = params.add(prefix + ".w_reduction", xavier_uniform<T>({dm, di}, di, dm, rng));
  } else {
    p.ff = make_feed_forward(params, prefix + ".ff", di, cfg.ff_hidden_reduction, dm, rng);
  }
  return p;
}

/// Maps both embedding streams (width d_input) to width d_model.
///
/// Decoupled attention produces (Omega', E) per stream; Omega' then passes a
/// full processing layer at width d_input, and the result is projected by the
/// reduction matrix and summed with E. With the reduction layer disabled, a
/// feedforward d_input -> d_model plus the position encoding is used instead.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> reduction_layer(const Tensor<T>& omega_p, const Tensor<T>& omega_q,
                                                const SequenceMasks& masks, const ReductionLayerParams<T>& p,
                                                const ModelConfig& cfg, const ForwardContext& ctx = {}) {
  const T eps = static_cast<T>(cfg.layer_norm_eps);
  const std::size_t di = cfg.d_input(), dm = cfg.d_model;
  if (omega_p.dim(1) != di || omega_q.dim(1) != di) {
    throw DimensionError("reduction_layer expects width " + std::to_string(di) + ", got " + shape_str(omega_p.shape()) +
                         " and " + shape_str(omega_q.shape()));
  }
  const std::size_t lp = omega_p.dim(0), lq = omega_q.dim(0);
  if (!p.decoupled) {
    return {add(feed_forward(omega_p, *p.ff), encode_positions<T>(lp, dm)),
            add(feed_forward(omega_q, *p.ff), encode_positions<T>(lq, dm))};
  }
  const double keep = cfg.keep_reduction;
  auto dp = decoupled_attention(omega_p, encode_positions<T>(lp, di), encode_positions<T>(lp, dm), *p.decoupled,
                                masks.passage_self(), eps, keep, cfg.scale_logits, ctx);
  auto dq = decoupled_attention(omega_q, encode_positions<T>(lq, di), encode_positions<T>(lq, dm), *p.decoupled,
                                masks.question_self(), eps, keep, cfg.scale_logits, ctx);
  auto [pp, qq] = processing_layer(dp.embedding, dq.embedding, masks, *p.processing, cfg, keep, ctx);
  const Tensor<T> reduce = transpose(p.w_reduction);
  return {add(matmul(pp, reduce), dp.encoding), add(matmul(qq, reduce), dq.encoding)};
}

}  // namespace fabir
