#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fabir/config.hpp"
#include "fabir/context.hpp"
#include "fabir/ops.hpp"
#include "fabir/parameters.hpp"

namespace fabir {

/// Per-head projections stored head-major along the columns: head i of W_U
/// is columns [i*qk_head, (i+1)*qk_head).
template <typename T>
struct HeadProjections {
  Tensor<T> w_u;  // [d_query x n_heads*qk_head]
  Tensor<T> w_k;  // [d_key   x n_heads*qk_head]
  Tensor<T> w_v;  // [d_value x n_heads*v_head]
  Tensor<T> w_o;  // [n_heads*v_head x d_out]
  std::size_t n_heads = 1;

  std::size_t qk_head() const { return w_u.dim(1) / n_heads; }
  std::size_t v_head() const { return w_v.dim(1) / n_heads; }
};

// Undefined `h` means plain multi-head attention (no logit convolution).
template <typename T>
struct ConvAttentionKernel {
  Tensor<T> h;  // [kh x kw x n_heads x n_heads]
  bool enabled() const { return h.defined(); }
};

template <typename T>
struct AttentionParams {
  HeadProjections<T> proj;
  ConvAttentionKernel<T> kernel;
};

/// Validity of query and key positions; pair (i, j) is valid when both are.
struct AttentionMask {
  std::vector<std::uint8_t> query_valid;
  std::vector<std::uint8_t> key_valid;

  static AttentionMask all(std::size_t m, std::size_t n) {
    return {std::vector<std::uint8_t>(m, 1), std::vector<std::uint8_t>(n, 1)};
  }
  static AttentionMask from_lengths(std::size_t m, std::size_t m_valid, std::size_t n, std::size_t n_valid) {
    AttentionMask mask{std::vector<std::uint8_t>(m, 0), std::vector<std::uint8_t>(n, 0)};
    for (std::size_t i = 0; i < m_valid && i < m; ++i) mask.query_valid[i] = 1;
    for (std::size_t j = 0; j < n_valid && j < n; ++j) mask.key_valid[j] = 1;
    return mask;
  }

  bool complete() const {
    for (auto v : query_valid) if (!v) return false;
    for (auto v : key_valid) if (!v) return false;
    return true;
  }

  // Flattened [m x n x heads] pair validity.
  std::vector<std::uint8_t> pair_validity(std::size_t heads) const {
    const std::size_t m = query_valid.size(), n = key_valid.size();
    std::vector<std::uint8_t> out(m * n * heads);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t h = 0; h < heads; ++h) out[(i * n + j) * heads + h] = query_valid[i] && key_valid[j];
    return out;
  }
};

struct AttentionOptions {
  SoftmaxAxis axis = SoftmaxAxis::RowWise;
  bool scale_logits = false;
  double keep_prob = 1.0;  // attention dropout on the weights
};

template <typename T>
HeadProjections<T> make_head_projections(ParameterSet<T>& params, const std::string& prefix, std::size_t d_query,
                                         std::size_t d_key, std::size_t d_value, std::size_t d_out, std::size_t n_heads,
                                         Rng& rng) {
  if (d_out % n_heads != 0) {
    throw ConfigError(prefix + ": output width " + std::to_string(d_out) + " not divisible by " + std::to_string(n_heads) + " heads");
  }
  const std::size_t inner = d_out;  // n_heads * (d_out / n_heads)
  HeadProjections<T> p;
  p.n_heads = n_heads;
  p.w_u = params.add(prefix + ".w_u", xavier_uniform<T>({d_query, inner}, d_query, inner, rng));
  p.w_k = params.add(prefix + ".w_k", xavier_uniform<T>({d_key, inner}, d_key, inner, rng));
  p.w_v = params.add(prefix + ".w_v", xavier_uniform<T>({d_value, inner}, d_value, inner, rng));
  p.w_o = params.add(prefix + ".w_o", xavier_uniform<T>({inner, d_out}, inner, d_out, rng));
  return p;
}

// Per-channel delta (centre tap, identity across heads) plus N(0, noise) jitter.
template <typename T>
Tensor<T> delta_kernel(std::size_t kh, std::size_t kw, std::size_t heads, double noise, Rng* rng) {
  std::vector<T> data(kh * kw * heads * heads, T(0));
  for (auto& v : data) v = noise > 0.0 && rng ? static_cast<T>(rng->normal(0.0, noise)) : T(0);
  const std::size_t centre = ((kh - 1) / 2 * kw + (kw - 1) / 2) * heads * heads;
  for (std::size_t c = 0; c < heads; ++c) data[centre + c * heads + c] += T(1);
  return Tensor<T>({kh, kw, heads, heads}, std::move(data));
}

template <typename T>
ConvAttentionKernel<T> make_conv_kernel(ParameterSet<T>& params, const std::string& prefix, const ModelConfig& cfg,
                                        Rng& rng) {
  ConvAttentionKernel<T> k;
  if (cfg.use_conv_attention) {
    k.h = params.add(prefix + ".kernel", delta_kernel<T>(cfg.att_kernel_h, cfg.att_kernel_w, cfg.n_heads, 0.01, &rng));
  }
  return k;
}

/// Stacked per-head logits U W_U,i (K W_K,i)^T as an [m x n x n_heads] tensor.
template <typename T>
Tensor<T> head_logits(const Tensor<T>& U, const Tensor<T>& K, const HeadProjections<T>& proj) {
  if (U.rank() != 2 || K.rank() != 2 || U.dim(1) != proj.w_u.dim(0) || K.dim(1) != proj.w_k.dim(0)) {
    throw DimensionError("head_logits: U " + shape_str(U.shape()) + ", K " + shape_str(K.shape()) +
                         " incompatible with projections " + shape_str(proj.w_u.shape()) + "/" +
                         shape_str(proj.w_k.shape()));
  }
  const std::size_t m = U.dim(0), n = K.dim(0), dh = proj.qk_head();
  const Tensor<T> uw = matmul(U, proj.w_u);
  const Tensor<T> kw = matmul(K, proj.w_k);
  if (proj.n_heads == 1) return reshape(matmul(uw, transpose(kw)), {m, n, 1});
  std::vector<Tensor<T>> heads;
  for (std::size_t h = 0; h < proj.n_heads; ++h) {
    const Tensor<T> uh = slice(uw, 1, h * dh, (h + 1) * dh);
    const Tensor<T> kh = slice(kw, 1, h * dh, (h + 1) * dh);
    heads.push_back(reshape(matmul(uh, transpose(kh)), {m, n, 1}));
  }
  return concat(heads, 2);
}

/// Logits -> (mask, same-padded convolution over the m x n plane, re-mask) ->
/// softmax along the requested axis. Returns weights shaped like the logits.
///
/// Invalid positions are zeroed before the convolution so that padding looks
/// exactly like the convolution's own zero padding; after it they are excluded
/// from the softmax and receive weight 0.
template <typename T>
Tensor<T> attention_weights(const Tensor<T>& logits, const ConvAttentionKernel<T>& kernel, SoftmaxAxis axis,
                            const AttentionMask& mask) {
  const std::size_t m = logits.dim(0), n = logits.dim(1), heads = logits.dim(2);
  if (mask.query_valid.size() != m || mask.key_valid.size() != n) {
    throw DimensionError("attention mask " + std::to_string(mask.query_valid.size()) + "x" +
                         std::to_string(mask.key_valid.size()) + " for logits " + shape_str(logits.shape()));
  }
  const bool complete = mask.complete();
  Tensor<T> x = logits;
  if (kernel.enabled()) {
    if (kernel.h.dim(2) != heads || kernel.h.dim(3) != heads) {
      throw DimensionError("attention kernel " + shape_str(kernel.h.shape()) + " for " + std::to_string(heads) + " heads");
    }
    if (!complete) {
      std::vector<T> keep(m * n);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) keep[i * n + j] = (mask.query_valid[i] && mask.key_valid[j]) ? T(1) : T(0);
      x = mul(x, Tensor<T>({m, n, 1}, std::move(keep)));
    }
    x = conv2d(x, kernel.h, Padding::Same);
  }
  const std::size_t softmax_axis = axis == SoftmaxAxis::RowWise ? 1 : 0;
  return masked_softmax(x, softmax_axis, complete ? std::vector<std::uint8_t>{} : mask.pair_validity(heads));
}

/// Per-head weighted sums A_i (V W_V,i), concatenated and projected by W_O.
template <typename T>
Tensor<T> attend_values(const Tensor<T>& weights, const Tensor<T>& V, const HeadProjections<T>& proj) {
  if (V.rank() != 2 || V.dim(1) != proj.w_v.dim(0) || V.dim(0) != weights.dim(1)) {
    throw DimensionError("attend_values: V " + shape_str(V.shape()) + " with weights " + shape_str(weights.shape()) +
                         " and W_V " + shape_str(proj.w_v.shape()));
  }
  const std::size_t m = weights.dim(0), n = weights.dim(1), dv = proj.v_head();
  const Tensor<T> vw = matmul(V, proj.w_v);
  std::vector<Tensor<T>> heads;
  for (std::size_t h = 0; h < proj.n_heads; ++h) {
    const Tensor<T> a = proj.n_heads == 1 ? reshape(weights, {m, n}) : reshape(slice(weights, 2, h, h + 1), {m, n});
    const Tensor<T> vh = proj.n_heads == 1 ? vw : slice(vw, 1, h * dv, (h + 1) * dv);
    heads.push_back(matmul(a, vh));
  }
  return matmul(proj.n_heads == 1 ? heads.front() : concat(heads, 1), proj.w_o);
}

template <typename T>
Tensor<T> scaled_logits(const Tensor<T>& U, const Tensor<T>& K, const HeadProjections<T>& proj, bool scale) {
  Tensor<T> logits = head_logits(U, K, proj);
  if (scale) logits = fabir::scale(logits, static_cast<T>(1.0 / std::sqrt(static_cast<double>(proj.qk_head()))));
  return logits;
}

/// Convolutional attention att_conv(U, K, V). With a disabled kernel this is
/// standard multi-head attention.
template <typename T>
Tensor<T> conv_attention(const Tensor<T>& U, const Tensor<T>& K, const Tensor<T>& V, const AttentionParams<T>& params,
                         const AttentionMask& mask, const AttentionOptions& opts, const ForwardContext& ctx = {}) {
  if (K.dim(0) != V.dim(0)) {
    throw DimensionError("conv_attention: keys " + shape_str(K.shape()) + " and values " + shape_str(V.shape()));
  }
  Tensor<T> w = attention_weights(scaled_logits(U, K, params.proj, opts.scale_logits), params.kernel, opts.axis, mask);
  w = ctx.drop(w, opts.keep_prob);
  return attend_values(w, V, params.proj);
}

// att_self(P) = att_conv(P, P, P) with row-wise normalization.
template <typename T>
Tensor<T> self_attention(const Tensor<T>& P, const AttentionParams<T>& params, const AttentionMask& mask,
                         AttentionOptions opts = {}, const ForwardContext& ctx = {}) {
  opts.axis = SoftmaxAxis::RowWise;
  return conv_attention(P, P, P, params, mask, opts, ctx);
}

/// att_cross(P, Q) = att_conv(P, Q, Q). Column-wise mode normalizes over the
/// passage axis, so each question word distributes unit weight over P.
template <typename T>
Tensor<T> cross_attention(const Tensor<T>& P, const Tensor<T>& Q, const AttentionParams<T>& params,
                          const AttentionMask& mask, AttentionOptions opts = {.axis = SoftmaxAxis::ColumnWise},
                          const ForwardContext& ctx = {}) {
  if (P.dim(1) != Q.dim(1)) {
    throw DimensionError("cross_attention: P " + shape_str(P.shape()) + " and Q " + shape_str(Q.shape()) + " widths differ");
  }
  return conv_attention(P, Q, Q, params, mask, opts, ctx);
}

// ---------------------------------------------------------------------------
// Decoupled attention (reduction layer)

template <typename T>
struct DecoupledParams {
  Tensor<T> w_u, w_k;           // shared, [d_input x d_input]
  HeadProjections<T> embedding; // w_v/w_o at d_input (w_u/w_k alias the shared ones)
  HeadProjections<T> encoding;  // w_v/w_o at d_model
  ConvAttentionKernel<T> kernel;
  Tensor<T> ln_embedding_gain, ln_embedding_bias;
  Tensor<T> ln_encoding_gain, ln_encoding_bias;
};

template <typename T>
DecoupledParams<T> make_decoupled_params(ParameterSet<T>& params, const std::string& prefix, const ModelConfig& cfg,
                                         Rng& rng) {
  const std::size_t di = cfg.d_input(), dm = cfg.d_model, h = cfg.n_heads;
  DecoupledParams<T> p;
  p.w_u = params.add(prefix + ".w_u", xavier_uniform<T>({di, di}, di, di, rng));
  p.w_k = params.add(prefix + ".w_k", xavier_uniform<T>({di, di}, di, di, rng));
  p.embedding.n_heads = h;
  p.embedding.w_u = p.w_u;
  p.embedding.w_k = p.w_k;
  p.embedding.w_v = params.add(prefix + ".embedding.w_v", xavier_uniform<T>({di, di}, di, di, rng));
  p.embedding.w_o = params.add(prefix + ".embedding.w_o", xavier_uniform<T>({di, di}, di, di, rng));
  p.encoding.n_heads = h;
  p.encoding.w_u = p.w_u;
  p.encoding.w_k = p.w_k;
  p.encoding.w_v = params.add(prefix + ".encoding.w_v", xavier_uniform<T>({dm, dm}, dm, dm, rng));
  p.encoding.w_o = params.add(prefix + ".encoding.w_o", xavier_uniform<T>({dm, dm}, dm, dm, rng));
  p.kernel = make_conv_kernel(params, prefix, cfg, rng);
  p.ln_embedding_gain = params.add(prefix + ".embedding.norm.gain", Tensor<T>::full({di}, T(1)));
  p.ln_embedding_bias = params.add(prefix + ".embedding.norm.bias", Tensor<T>::zeros({di}));
  p.ln_encoding_gain = params.add(prefix + ".encoding.norm.gain", Tensor<T>::full({dm}, T(1)));
  p.ln_encoding_bias = params.add(prefix + ".encoding.norm.bias", Tensor<T>::zeros({dm}));
  return p;
}

template <typename T>
struct DecoupledOutput {
  Tensor<T> embedding;  // Omega' [len x d_input]
  Tensor<T> encoding;   // E      [len x d_model]
  Tensor<T> weights;    // shared attention weights [len x len x heads]
};

/// Twin-branch self-attention sharing W_U, W_K and the convolved logits.
/// Branch one attends over Omega + E_in and yields Omega'; branch two reuses
/// the same weights over the d_model encoding and yields E.
template <typename T>
DecoupledOutput<T> decoupled_attention(const Tensor<T>& omega, const Tensor<T>& enc_input, const Tensor<T>& enc_model,
                                       const DecoupledParams<T>& p, const AttentionMask& mask, T eps,
                                       double keep_prob = 1.0, bool scale = false, const ForwardContext& ctx = {}) {
  if (omega.shape() != enc_input.shape() || enc_model.dim(0) != omega.dim(0) || enc_model.dim(1) != p.encoding.w_v.dim(0)) {
    throw DimensionError("decoupled_attention: embeddings " + shape_str(omega.shape()) + ", input encoding " +
                         shape_str(enc_input.shape()) + ", model encoding " + shape_str(enc_model.shape()));
  }
  const Tensor<T> x = add(omega, enc_input);
  Tensor<T> w = attention_weights(scaled_logits(x, x, p.embedding, scale), p.kernel, SoftmaxAxis::RowWise, mask);
  DecoupledOutput<T> out;
  out.weights = w;
  w = ctx.drop(w, keep_prob);
  const Tensor<T> emb_att = ctx.drop(attend_values(w, x, p.embedding), keep_prob);
  const Tensor<T> enc_att = ctx.drop(attend_values(w, enc_model, p.encoding), keep_prob);
  out.embedding = layer_norm(add(x, emb_att), p.ln_embedding_gain, p.ln_embedding_bias, eps);
  out.encoding = layer_norm(add(enc_model, enc_att), p.ln_encoding_gain, p.ln_encoding_bias, eps);
  return out;
}

}  // namespace fabir
