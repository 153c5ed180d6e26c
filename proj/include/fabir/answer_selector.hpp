#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <string>
#include <vector>

#include "fabir/config.hpp"
#include "fabir/context.hpp"
#include "fabir/ops.hpp"
#include "fabir/parameters.hpp"

namespace fabir {

template <typename T>
struct SelectorParams {
  SelectorKind kind = SelectorKind::Conv;
  // conv: [1 x k x d_model x hidden], [hidden], [1 x k x hidden x 2], [2]
  Tensor<T> kernel1, bias1, kernel2, bias2;
  // linear: [d_model x 2], [2]
  Tensor<T> w, b;
};

template <typename T>
SelectorParams<T> make_selector(ParameterSet<T>& params, const std::string& prefix, const ModelConfig& cfg, Rng& rng) {
  SelectorParams<T> p;
  p.kind = cfg.selector_kind;
  const std::size_t d = cfg.d_model, h = cfg.selector_hidden, k = cfg.selector_kernel;
  if (p.kind == SelectorKind::Conv) {
    p.kernel1 = params.add(prefix + ".conv1.kernel", xavier_uniform<T>({1, k, d, h}, k * d, k * h, rng));
    p.bias1 = params.add(prefix + ".conv1.bias", Tensor<T>::zeros({h}));
    p.kernel2 = params.add(prefix + ".conv2.kernel", xavier_uniform<T>({1, k, h, 2}, k * h, k * 2, rng));
    p.bias2 = params.add(prefix + ".conv2.bias", Tensor<T>::zeros({2}));
  } else {
    p.w = params.add(prefix + ".linear.w", xavier_uniform<T>({d, 2}, d, 2, rng));
    p.b = params.add(prefix + ".linear.b", Tensor<T>::zeros({2}));
  }
  return p;
}

/// Start/end distributions over the passage as a [P_len x 2] tensor: column 0
/// is pi_1, column 1 is pi_2. Positions at or beyond `valid_len` get exactly 0.
template <typename T>
Tensor<T> selector_forward(const Tensor<T>& passage, const SelectorParams<T>& p, std::size_t valid_len,
                           const ModelConfig& cfg, const ForwardContext& ctx = {}) {
  const std::size_t len = passage.dim(0);
  if (valid_len == 0 || valid_len > len) throw ContractError("selector needs 1..P_len valid positions");
  Tensor<T> row_mask;
  if (valid_len < len) {
    std::vector<T> m(len, T(0));
    std::fill_n(m.begin(), valid_len, T(1));
    row_mask = Tensor<T>({len, 1}, std::move(m));
  }
  auto zero_padding = [&](const Tensor<T>& x) { return row_mask.defined() ? mul(x, row_mask) : x; };

  Tensor<T> logits;
  if (p.kind == SelectorKind::Conv) {
    const std::size_t d = passage.dim(1);
    Tensor<T> x = ctx.drop(zero_padding(passage), cfg.keep_selector);
    x = reshape(x, {1, len, d});
    x = relu(add(conv2d(x, p.kernel1, Padding::Same), p.bias1));
    x = reshape(x, {len, p.kernel1.dim(3)});
    x = ctx.drop(zero_padding(x), cfg.keep_selector);
    x = reshape(x, {1, len, p.kernel1.dim(3)});
    logits = reshape(add(conv2d(x, p.kernel2, Padding::Same), p.bias2), {len, 2});
  } else {
    logits = add(matmul(ctx.drop(passage, cfg.keep_selector), p.w), p.b);
  }
  std::vector<std::uint8_t> valid(len * 2, 0);
  std::fill_n(valid.begin(), valid_len * 2, 1);
  return masked_softmax(logits, 0, valid_len == len ? std::vector<std::uint8_t>{} : valid);
}

inline constexpr double kProbabilityFloor = 1e-12;

/// J = -(log pi_1[y1] + log pi_2[y2]), probabilities floored at 1e-12.
template <typename T>
Tensor<T> nll_loss(const Tensor<T>& dist, std::size_t y1, std::size_t y2, const std::string& example_id = "") {
  const std::size_t len = dist.dim(0);
  if (y1 > y2 || y2 >= len) {
    throw DataError("example '" + example_id + "': gold span (" + std::to_string(y1) + ", " + std::to_string(y2) +
                    ") invalid for passage of " + std::to_string(len) + " tokens");
  }
  const Tensor<T> p1 = slice(slice(dist, 0, y1, y1 + 1), 1, 0, 1);
  const Tensor<T> p2 = slice(slice(dist, 0, y2, y2 + 1), 1, 1, 2);
  const T floor = static_cast<T>(kProbabilityFloor);
  const Tensor<T> lp = add(log(clamp_min(p1, floor)), log(clamp_min(p2, floor)));
  return reshape(scale(lp, T(-1)), {1});
}

struct SpanPrediction {
  std::size_t start = 0;
  std::size_t end = 0;
  double score = 0.0;
  bool operator==(const SpanPrediction& o) const { return start == o.start && end == o.end; }
};

/// argmax pi_1[i] * pi_2[j] subject to i <= j < i + max_len, in one pass with a
/// sliding-window maximum of pi_1. Ties prefer the smallest i, then the
/// smallest j.
inline SpanPrediction decode_span(const std::vector<double>& start, const std::vector<double>& end,
                                  std::size_t max_len = 15) {
  const std::size_t n = std::min(start.size(), end.size());
  if (n == 0 || max_len == 0) throw ContractError("decode_span needs a non-empty passage and max_len >= 1");
  std::deque<std::size_t> window;  // indices with strictly decreasing start[] values
  SpanPrediction best{0, 0, -1.0};
  for (std::size_t j = 0; j < n; ++j) {
    while (!window.empty() && start[window.back()] < start[j]) window.pop_back();
    window.push_back(j);
    while (window.front() + max_len <= j) window.pop_front();
    const std::size_t i = window.front();
    const double score = start[i] * end[j];
    if (score > best.score || (score == best.score && i < best.start)) best = {i, j, score};
  }
  return best;
}

// Exhaustive reference for decode_span with the same tie-breaking.
inline SpanPrediction decode_span_bruteforce(const std::vector<double>& start, const std::vector<double>& end,
                                             std::size_t max_len = 15) {
  const std::size_t n = std::min(start.size(), end.size());
  if (n == 0 || max_len == 0) throw ContractError("decode_span needs a non-empty passage and max_len >= 1");
  SpanPrediction best{0, 0, -1.0};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n && j < i + max_len; ++j) {
      const double score = start[i] * end[j];
      if (score > best.score) best = {i, j, score};
    }
  }
  return best;
}

// Column `c` of a [len x 2] distribution restricted to the first `valid_len` rows.
template <typename T>
std::vector<double> distribution_column(const Tensor<T>& dist, std::size_t c, std::size_t valid_len) {
  std::vector<double> out(valid_len);
  for (std::size_t i = 0; i < valid_len; ++i) out[i] = static_cast<double>(dist.at(i, c));
  return out;
}

}  // namespace fabir
