#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fabir/errors.hpp"
#include "fabir/rng.hpp"
#include "fabir/tensor.hpp"

// Differentiable tensor operations. Each op computes its result eagerly and,
// when a tape is active and an input requires a gradient, records the adjoint
// that routes the result's gradient back to its inputs.

namespace fabir {

namespace detail {

template <typename T>
Tape<T>* recorder(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = Tape<T>::current();
  if (tape == nullptr) return nullptr;
  for (const Tensor<T>* t : inputs) {
    if (t->requires_grad()) return tape;
  }
  return nullptr;
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

inline Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

// Flat index into `in` for every flat index of `out` under right-aligned broadcasting.
inline std::vector<std::size_t> broadcast_map(const Shape& out, const Shape& in) {
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> map(n);
  const std::size_t offset = out.size() - in.size();
  std::vector<std::size_t> in_stride(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    in_stride[i + offset] = in[i] == 1 ? 0 : stride;
    stride *= in[i];
  }
  std::vector<std::size_t> idx(out.size(), 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t pos = 0;
    for (std::size_t d = 0; d < out.size(); ++d) pos += idx[d] * in_stride[d];
    map[flat] = pos;
    for (std::size_t d = out.size(); d-- > 0;) {
      if (++idx[d] < out[d]) break;
      idx[d] = 0;
    }
  }
  return map;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

template <typename T, typename Fwd, typename DA, typename DB>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, Fwd fwd, DA da_fn, DB db_fn) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const std::size_t n = shape_numel(out_shape);
  const bool same = a.shape() == out_shape && b.shape() == out_shape;
  std::vector<std::size_t> amap, bmap;
  if (!same) {
    amap = broadcast_map(out_shape, a.shape());
    bmap = broadcast_map(out_shape, b.shape());
  }
  std::vector<T> out(n);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = same ? fwd(av[i], bv[i]) : fwd(av[amap[i]], bv[bmap[i]]);
  }
  Tape<T>* tape = recorder<T>({&a, &b});
  Tensor<T> result(out_shape, std::move(out), tape != nullptr);
  if (tape) {
    tape->record([a, b, result, amap = std::move(amap), bmap = std::move(bmap), same, da_fn, db_fn]() {
      auto* r = result.node();
      if (r->grad.empty()) return;
      const auto& av = a.values();
      const auto& bv = b.values();
      const std::size_t n = r->grad.size();
      if (a.requires_grad()) {
        auto& g = a.node()->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t ia = same ? i : amap[i];
          const std::size_t ib = same ? i : bmap[i];
          g[ia] += r->grad[i] * da_fn(av[ia], bv[ib]);
        }
      }
      if (b.requires_grad()) {
        auto& g = b.node()->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t ia = same ? i : amap[i];
          const std::size_t ib = same ? i : bmap[i];
          g[ib] += r->grad[i] * db_fn(av[ia], bv[ib]);
        }
      }
    });
  }
  return result;
}

// `dfn(x, y)` is the local derivative given input x and output y.
template <typename T, typename Fwd, typename Dfn>
Tensor<T> unary(const Tensor<T>& x, Fwd fwd, Dfn dfn) {
  std::vector<T> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  Tape<T>* tape = recorder<T>({&x});
  Tensor<T> result(x.shape(), std::move(out), tape != nullptr);
  if (tape) {
    tape->record([x, result, dfn]() {
      auto* r = result.node();
      if (r->grad.empty()) return;
      auto& g = x.node()->ensure_grad();
      const auto& xv = x.values();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += r->grad[i] * dfn(xv[i], r->data[i]);
    });
  }
  return result;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return detail::unary(x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  return detail::unary(x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

// Subgradient at exactly 0 is 0.
template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(
      x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

// max(x, lo); no gradient flows through clamped entries.
template <typename T>
Tensor<T> clamp_min(const Tensor<T>& x, T lo) {
  return detail::unary(
      x, [lo](T v) { return v < lo ? lo : v; }, [lo](T v, T) { return v < lo ? T(0) : T(1); });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T(0));
  const T* av = a.values().data();
  const T* bv = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    T* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T s = av[i * k + p];
      const T* brow = bv + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
  Tape<T>* tape = detail::recorder<T>({&a, &b});
  Tensor<T> result({m, n}, std::move(out), tape != nullptr);
  if (tape) {
    tape->record([a, b, result, m, k, n]() {
      const auto& dc = result.node()->grad;
      if (dc.empty()) return;
      const auto& av = a.values();
      const auto& bv = b.values();
      if (a.requires_grad()) {
        auto& ga = a.node()->ensure_grad();  // dA = dC * B^T
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            T s = T(0);
            for (std::size_t j = 0; j < n; ++j) s += dc[i * n + j] * bv[p * n + j];
            ga[i * k + p] += s;
          }
        }
      }
      if (b.requires_grad()) {
        auto& gb = b.node()->ensure_grad();  // dB = A^T * dC
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const T s = av[i * k + p];
            for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += s * dc[i * n + j];
          }
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() != 2) throw DimensionError("transpose expects a matrix, got " + shape_str(x.shape()));
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<T> out(m * n);
  const auto& xv = x.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = xv[i * n + j];
  Tape<T>* tape = detail::recorder<T>({&x});
  Tensor<T> result({n, m}, std::move(out), tape != nullptr);
  if (tape) {
    tape->record([x, result, m, n]() {
      const auto& dr = result.node()->grad;
      if (dr.empty()) return;
      auto& g = x.node()->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += dr[j * m + i];
    });
  }
  return result;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " into " + shape_str(shape));
  }
  Tape<T>* tape = detail::recorder<T>({&x});
  Tensor<T> result(std::move(shape), x.values(), tape != nullptr);
  if (tape) {
    tape->record([x, result]() {
      const auto& dr = result.node()->grad;
      if (dr.empty()) return;
      auto& g = x.node()->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += dr[i];
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = T(0);
  for (T v : x.values()) s += v;
  Tape<T>* tape = detail::recorder<T>({&x});
  Tensor<T> result({1}, {s}, tape != nullptr);
  if (tape) {
    tape->record([x, result]() {
      const auto& dr = result.node()->grad;
      if (dr.empty()) return;
      auto& g = x.node()->ensure_grad();
      for (auto& v : g) v += dr[0];
    });
  }
  return result;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::size_t axis) {
  const auto s = detail::split_axis(x.shape(), axis);
  std::vector<T> out(s.outer * s.inner, T(0));
  const auto& xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += xv[(o * s.extent + e) * s.inner + i];
  Tape<T>* tape = detail::recorder<T>({&x});
  Tensor<T> result(detail::drop_axis(x.shape(), axis), std::move(out), tape != nullptr);
  if (tape) {
    tape->record([x, result, s]() {
      const auto& dr = result.node()->grad;
      if (dr.empty()) return;
      auto& g = x.node()->ensure_grad();
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t e = 0; e < s.extent; ++e)
          for (std::size_t i = 0; i < s.inner; ++i) g[(o * s.extent + e) * s.inner + i] += dr[o * s.inner + i];
    });
  }
  return result;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::size_t axis) {
  return scale(sum(x, axis), T(1) / static_cast<T>(x.dim(axis)));
}

// Maximum along `axis`; the gradient is routed to the first maximal entry.
template <typename T>
Tensor<T> max_over_axis(const Tensor<T>& x, std::size_t axis) {
  const auto s = detail::split_axis(x.shape(), axis);
  std::vector<T> out(s.outer * s.inner);
  std::vector<std::size_t> arg(s.outer * s.inner);
  const auto& xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      std::size_t best = o * s.extent * s.inner + i;
      for (std::size_t e = 1; e < s.extent; ++e) {
        const std::size_t idx = (o * s.extent + e) * s.inner + i;
        if (xv[idx] > xv[best]) best = idx;
      }
      out[o * s.inner + i] = xv[best];
      arg[o * s.inner + i] = best;
    }
  }
  Tape<T>* tape = detail::recorder<T>({&x});
  Tensor<T> result(detail::drop_axis(x.shape(), axis), std::move(out), tape != nullptr);
  if (tape) {
    tape->record([x, result, arg = std::move(arg)]() {
      const auto& dr = result.node()->grad;
      if (dr.empty()) return;
      auto& g = x.node()->ensure_grad();
      for (std::size_t k = 0; k < arg.size(); ++k) g[arg[k]] += dr[k];
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Softmax

/// Softmax along `axis` restricted to entries whose `valid` flag is set.
///
/// Invalid entries get exactly zero weight. A slice with no valid entry
/// produces all zeros. An empty `valid` vector means every entry is valid.
template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& x, std::size_t axis, const std::vector<std::uint8_t>& valid) {
  const auto s = detail::split_axis(x.shape(), axis);
  if (!valid.empty() && valid.size() != x.numel()) {
    throw DimensionError("softmax mask has " + std::to_string(valid.size()) + " entries for shape " +
                         shape_str(x.shape()));
  }
  const bool all_valid = valid.empty();
  std::vector<T> out(x.numel(), T(0));
  const auto& xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      bool any = false;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const std::size_t idx = base + e * s.inner;
        if (all_valid || valid[idx]) {
          mx = any ? std::max(mx, xv[idx]) : xv[idx];
          any = true;
        }
      }
      if (!any) continue;
      T total = T(0);
      for (std::size_t e = 0; e < s.extent; ++e) {
        const std::size_t idx = base + e * s.inner;
        if (all_valid || valid[idx]) {
          out[idx] = std::exp(xv[idx] - mx);
          total += out[idx];
        }
      }
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] /= total;
    }
  }
  Tape<T>* tape = detail::recorder<T>({&x});
  Tensor<T> result(x.shape(), std::move(out), tape != nullptr);
  if (tape) {
    tape->record([x, result, s]() {
      const auto& dy = result.node()->grad;
      if (dy.empty()) return;
      const auto& y = result.values();
      auto& g = x.node()->ensure_grad();
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          const std::size_t base = o * s.extent * s.inner + i;
          T dot = T(0);
          for (std::size_t e = 0; e < s.extent; ++e) dot += y[base + e * s.inner] * dy[base + e * s.inner];
          for (std::size_t e = 0; e < s.extent; ++e) {
            const std::size_t idx = base + e * s.inner;
            g[idx] += y[idx] * (dy[idx] - dot);
          }
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  return masked_softmax(x, axis, {});
}

// ---------------------------------------------------------------------------
// Structural

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& ref = parts.front().shape();
  const auto s0 = detail::split_axis(ref, axis);
  std::size_t total = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == ref.size();
    for (std::size_t d = 0; ok && d < ref.size(); ++d) ok = d == axis || p.dim(d) == ref[d];
    if (!ok) {
      throw DimensionError("concat along axis " + std::to_string(axis) + ": " + shape_str(ref) + " vs " +
                           shape_str(p.shape()));
    }
    total += p.dim(axis);
  }
  Shape out_shape = ref;
  out_shape[axis] = total;
  std::vector<T> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t ext = p.dim(axis);
    const auto& pv = p.values();
    for (std::size_t o = 0; o < s0.outer; ++o)
      std::copy_n(pv.begin() + o * ext * s0.inner, ext * s0.inner,
                  out.begin() + (o * total + offset) * s0.inner);
    offset += ext;
  }
  Tape<T>* tape = Tape<T>::current();
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (!any) tape = nullptr;
  Tensor<T> result(out_shape, std::move(out), tape != nullptr);
  if (tape) {
    tape->record([parts, result, s0, total]() {
      const auto& dr = result.node()->grad;
      if (dr.empty()) return;
      std::size_t offset = 0;
      for (const auto& p : parts) {
        const std::size_t e = p.numel() / (s0.outer * s0.inner);
        if (p.requires_grad()) {
          auto& g = p.node()->ensure_grad();
          for (std::size_t o = 0; o < s0.outer; ++o)
            for (std::size_t k = 0; k < e * s0.inner; ++k) g[o * e * s0.inner + k] += dr[(o * total + offset) * s0.inner + k];
        }
        offset += e;
      }
    });
  }
  return result;
}

// Entries [begin, end) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto s = detail::split_axis(x.shape(), axis);
  if (begin >= end || end > s.extent) {
    throw DimensionError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") of axis " +
                         std::to_string(axis) + " in " + shape_str(x.shape()));
  }
  const std::size_t ext = end - begin;
  Shape out_shape = x.shape();
  out_shape[axis] = ext;
  std::vector<T> out(shape_numel(out_shape));
  const auto& xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(xv.begin() + (o * s.extent + begin) * s.inner, ext * s.inner, out.begin() + o * ext * s.inner);
  Tape<T>* tape = detail::recorder<T>({&x});
  Tensor<T> result(out_shape, std::move(out), tape != nullptr);
  if (tape) {
    tape->record([x, result, s, begin, ext]() {
      const auto& dr = result.node()->grad;
      if (dr.empty()) return;
      auto& g = x.node()->ensure_grad();
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t k = 0; k < ext * s.inner; ++k) g[(o * s.extent + begin) * s.inner + k] += dr[o * ext * s.inner + k];
    });
  }
  return result;
}

// Zero padding along `axis`.
template <typename T>
Tensor<T> pad(const Tensor<T>& x, std::size_t axis, std::size_t before, std::size_t after) {
  const auto s = detail::split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  const std::size_t total = s.extent + before + after;
  out_shape[axis] = total;
  std::vector<T> out(shape_numel(out_shape), T(0));
  const auto& xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(xv.begin() + o * s.extent * s.inner, s.extent * s.inner,
                out.begin() + (o * total + before) * s.inner);
  Tape<T>* tape = detail::recorder<T>({&x});
  Tensor<T> result(out_shape, std::move(out), tape != nullptr);
  if (tape) {
    tape->record([x, result, s, before, total]() {
      const auto& dr = result.node()->grad;
      if (dr.empty()) return;
      auto& g = x.node()->ensure_grad();
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t k = 0; k < s.extent * s.inner; ++k)
          g[o * s.extent * s.inner + k] += dr[(o * total + before) * s.inner + k];
    });
  }
  return result;
}

// Rows of `table` selected by `ids`. Rows equal to `frozen_id` receive no gradient.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<std::size_t>& ids,
                      std::optional<std::size_t> frozen_id = std::nullopt) {
  if (table.rank() != 2) throw DimensionError("gather_rows expects a matrix table, got " + shape_str(table.shape()));
  if (ids.empty()) throw DimensionError("gather_rows with no ids");
  const std::size_t rows = table.dim(0), width = table.dim(1);
  std::vector<T> out(ids.size() * width);
  const auto& tv = table.values();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= rows) throw DimensionError("gather_rows: id " + std::to_string(ids[r]) + " out of range");
    std::copy_n(tv.begin() + ids[r] * width, width, out.begin() + r * width);
  }
  Tape<T>* tape = detail::recorder<T>({&table});
  Tensor<T> result({ids.size(), width}, std::move(out), tape != nullptr);
  if (tape) {
    tape->record([table, result, ids, frozen_id, width]() {
      const auto& dr = result.node()->grad;
      if (dr.empty()) return;
      auto& g = table.node()->ensure_grad();
      for (std::size_t r = 0; r < ids.size(); ++r) {
        if (frozen_id && ids[r] == *frozen_id) continue;
        for (std::size_t c = 0; c < width; ++c) g[ids[r] * width + c] += dr[r * width + c];
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Convolution

enum class Padding { Same, Valid };

/// 2-D cross-correlation of x[H x W x Cin] with kernel[kh x kw x Cin x Cout].
///
/// Same padding zero-pads (kh-1)/2 rows above and the remainder below (likewise
/// for columns), so the output keeps the input's spatial size.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, Padding padding) {
  if (x.rank() != 3 || kernel.rank() != 4 || kernel.dim(2) != x.dim(2)) {
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + " incompatible with kernel " +
                         shape_str(kernel.shape()));
  }
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const std::size_t kh = kernel.dim(0), kw = kernel.dim(1), O = kernel.dim(3);
  const std::size_t ph = padding == Padding::Same ? (kh - 1) / 2 : 0;
  const std::size_t pw = padding == Padding::Same ? (kw - 1) / 2 : 0;
  const std::size_t padded_h = padding == Padding::Same ? H + kh - 1 : H;
  const std::size_t padded_w = padding == Padding::Same ? W + kw - 1 : W;
  if (padded_h < kh || padded_w < kw) {
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) + " larger than input " + shape_str(x.shape()));
  }
  const std::size_t Ho = padded_h - kh + 1, Wo = padded_w - kw + 1;
  std::vector<T> out(Ho * Wo * O, T(0));
  const auto& xv = x.values();
  const auto& kv = kernel.values();
  // Input coordinate for output i and tap a is i + a - ph; taps outside [0,H) read zero padding.
  for (std::size_t i = 0; i < Ho; ++i) {
    for (std::size_t j = 0; j < Wo; ++j) {
      T* o_ptr = out.data() + (i * Wo + j) * O;
      for (std::size_t a = 0; a < kh; ++a) {
        const std::ptrdiff_t xi = static_cast<std::ptrdiff_t>(i + a) - static_cast<std::ptrdiff_t>(ph);
        if (xi < 0 || xi >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t b = 0; b < kw; ++b) {
          const std::ptrdiff_t xj = static_cast<std::ptrdiff_t>(j + b) - static_cast<std::ptrdiff_t>(pw);
          if (xj < 0 || xj >= static_cast<std::ptrdiff_t>(W)) continue;
          const T* x_ptr = xv.data() + (static_cast<std::size_t>(xi) * W + static_cast<std::size_t>(xj)) * C;
          const T* k_ptr = kv.data() + (a * kw + b) * C * O;
          for (std::size_t c = 0; c < C; ++c) {
            const T xval = x_ptr[c];
            const T* kc = k_ptr + c * O;
            for (std::size_t o = 0; o < O; ++o) o_ptr[o] += xval * kc[o];
          }
        }
      }
    }
  }
  Tape<T>* tape = detail::recorder<T>({&x, &kernel});
  Tensor<T> result({Ho, Wo, O}, std::move(out), tape != nullptr);
  if (tape) {
    tape->record([x, kernel, result, H, W, C, kh, kw, O, ph, pw, Ho, Wo]() {
      const auto& dr = result.node()->grad;
      if (dr.empty()) return;
      const auto& xv = x.values();
      const auto& kv = kernel.values();
      std::vector<T>* gx = x.requires_grad() ? &x.node()->ensure_grad() : nullptr;
      std::vector<T>* gk = kernel.requires_grad() ? &kernel.node()->ensure_grad() : nullptr;
      for (std::size_t i = 0; i < Ho; ++i) {
        for (std::size_t j = 0; j < Wo; ++j) {
          const T* d_ptr = dr.data() + (i * Wo + j) * O;
          for (std::size_t a = 0; a < kh; ++a) {
            const std::ptrdiff_t xi = static_cast<std::ptrdiff_t>(i + a) - static_cast<std::ptrdiff_t>(ph);
            if (xi < 0 || xi >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t b = 0; b < kw; ++b) {
              const std::ptrdiff_t xj = static_cast<std::ptrdiff_t>(j + b) - static_cast<std::ptrdiff_t>(pw);
              if (xj < 0 || xj >= static_cast<std::ptrdiff_t>(W)) continue;
              const std::size_t xbase = (static_cast<std::size_t>(xi) * W + static_cast<std::size_t>(xj)) * C;
              const std::size_t kbase = (a * kw + b) * C * O;
              for (std::size_t c = 0; c < C; ++c) {
                T acc = T(0);
                const T xval = xv[xbase + c];
                for (std::size_t o = 0; o < O; ++o) {
                  acc += d_ptr[o] * kv[kbase + c * O + o];
                  if (gk) (*gk)[kbase + c * O + o] += xval * d_ptr[o];
                }
                if (gx) (*gx)[xbase + c] += acc;
              }
            }
          }
        }
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Regularization and normalization

/// Inverted dropout: kept entries are scaled by 1/keep_prob during training;
/// identity at inference or when keep_prob == 1.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double keep_prob, bool training, Rng& rng) {
  if (!(keep_prob > 0.0) || keep_prob > 1.0) {
    throw ConfigError("dropout keep probability must lie in (0, 1], got " + std::to_string(keep_prob));
  }
  if (!training || keep_prob == 1.0) return x;
  const T factor = static_cast<T>(1.0 / keep_prob);
  std::vector<T> m(x.numel());
  for (auto& v : m) v = rng.bernoulli(keep_prob) ? factor : T(0);
  return mul(x, Tensor<T>(x.shape(), std::move(m)));
}

/// Per-row normalization over the last axis: (x - mean) / sqrt(var + eps) * gain + bias,
/// with population variance.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: input " + shape_str(x.shape()) + " with gain " + shape_str(gain.shape()) +
                         " and bias " + shape_str(bias.shape()));
  }
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel()), xhat(x.numel()), inv_std(rows);
  const auto& xv = x.values();
  const auto& gv = gain.values();
  const auto& bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * d;
    T mu = T(0);
    for (std::size_t c = 0; c < d; ++c) mu += row[c];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<T>(d);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat[r * d + c] = (row[c] - mu) * inv_std[r];
      out[r * d + c] = xhat[r * d + c] * gv[c] + bv[c];
    }
  }
  Tape<T>* tape = detail::recorder<T>({&x, &gain, &bias});
  Tensor<T> result(x.shape(), std::move(out), tape != nullptr);
  if (tape) {
    tape->record([x, gain, bias, result, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d]() {
      const auto& dy = result.node()->grad;
      if (dy.empty()) return;
      const auto& gv = gain.values();
      if (gain.requires_grad()) {
        auto& gg = gain.node()->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < d; ++c) gg[c] += dy[r * d + c] * xhat[r * d + c];
      }
      if (bias.requires_grad()) {
        auto& gb = bias.node()->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < d; ++c) gb[c] += dy[r * d + c];
      }
      if (x.requires_grad()) {
        auto& gx = x.node()->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          T mean_d = T(0), mean_dx = T(0);
          for (std::size_t c = 0; c < d; ++c) {
            const T dxh = dy[r * d + c] * gv[c];
            mean_d += dxh;
            mean_dx += dxh * xhat[r * d + c];
          }
          mean_d /= static_cast<T>(d);
          mean_dx /= static_cast<T>(d);
          for (std::size_t c = 0; c < d; ++c) {
            const T dxh = dy[r * d + c] * gv[c];
            gx[r * d + c] += inv_std[r] * (dxh - mean_d - xhat[r * d + c] * mean_dx);
          }
        }
      }
    });
  }
  return result;
}

}  // namespace fabir
