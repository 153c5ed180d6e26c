#include <gtest/gtest.h>

#include <chrono>
#include <cmath>

#include "../support/test_support.hpp"

using namespace fabir;
using testsupport::check_gradients;
using testsupport::random_tensor;
using T = Tensor<double>;

namespace {

ModelConfig selector_config(SelectorKind kind) {
  ModelConfig c;
  c.d_model = 6;
  c.selector_hidden = 4;
  c.selector_kernel = 3;
  c.selector_kind = kind;
  return c;
}

std::vector<double> random_distribution(Rng& rng, std::size_t n, bool coarse) {
  std::vector<double> v(n);
  double s = 0;
  for (auto& x : v) {
    // Coarse values produce many exact ties in the products.
    x = coarse ? static_cast<double>(1 + rng.below(4)) : rng.uniform(0.0, 1.0);
    s += x;
  }
  for (auto& x : v) x /= s;
  return v;
}

}  // namespace

TEST(Selector, SingleTokenGetsAllMass) {
  for (auto kind : {SelectorKind::Conv, SelectorKind::Linear}) {
    const ModelConfig cfg = selector_config(kind);
    ParameterSet<double> params;
    Rng rng(1);
    const auto p = make_selector(params, "selector", cfg, rng);
    const T d = selector_forward(random_tensor({1, 6}, rng), p, 1, cfg);
    EXPECT_EQ(d.values(), (std::vector<double>{1.0, 1.0}));
  }
}

TEST(Selector, ZeroWeightsGiveUniformOverValidTokens) {
  for (auto kind : {SelectorKind::Conv, SelectorKind::Linear}) {
    const ModelConfig cfg = selector_config(kind);
    ParameterSet<double> params;
    Rng rng(2);
    const auto p = make_selector(params, "selector", cfg, rng);
    for (const auto& t : params.trainable())
      for (auto& v : Tensor<double>(t.tensor).mutable_data()) v = 0.0;
    const T d = selector_forward(random_tensor({6, 6}, rng), p, 4, cfg);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t c = 0; c < 2; ++c) EXPECT_DOUBLE_EQ(d.at(i, c), i < 4 ? 0.25 : 0.0);
  }
}

TEST(Selector, DistributionsSumToOneAndGradients) {
  for (auto kind : {SelectorKind::Conv, SelectorKind::Linear}) {
    const ModelConfig cfg = selector_config(kind);
    ParameterSet<double> params;
    Rng rng(3);
    const auto p = make_selector(params, "selector", cfg, rng);
    for (int trial = 0; trial < 20; ++trial) {
      T x = random_tensor({7, 6}, rng);
      const std::size_t valid = 1 + rng.below(7);
      {
        NoGradScope<double> ng;
        const T d = selector_forward(x, p, valid, cfg);
        for (std::size_t c = 0; c < 2; ++c) {
          double s = 0;
          for (std::size_t i = 0; i < 7; ++i) s += d.at(i, c);
          EXPECT_NEAR(s, 1.0, 1e-6);
        }
      }
      const std::size_t y1 = rng.below(valid), y2 = y1 + rng.below(valid - y1);
      std::vector<T> inputs{x};
      for (const auto& t : params.trainable()) inputs.push_back(t.tensor);
      const auto r = check_gradients("selector", [&] { return nll_loss(selector_forward(x, p, valid, cfg), y1, y2); }, inputs, 1e-3, 30);
      EXPECT_TRUE(r.pass) << r.max_rel_diff;
    }
  }
}

TEST(Selector, PaddedRowsDoNotLeak) {
  const ModelConfig cfg = selector_config(SelectorKind::Conv);
  ParameterSet<double> params;
  Rng rng(4);
  const auto p = make_selector(params, "selector", cfg, rng);
  T x = random_tensor({8, 6}, rng, -1, 1, false);
  const T a = selector_forward(x, p, 5, cfg);
  for (std::size_t i = 30; i < 48; ++i) x.mutable_data()[i] = 100.0;
  const T b = selector_forward(x, p, 5, cfg);
  EXPECT_EQ(a.values(), b.values());
  EXPECT_THROW(selector_forward(x, p, 0, cfg), ContractError);
  EXPECT_THROW(selector_forward(x, p, 9, cfg), ContractError);
}

TEST(Selector, ConvParameterShapes) {
  ModelConfig cfg;
  ParameterSet<double> params;
  Rng rng(5);
  make_selector(params, "selector", cfg, rng);
  EXPECT_EQ(params.get("selector.conv1.kernel").tensor.shape(), (Shape{1, 9, 100, 32}));
  EXPECT_EQ(params.get("selector.conv2.kernel").tensor.shape(), (Shape{1, 9, 32, 2}));
}

TEST(NllLoss, KnownValues) {
  EXPECT_DOUBLE_EQ(nll_loss(T({2, 2}, {1, 0, 0, 1}), 0, 1).item(), 0.0);
  EXPECT_NEAR(nll_loss(T::full({4, 2}, 0.25), 1, 2).item(), 2.7726, 1e-4);
  EXPECT_NEAR(nll_loss(T::full({4, 2}, 0.25), 1, 2).item(), 2 * std::log(4.0), 1e-12);
  const double clamped = nll_loss(T({2, 2}, {0, 0, 1, 1}), 0, 1).item();
  EXPECT_TRUE(std::isfinite(clamped));
  EXPECT_NEAR(clamped, -std::log(1e-12), 1e-9);
}

TEST(NllLoss, InvalidGoldSpanIsDataError) {
  const T d = T::full({3, 2}, 1.0 / 3);
  EXPECT_THROW(nll_loss(d, 2, 1, "ex"), DataError);
  EXPECT_THROW(nll_loss(d, 0, 3, "ex"), DataError);
}

TEST(NllLoss, PermutationCovariant) {
  Rng rng(6);
  const auto p1 = random_distribution(rng, 6, false), p2 = random_distribution(rng, 6, false);
  const std::vector<std::size_t> perm{3, 5, 0, 1, 4, 2};  // new row r holds old row perm[r]
  std::vector<double> a, b;
  for (std::size_t i = 0; i < 6; ++i) a.insert(a.end(), {p1[i], p2[i]});
  for (std::size_t r = 0; r < 6; ++r) b.insert(b.end(), {p1[perm[r]], p2[perm[r]]});
  // Old (1, 4) are new rows 3 and 4.
  EXPECT_DOUBLE_EQ(nll_loss(T({6, 2}, a), 1, 4).item(), nll_loss(T({6, 2}, b), 3, 4).item());
}

TEST(DecodeSpan, PeakedCases) {
  std::vector<double> p1(10, 0.01), p2(10, 0.01);
  p1[2] = 0.91;
  p2[5] = 0.91;
  EXPECT_EQ(decode_span(p1, p2), (SpanPrediction{2, 5}));
  std::vector<double> q1(10, 0.01), q2(10, 0.01);
  q1[8] = 0.91;
  q2[2] = 0.91;
  const auto s = decode_span(q1, q2);
  EXPECT_EQ(s, decode_span_bruteforce(q1, q2));
  const auto o = oracle::brute_force_span(q1, q2, 15);
  EXPECT_EQ(s.start, o.start);
  EXPECT_EQ(s.end, o.end);
  EXPECT_EQ(decode_span({1.0}, {1.0}), (SpanPrediction{0, 0}));
}

TEST(DecodeSpan, WindowOfOneIsBestDiagonal) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p1 = random_distribution(rng, 20, false), p2 = random_distribution(rng, 20, false);
    std::size_t best = 0;
    for (std::size_t i = 1; i < 20; ++i)
      if (p1[i] * p2[i] > p1[best] * p2[best]) best = i;
    EXPECT_EQ(decode_span(p1, p2, 1), (SpanPrediction{best, best}));
  }
}

TEST(DecodeSpan, MatchesBruteForceOnRandomDistributions) {
  Rng rng(8);
  const auto t0 = std::chrono::steady_clock::now();
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(60);
    const bool coarse = trial % 3 == 0;
    const auto p1 = random_distribution(rng, n, coarse), p2 = random_distribution(rng, n, coarse);
    const std::size_t max_len = trial % 5 == 0 ? 1 + rng.below(20) : 15;
    const auto got = decode_span(p1, p2, max_len);
    const auto want = oracle::brute_force_span(p1, p2, max_len);
    ASSERT_EQ(got.start, want.start) << "trial " << trial;
    ASSERT_EQ(got.end, want.end) << "trial " << trial;
    ASSERT_EQ(got, decode_span_bruteforce(p1, p2, max_len));
    ASSERT_LE(got.start, got.end);
    ASSERT_LT(got.end, got.start + max_len);
    ASSERT_LT(got.end, n);
  }
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 5.0);
}

TEST(DecodeSpan, ImprovingChosenStartKeepsSpan) {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(40);
    auto p1 = random_distribution(rng, n, trial % 2 == 0);
    const auto p2 = random_distribution(rng, n, trial % 2 == 0);
    const auto before = decode_span(p1, p2);
    p1[before.start] += 0.3;
    double s = 0;
    for (double v : p1) s += v;
    for (auto& v : p1) v /= s;
    EXPECT_EQ(decode_span(p1, p2), before);
  }
}

TEST(DecodeSpan, EmptyInputIsContractError) {
  EXPECT_THROW(decode_span({}, {}), ContractError);
  EXPECT_THROW(decode_span({1.0}, {1.0}, 0), ContractError);
}
