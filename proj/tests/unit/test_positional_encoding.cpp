#include <gtest/gtest.h>

#include <fabir/positional_encoding.hpp>

#include <cmath>

using namespace fabir;

TEST(PositionEncoding, RowZeroAlternatesZeroOne) {
  const auto e = encode_positions<double>(3, 8);
  for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(e.at(0, j), j % 2 == 0 ? 0.0 : 1.0);
}

TEST(PositionEncoding, WidthTwoRowOne) {
  const auto e = encode_positions<double>(2, 2);
  EXPECT_NEAR(e.at(1, 0), 0.841471, 1e-6);
  EXPECT_NEAR(e.at(1, 1), 0.540302, 1e-6);
}

TEST(PositionEncoding, OddWidthIsConfigError) {
  EXPECT_THROW(encode_positions<double>(4, 3), ConfigError);
  EXPECT_THROW(encode_positions<double>(0, 4), ConfigError);
}

TEST(PositionEncoding, FrequencyFormula) {
  EXPECT_EQ(encoding_frequency(0, 100), 1.0);
  EXPECT_NEAR(encoding_frequency(1, 100), std::pow(10000.0, -0.02), 1e-15);
  const auto e = encode_positions<double>(20, 100);
  for (std::size_t k = 0; k < 50; ++k) {
    const double f = std::pow(10000.0, -2.0 * static_cast<double>(k) / 100.0);
    EXPECT_NEAR(e.at(7, 2 * k), std::sin(7 * f), 1e-12);
    EXPECT_NEAR(e.at(7, 2 * k + 1), std::cos(7 * f), 1e-12);
  }
}

TEST(PositionEncoding, RowsPairwiseDistinct) {
  const std::size_t n = 512, d = 100;
  const auto e = encode_positions<double>(n, d);
  double min_dist = 1e9;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b) {
      double s = 0;
      for (std::size_t j = 0; j < d; ++j) s += (e.at(a, j) - e.at(b, j)) * (e.at(a, j) - e.at(b, j));
      min_dist = std::min(min_dist, std::sqrt(s));
    }
  EXPECT_GT(min_dist, 1e-6);
}

TEST(PositionEncoding, PrefixProperty) {
  const auto long_e = encode_positions<double>(300, 100);
  const auto short_e = encode_positions<double>(40, 100);
  for (std::size_t i = 0; i < short_e.numel(); ++i) EXPECT_EQ(long_e[i], short_e[i]);
}

TEST(PositionEncoding, RowNormAndRange) {
  const std::size_t d = 100;
  const auto e = encode_positions<double>(256, d);
  for (std::size_t i = 0; i < 256; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) {
      EXPECT_LE(std::abs(e.at(i, j)), 1.0);
      s += e.at(i, j) * e.at(i, j);
    }
    EXPECT_NEAR(std::sqrt(s), std::sqrt(d / 2.0), 1e-9);
  }
}

TEST(PositionEncoding, FloatIsCastOfDouble) {
  const auto d = encode_positions<double>(50, 100);
  const auto f = encode_positions<float>(50, 100);
  for (std::size_t i = 0; i < d.numel(); ++i) EXPECT_EQ(f[i], static_cast<float>(d[i]));
}
