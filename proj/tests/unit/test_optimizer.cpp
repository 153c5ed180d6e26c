#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include <fabir.hpp>

using namespace fabir;

namespace {

Parameter<double> scalar_param(const std::string& name, double value) {
  return {name, Tensor<double>({1}, {value}, true)};
}

void set_grad(Parameter<double>& p, double g) {
  p.tensor.zero_grad();
  Tape<double> tape;
  TapeScope<double> scope(tape);
  tape.backward(scale(sum(p.tensor), g));
}

}  // namespace

TEST(LrSchedule, FirstStepValue) { EXPECT_NEAR(lr_schedule(1, 100, 4000), 1.9764e-7, 1e-10); }

TEST(LrSchedule, PeakAtWarmup) {
  EXPECT_NEAR(lr_schedule(4000, 100, 4000), 0.5 / std::sqrt(100.0) / std::sqrt(4000.0), 1e-15);
}

TEST(LrSchedule, RisesThenDecays) {
  double prev = 0;
  for (std::size_t s = 1; s <= 4000; s += 37) {
    const double lr = lr_schedule(s, 100, 4000);
    EXPECT_GT(lr, prev);
    prev = lr;
  }
  prev = lr_schedule(4000, 100, 4000);
  for (std::size_t s = 4001; s < 40000; s += 997) {
    const double lr = lr_schedule(s, 100, 4000);
    EXPECT_LT(lr, prev);
    prev = lr;
  }
}

TEST(LrSchedule, Contracts) {
  EXPECT_THROW(lr_schedule(0, 100, 4000), ContractError);
  EXPECT_THROW(lr_schedule(1, 100, 0), ConfigError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  for (double g : {1.0, -3.0, 1e-4}) {
    auto p = scalar_param("w", 2.0);
    set_grad(p, g);
    AdamState<double> st;
    adam_step<double>({p}, st, 1e-3);
    EXPECT_NEAR(p.tensor.item(), 2.0 - 1e-3 * g / (std::abs(g) + 1e-9), 1e-15);
    EXPECT_EQ(st.step, 1u);
    EXPECT_NEAR(st.m["w"][0], 0.1 * g, 1e-15);
    EXPECT_NEAR(st.v["w"][0], 0.02 * g * g, 1e-15);
  }
}

TEST(Adam, SecondStepMatchesHandComputation) {
  auto p = scalar_param("w", 0.0);
  AdamState<double> st;
  set_grad(p, 1.0);
  adam_step<double>({p}, st, 0.1);
  set_grad(p, 2.0);
  adam_step<double>({p}, st, 0.1);
  const double m = 0.9 * 0.1 + 0.1 * 2.0, v = 0.98 * 0.02 + 0.02 * 4.0;
  const double want = -0.1 / (1.0 + 1e-9) - 0.1 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.98 * 0.98)) + 1e-9);
  EXPECT_NEAR(p.tensor.item(), want, 1e-12);
}

TEST(Adam, ZeroGradientLeavesParametersAndAdvancesStep) {
  auto p = scalar_param("w", 1.5);
  set_grad(p, 0.0);
  AdamState<double> st;
  adam_step<double>({p}, st, 1.0);
  EXPECT_EQ(p.tensor.item(), 1.5);
  EXPECT_EQ(st.step, 1u);
  auto q = scalar_param("u", -1.0);
  adam_step<double>({q}, st, 1.0);
  EXPECT_EQ(q.tensor.item(), -1.0);
  EXPECT_EQ(st.step, 2u);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  auto ok = scalar_param("fine", 1.0);
  auto bad = scalar_param("layers.0.broken", 1.0);
  set_grad(ok, 1.0);
  set_grad(bad, std::numeric_limits<double>::quiet_NaN());
  AdamState<double> st;
  try {
    adam_step<double>({ok, bad}, st, 0.1);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("layers.0.broken"), std::string::npos);
  }
  EXPECT_EQ(ok.tensor.item(), 1.0);
  EXPECT_EQ(st.step, 0u);
}

TEST(Adam, IdenticalRunsAreIdentical) {
  auto run = [] {
    Rng rng(4);
    std::vector<double> trace;
    auto p = scalar_param("w", 0.3);
    AdamState<double> st;
    for (std::size_t s = 1; s <= 50; ++s) {
      set_grad(p, rng.normal(0.0, 1.0));
      adam_step<double>({p}, st, lr_schedule(s, 16, 10));
      trace.push_back(p.tensor.item());
    }
    return trace;
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, MinimizesQuadratic) {
  auto p = scalar_param("w", 5.0);
  AdamState<double> st;
  for (int s = 0; s < 2000; ++s) {
    p.tensor.zero_grad();
    Tape<double> tape;
    TapeScope<double> scope(tape);
    tape.backward(sum(mul(p.tensor, p.tensor)));
    adam_step<double>({p}, st, 0.05);
  }
  EXPECT_LT(std::abs(p.tensor.item()), 1e-2);
}
