#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include <gtest/gtest.h>

#include "sepcross/ode/dop853.hpp"
#include "sepcross/ode/events.hpp"

using sepcross::ode::Dop853;
using sepcross::ode::StepperOptions;

namespace {

struct Oscillator {
  void operator()(double, std::span<const double> y, std::span<double> dy) const {
    dy[0] = y[1];
    dy[1] = -y[0];
  }
};

}  // namespace

TEST(Dop853, HarmonicOscillatorOverTenPeriods) {
  StepperOptions opt;
  opt.rtol = 1e-12;
  opt.atol = 1e-14;
  Dop853 st(2, Oscillator{}, opt);
  const std::vector<double> y0{1.0, 0.0};
  st.reset(0.0, y0);
  const double t_end = 20.0 * std::numbers::pi;
  while (st.step(t_end)) {
  }
  EXPECT_DOUBLE_EQ(st.t(), t_end);
  EXPECT_NEAR(st.y()[0], 1.0, 1e-10);
  EXPECT_NEAR(st.y()[1], 0.0, 1e-10);
}

TEST(Dop853, DenseOutputMatchesExactSolution) {
  Dop853 st(2, Oscillator{}, StepperOptions{1e-11, 1e-13});
  const std::vector<double> y0{1.0, 0.0};
  st.reset(0.0, y0);
  std::vector<double> y(2);
  double worst = 0.0;
  while (st.step(10.0)) {
    for (int k = 1; k < 8; ++k) {
      const double t = st.t_prev() + (st.t() - st.t_prev()) * k / 8.0;
      st.dense(t, y);
      worst = std::max(worst, std::abs(y[0] - std::cos(t)) + std::abs(y[1] + std::sin(t)));
    }
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(Dop853, BackwardIntegration) {
  Dop853 st(2, Oscillator{}, StepperOptions{1e-12, 1e-14});
  const std::vector<double> y0{1.0, 0.0};
  st.reset(0.0, y0, -1.0);
  while (st.step(-3.0)) {
  }
  EXPECT_NEAR(st.y()[0], std::cos(3.0), 1e-10);
  EXPECT_NEAR(st.y()[1], std::sin(3.0), 1e-10);
}

TEST(Dop853, ErrorScalesWithTolerance) {
  auto run = [](double rtol) {
    Dop853 st(2, Oscillator{}, StepperOptions{rtol, rtol * 1e-2});
    const std::vector<double> y0{1.0, 0.0};
    st.reset(0.0, y0);
    while (st.step(50.0)) {
    }
    return std::abs(st.y()[0] - std::cos(50.0));
  };
  EXPECT_LT(run(1e-12), run(1e-6));
  EXPECT_LT(run(1e-6), 1e-4);
}

TEST(Events, RefinesZeroCrossingToTolerance) {
  Dop853 st(2, Oscillator{}, StepperOptions{1e-12, 1e-14});
  const std::vector<double> y0{1.0, 0.0};
  st.reset(0.0, y0);
  std::vector<double> y(2);
  double g_prev = st.y()[0];
  std::vector<double> roots;
  while (st.step(10.0)) {
    const double g_now = st.y()[0];
    if ((g_prev < 0) != (g_now < 0)) {
      roots.push_back(sepcross::ode::refine_event(
          st, [](double, std::span<const double> yy) { return yy[0]; }, g_prev, g_now, y));
    }
    g_prev = g_now;
  }
  ASSERT_EQ(roots.size(), 3u);
  for (std::size_t k = 0; k < roots.size(); ++k) {
    EXPECT_NEAR(roots[k], (0.5 + static_cast<double>(k)) * std::numbers::pi, 1e-11);
  }
  for (std::size_t k = 1; k < roots.size(); ++k) EXPECT_GT(roots[k], roots[k - 1]);
}

TEST(Dop853, StoredCoefficientsReproduceDenseOutput) {
  Dop853 st(2, Oscillator{}, StepperOptions{1e-10, 1e-12});
  const std::vector<double> y0{1.0, 0.0};
  st.reset(0.0, y0);
  ASSERT_TRUE(st.step(5.0));
  const std::vector<double> coeffs(st.dense_coefficients().begin(), st.dense_coefficients().end());
  const double t = st.t_prev() + 0.3 * st.last_step();
  std::vector<double> y(2);
  st.dense(t, y);
  EXPECT_DOUBLE_EQ(sepcross::ode::dense_from_coefficients(coeffs, 2, st.t_prev(), st.last_step(), t, 0), y[0]);
}
