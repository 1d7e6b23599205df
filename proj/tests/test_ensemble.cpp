#include <cmath>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sepcross/ensemble.hpp"
#include "sepcross/presets.hpp"

using namespace sepcross;

namespace {

const ThetaContext& dissip_ctx() {
  static const ThetaContext ctx(make_preset("dw-dissip"));
  return ctx;
}

const ThetaContext& slow_ctx() {
  static const ThetaContext ctx(make_preset("dw-slow", {{"gamma", 0.2}}), {}, 0.25, 4.0);
  return ctx;
}

EnsembleSpec dissip_spec(std::size_t n, double eps, std::uint64_t seed) {
  EnsembleSpec sp;
  sp.base = BasePoint{std::sqrt(0.6), 0.0, SlowVector(0)};
  sp.delta = 0.1;
  sp.eps = {eps};
  sp.n = n;
  sp.seed = seed;
  sp.t_span = 8.0;
  sp.threads = 1;
  return sp;
}

EnsembleSpec slow_spec(std::size_t n) {
  EnsembleSpec sp;
  sp.base = BasePoint{std::sqrt(0.6), 0.0, SlowVector{1.0}};
  sp.delta = 0.05;
  sp.eps = {1e-3};
  sp.n = n;
  sp.seed = 7;
  sp.t_span = 2.0;
  return sp;
}

}  // namespace

TEST(CounterRng, DependsOnlyOnSeedAndStream) {
  CounterRng a(5, 17), b(5, 17), c(5, 18), d(6, 17);
  for (int k = 0; k < 100; ++k) {
    const double x = a.uniform();
    EXPECT_EQ(x, b.uniform());
    EXPECT_NE(x, c.uniform());
    EXPECT_NE(x, d.uniform());
    EXPECT_GE(x, 0.0);
    EXPECT_LT(x, 1.0);
  }
}

TEST(CounterRng, MomentsOfUniform) {
  CounterRng r(11, 0);
  const int n = 200000;
  double m1 = 0.0, m2 = 0.0;
  for (int k = 0; k < n; ++k) {
    const double x = r.symmetric();
    m1 += x;
    m2 += x * x;
  }
  EXPECT_NEAR(m1 / n, 0.0, 4.0 * std::sqrt(1.0 / 3.0 / n));
  EXPECT_NEAR(m2 / n, 1.0 / 3.0, 4.0 * std::sqrt(4.0 / 45.0 / n));
}

TEST(SampleInitials, UniformOverBox) {
  const EnsembleSpec sp = [] {
    EnsembleSpec s = slow_spec(10000);
    s.seed = 2024;
    return s;
  }();
  const std::vector<BoxSample> xs = sample_initials(slow_ctx().system(), sp);
  const BaseCoordinates b = base_coordinates(slow_ctx().system(), sp.base);
  ASSERT_EQ(xs.size(), 10000u);
  std::vector<double> count(64, 0.0);
  auto bin = [&](double x, double c) {
    const double u = (x - c + sp.delta) / (2.0 * sp.delta);
    EXPECT_GT(u, 0.0);
    EXPECT_LT(u, 1.0);
    return std::min(3, static_cast<int>(4.0 * u));
  };
  for (const BoxSample& x : xs) {
    const int i = bin(x.z[0], b.z[0]), j = bin(x.action, b.action), k = bin(x.angle, b.angle);
    count[static_cast<std::size_t>(16 * i + 4 * j + k)] += 1.0;
  }
  const double expected = 10000.0 / 64.0;
  double chi2 = 0.0;
  for (double c : count) chi2 += (c - expected) * (c - expected) / expected;
  // chi-square with 63 degrees of freedom: 0.999 quantile is about 103.4
  EXPECT_LT(chi2, 103.4);
}

TEST(SampleInitials, ReproducibleAndCellsConsistent) {
  const EnsembleSpec sp = slow_spec(50);
  const auto a = sample_initials(slow_ctx().system(), sp);
  const auto b = sample_initials(slow_ctx().system(), sp);
  const BaseCoordinates base = base_coordinates(slow_ctx().system(), sp.base);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].z[0], b[i].z[0]);
    EXPECT_EQ(a[i].action, b[i].action);
    EXPECT_EQ(a[i].angle, b[i].angle);
    const int cell = (a[i].z[0] >= base.z[0] ? 1 : 0) | (a[i].action >= base.action ? 2 : 0) |
                     (a[i].angle >= base.angle ? 4 : 0);
    EXPECT_EQ(a[i].cell, cell);
  }
}

TEST(SampleInitials, MappedPointsHaveRequestedActionAngle) {
  const EnsembleSpec sp = slow_spec(20);
  auto xs = sample_initials(slow_ctx().system(), sp);
  for (BoxSample& x : xs) {
    map_sample(slow_ctx().system(), x);
    const ActionAngle aa = to_action_angle(slow_ctx().system(), x.initial.p, x.initial.q, x.z);
    EXPECT_EQ(aa.nu, 3);
    EXPECT_NEAR(aa.action, x.action, 1e-9);
    EXPECT_NEAR(std::remainder(aa.angle - x.angle, 2.0 * std::numbers::pi), 0.0, 1e-8);
    EXPECT_NEAR(oracle::action(oracle::Quartic{x.z[0], 0.0}, x.h0, 3), x.action, 1e-9);
  }
}

TEST(SampleInitials, Errors) {
  const SlowFastSystem& s = slow_ctx().system();
  EnsembleSpec sp = slow_spec(10);
  sp.delta = 0.8;  // z box [0.2, 1.8] leaves the domain
  EXPECT_THROW(sample_initials(s, sp), DomainError);
  sp = slow_spec(10);
  sp.base = BasePoint{std::sqrt(2.0 * 0.01), 0.0, SlowVector{1.0}};  // just above the separatrix
  sp.delta = 0.05;
  EXPECT_THROW(sample_initials(s, sp), PreconditionError);
  sp.base = BasePoint{0.0, 1.0, SlowVector{1.0}};  // inside loop 1
  EXPECT_THROW(sample_initials(s, sp), PreconditionError);
}

TEST(CaptureExperiment, SpecValidation) {
  EnsembleSpec sp = slow_spec(10);
  sp.eps = {3e-3};  // eps >= delta^2
  EXPECT_THROW(run_capture_experiment(slow_ctx(), sp), PreconditionError);
  sp = slow_spec(0);
  EXPECT_THROW(run_capture_experiment(slow_ctx(), sp), PreconditionError);
  sp = slow_spec(10);
  sp.t_span = 0.1;  // averaged solution has not reached the separatrix
  EXPECT_THROW(run_capture_experiment(slow_ctx(), sp), PreconditionError);
}

TEST(CaptureExperiment, DeterministicAcrossThreadCounts) {
  EnsembleSpec sp = dissip_spec(24, 4e-3, 99);
  const EnsembleReport one = run_capture_experiment(dissip_ctx(), sp);
  sp.threads = 3;
  const EnsembleReport three = run_capture_experiment(dissip_ctx(), sp);
  ASSERT_EQ(one.results[0].trajectories.size(), three.results[0].trajectories.size());
  for (std::size_t i = 0; i < one.results[0].trajectories.size(); ++i) {
    const auto& a = one.results[0].trajectories[i];
    const auto& b = three.results[0].trajectories[i];
    EXPECT_EQ(a.destination, b.destination);
    EXPECT_EQ(a.capture.t_plus, b.capture.t_plus);
    EXPECT_EQ(a.h0, b.h0);
  }
  EXPECT_EQ(one.results[0].n1, three.results[0].n1);
}

TEST(CaptureExperiment, SymmetricSplitAndCellTotals) {
  const EnsembleReport rep = run_capture_experiment(dissip_ctx(), dissip_spec(400, 2e-3, 3));
  EXPECT_NEAR(rep.p1, 0.5, 1e-12);
  const EpsilonResult& r = rep.results[0];
  EXPECT_EQ(r.n1 + r.n2 + r.incomplete, r.n);
  EXPECT_EQ(r.incomplete, 0u);
  EXPECT_NEAR(r.f1, 0.5, 4.0 * r.se1);
  std::size_t n1 = 0, n2 = 0, inc = 0;
  for (const CellCounts& c : r.cells) {
    n1 += c.n1;
    n2 += c.n2;
    inc += c.incomplete;
  }
  EXPECT_EQ(n1, r.n1);
  EXPECT_EQ(n2, r.n2);
  EXPECT_EQ(inc, r.incomplete);
  // without z only the I and phi bits vary: cells 0, 2, 4, 6
  for (std::size_t c = 1; c < 8; c += 2) EXPECT_EQ(r.cells[c].n1 + r.cells[c].n2 + r.cells[c].incomplete, 0u);
  EXPECT_EQ(r.predictor_evaluated + r.predictor_excluded, r.n);
  EXPECT_GE(r.agreement, 0.97);
  EXPECT_NEAR(r.budget_shape, 0.1 + 2e-3 * std::abs(std::log(2e-3)) / 0.1, 1e-15);
}

TEST(CaptureExperiment, FractionErrorShrinksLikeInverseRootN) {
  // rms of f1 - 1/2 over independent seeds, N = 40 against N = 640
  auto rms = [](std::size_t n, std::uint64_t seed0) {
    double ss = 0.0;
    const int k = 6;
    for (int i = 0; i < k; ++i) {
      const EnsembleReport rep = run_capture_experiment(dissip_ctx(), dissip_spec(n, 4e-3, seed0 + i));
      const double d = rep.results[0].f1 - 0.5;
      ss += d * d;
    }
    return std::sqrt(ss / k);
  };
  const double small = rms(40, 1000), large = rms(640, 2000);
  ASSERT_GT(large, 0.0);
  // expected ratio 4; factor 2 either way
  EXPECT_GT(small / large, 2.0);
  EXPECT_LT(small / large, 8.0);
}

TEST(CaptureExperiment, DeviationConsistentWithBudgetShape) {
  // |f1 - P1| at three box sizes against c1 delta + c2 eps |ln eps| / delta
  const ThetaContext ctx(make_preset("dw-asym", {{"gamma", 0.2}}), {}, 0.25, 4.0);
  const double eps = 5e-4;
  std::vector<double> delta{0.025, 0.05, 0.1}, dev, se;
  for (double d : delta) {
    EnsembleSpec sp = slow_spec(500);
    sp.delta = d;
    sp.eps = {eps};
    sp.seed = 31;
    const EnsembleReport rep = run_capture_experiment(ctx, sp);
    const EpsilonResult& r = rep.results[0];
    EXPECT_EQ(r.incomplete, 0u);
    dev.push_back(std::abs(r.f1 - rep.p1));
    se.push_back(r.se1);
  }
  const BudgetFit f = fit_budget(delta, dev, se, eps);
  EXPECT_GE(f.c1, 0.0);
  EXPECT_GE(f.c2, 0.0);
  EXPECT_LE(f.max_residual_sigma, 3.0) << dev[0] << " " << dev[1] << " " << dev[2];
}

TEST(BudgetFit, RecoversExactShape) {
  const double eps = 1e-3;
  const double l = eps * std::abs(std::log(eps));
  const std::vector<double> d{0.025, 0.05, 0.1};
  std::vector<double> dev, se(3, 0.01);
  for (double x : d) dev.push_back(0.3 * x + 2.0 * l / x);
  const BudgetFit f = fit_budget(d, dev, se, eps);
  EXPECT_NEAR(f.c1, 0.3, 1e-9);
  EXPECT_NEAR(f.c2, 2.0, 1e-9);
  EXPECT_LT(f.max_residual_sigma, 1e-9);
}

TEST(BudgetFit, ClampsToNonNegative) {
  const std::vector<double> d{0.025, 0.05, 0.1};
  const std::vector<double> dev{0.01, 0.02, 0.04};  // pure c1 delta with c1 = 0.4
  const BudgetFit f = fit_budget(d, dev, std::vector<double>(3, 0.005), 1e-3);
  EXPECT_GE(f.c2, 0.0);
  EXPECT_NEAR(f.c1, 0.4, 1e-9);
  EXPECT_THROW(fit_budget(d, {0.1}, {0.1}, 1e-3), PreconditionError);
}

TEST(ScalingSweep, Preconditions) {
  EnsembleSpec sp = slow_spec(20);
  sp.delta = 0.1;
  sp.eps = {4e-3, 2e-3, 1e-3};
  EXPECT_THROW(error_scaling_sweep(slow_ctx(), sp), PreconditionError);
  sp.eps = {8e-3, 4e-3, 2e-3, 1e-3};
  sp.n = 10;
  EXPECT_THROW(error_scaling_sweep(slow_ctx(), sp), PreconditionError);
}

TEST(AnosovSweep, CountsAndErrors) {
  const BasePoint base{std::sqrt(0.6), 0.0, SlowVector(0)};
  EXPECT_THROW(anosov_sweep(dissip_ctx(), base, 4e-3, 0, 1, 8.0), PreconditionError);
  EXPECT_THROW(anosov_sweep(dissip_ctx(), base, 0.0, 10, 1, 8.0), PreconditionError);
  const AnosovReport r = anosov_sweep(dissip_ctx(), base, 4e-3, 60, 1, 8.0);
  EXPECT_EQ(r.n1 + r.n2 + r.incomplete, 60u);
  EXPECT_EQ(r.incomplete, 0u);
  std::set<double> eps;
  for (const auto& t : r.trajectories) {
    EXPECT_GT(t.eps, 2e-3);
    EXPECT_LE(t.eps, 4e-3);
    eps.insert(t.eps);
  }
  EXPECT_EQ(eps.size(), 60u);
  // both outcomes occur for a fixed start when eps varies
  EXPECT_GT(r.n1, 0u);
  EXPECT_GT(r.n2, 0u);
}
