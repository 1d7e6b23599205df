#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sepcross/averaged.hpp"
#include "sepcross/presets.hpp"

using namespace sepcross;

namespace {

SlowVector zv(double z) { return SlowVector{z}; }

const ThetaContext& slow_ctx() {
  static const ThetaContext ctx(make_preset("dw-slow", {{"gamma", 0.2}}));
  return ctx;
}

const AveragedSolution& slow_solution() {
  static const AveragedSolution sol = integrate_averaged(slow_ctx(), AveragedInitial{0, 0.3, zv(1.0)}, 1.5);
  return sol;
}

double s1_closed(double z) { return 4.0 / 3.0 * std::pow(z, 1.5); }

}  // namespace

TEST(AveragedRhs, SeparatrixValueIsF3AtSaddle) {
  SlowFastSystem s = make_preset("dw-slow", {{"gamma", 0.2}});
  s.perturbation = [](double p, double q, const SlowVector&, double) {
    Perturbation f;
    f.f2 = -0.2 * p;
    f.f3 = SlowVector{1.5 + q * q + p};
    return f;
  };
  const ThetaContext ctx(s);
  const AveragedRates r = averaged_rhs(ctx, AveragedState{3, 0.0, zv(1.0)});
  EXPECT_EQ(r.dh, 0.0);
  EXPECT_DOUBLE_EQ(r.dz[0], 1.5);
  EXPECT_TRUE(r.asymptotic);
}

TEST(AveragedRhs, ConstantSlowDriftIsExact) {
  const AveragedRates r = averaged_rhs(slow_ctx(), AveragedState{3, 0.01, zv(1.0)});
  EXPECT_NEAR(r.dz[0], 1.0, 1e-12);
  EXPECT_FALSE(r.asymptotic);
}

TEST(AveragedRhs, MatchesQuadratureOracle) {
  for (double z : {0.6, 1.0, 1.7}) {
    const oracle::Quartic w{z, 0.0};
    for (double h : {0.5, 0.05, 1e-3}) {
      const AveragedRates r = averaged_rhs(slow_ctx(), AveragedState{3, h, zv(z)});
      EXPECT_NEAR(r.dh, oracle::averaged_dh(w, h, 3, 0.2, 1.0), 1e-11) << "z=" << z << " h=" << h;
    }
    for (int nu : {1, 2}) {
      const double h = -0.1 * z * z;
      const AveragedRates r = averaged_rhs(slow_ctx(), AveragedState{nu, h, zv(z)});
      EXPECT_NEAR(r.dh, oracle::averaged_dh(w, h, nu, 0.2, 1.0), 1e-11);
    }
  }
}

TEST(AveragedRhs, FluxLimitNearSeparatrix) {
  // gamma = 0, f3 = 1: Theta_3 = 4 at z = 1
  const ThetaContext ctx(make_preset("dw-slow", {{"gamma", 0.0}}));
  for (double h : {1e-3, 1e-5, 1e-6, 1e-8}) {
    const AveragedRates r = averaged_rhs(ctx, AveragedState{3, h, zv(1.0)});
    EXPECT_LT(r.dh, 0.0);
    EXPECT_NEAR(r.dh * r.period, -4.0, 20.0 * h * std::abs(std::log(h))) << h;
  }
}

TEST(AveragedRhs, BandAgreesWithOrbitAverage) {
  // inside the band the asymptotic form replaces quadrature; the two agree
  // up to O(1 / ln h) corrections in dz and O(h ln h) in T dh
  const ThetaContext& ctx = slow_ctx();
  const double h_sw = ctx.options().h_switch_rel * ctx.at(zv(1.0)).area[2];
  const double h = 0.5 * h_sw;
  const AveragedRates band = averaged_rhs(ctx, AveragedState{3, h, zv(1.0)});
  ASSERT_TRUE(band.asymptotic);
  const LevelOrbit o = level_orbit(ctx.system(), h, zv(1.0), 3, ctx.options(), true);
  EXPECT_NEAR(band.period, o.period, 1e-6 * o.period);
  EXPECT_NEAR(band.dh * band.period, o.work_integral, 1e-4);
}

TEST(AveragedRhs, RejectsInconsistentState) {
  EXPECT_THROW((void)averaged_rhs(slow_ctx(), AveragedState{3, -0.1, zv(1.0)}), PreconditionError);
  EXPECT_THROW((void)averaged_rhs(slow_ctx(), AveragedState{1, 0.1, zv(1.0)}), PreconditionError);
  EXPECT_THROW((void)averaged_rhs(slow_ctx(), AveragedState{4, 0.1, zv(1.0)}), PreconditionError);
}

TEST(ActionRate, ChainRuleIdentity) {
  const SlowFastSystem s = make_preset("dw-asym", {{"gamma", 0.2}, {"alpha", 0.3}, {"f3", 0.7}});
  const ThetaContext ctx(s);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> uz(0.6, 2.0), uf(0.05, 0.9);
  const double eps = 1e-3;
  for (int i = 0; i < 50; ++i) {
    const double z = uz(rng);
    const int nu = 1 + i % 3;
    double h = 0.0;
    if (nu == 3) {
      h = uf(rng);
    } else {
      const WellCenter wc = find_well_center(s, locate_saddle(s, zv(z)), nu);
      h = wc.energy * uf(rng);
    }
    const AveragedState st{nu, h, zv(z)};
    const double rate = action_rate(s, st, eps);
    const AveragedRates r = averaged_rhs(ctx, st);
    const double dz = 1e-4;
    const double di_dz =
        (action(s, h, zv(z + dz), nu) - action(s, h, zv(z - dz), nu)) / (2.0 * dz);
    const double chain = eps * (r.period / kTwoPi * r.dh + di_dz * r.dz[0]);
    EXPECT_NEAR(rate, chain, 1e-6 * std::max(std::abs(rate), eps * 1e-2)) << "nu=" << nu << " h=" << h;
  }
}

TEST(ActionRate, AdiabaticWellWithoutFriction) {
  // gamma = 0, f3 = 1: the area of every closed level line is conserved
  const SlowFastSystem s = make_preset("dw-slow", {{"gamma", 0.0}});
  for (double h : {-1e-6, -0.01, -0.2}) {
    EXPECT_NEAR(action_rate(s, AveragedState{1, h, zv(1.0)}, 1e-3), 0.0, 1e-14);
  }
  EXPECT_NEAR(action_rate(s, AveragedState{3, 0.2, zv(1.0)}, 1e-3), 0.0, 1e-14);
}

TEST(ActionRate, ZeroPerturbation) {
  const SlowFastSystem s = make_preset("dw-slow", {{"gamma", 0.0}, {"f3", 0.0}});
  EXPECT_EQ(action_rate(s, AveragedState{3, 0.3, zv(1.0)}, 1e-2), 0.0);
  EXPECT_THROW((void)action_rate(s, AveragedState{3, 1e-12, zv(1.0)}, 1e-2), NearSeparatrixError);
}

TEST(IntegrateAveraged, CrossingTimeAgainstReference) {
  const AveragedSolution& sol = slow_solution();
  ASSERT_TRUE(sol.crossing.has_value());
  const oracle::Crossing ref = oracle::crossing_time(1.0, 0.0, 0.2, 1.0, 0.3);
  EXPECT_GT(sol.crossing->tau_star, 0.0);
  EXPECT_NEAR(sol.crossing->tau_star, ref.tau, 1e-8);
  EXPECT_NEAR(sol.crossing->z_star[0], ref.z, 1e-8);
  EXPECT_LE(std::abs(sol.crossing->tau_star - ref.tau), sol.crossing->tau_error);
  EXPECT_DOUBLE_EQ(sol.crossing->p1, 0.5);
}

TEST(IntegrateAveraged, AsymmetricCrossingAgainstReference) {
  const ThetaContext ctx(make_preset("dw-asym", {{"gamma", 0.2}, {"alpha", 0.3}}));
  const AveragedSolution sol = integrate_averaged(ctx, AveragedInitial{0, 0.3, zv(1.0)}, 0.8);
  ASSERT_TRUE(sol.crossing.has_value());
  const oracle::Crossing ref = oracle::crossing_time(1.0, 0.3, 0.2, 1.0, 0.3);
  EXPECT_NEAR(sol.crossing->tau_star, ref.tau, 1e-8);
  const oracle::Quartic w{sol.crossing->z_star[0], 0.3};
  EXPECT_NEAR(sol.crossing->p1, oracle::capture_p1(w, 0.2, 1.0), 1e-8);
}

TEST(IntegrateAveraged, DissipativeWellDecayTime) {
  const ThetaContext ctx(make_preset("dw-dissip", {{"gamma", 0.2}}));
  const AveragedSolution sol = integrate_averaged(ctx, AveragedInitial{0, 0.3, SlowVector(0)}, 6.0);
  ASSERT_TRUE(sol.crossing.has_value());
  EXPECT_TRUE(sol.crossing->z_star.empty());
  const oracle::Crossing ref = oracle::crossing_time(1.0, 0.0, 0.2, 0.0, 0.3);
  EXPECT_NEAR(sol.crossing->tau_star, ref.tau, 1e-7);
  EXPECT_LE(std::abs(sol.crossing->tau_star - ref.tau), sol.crossing->tau_error);
  for (const AveragedSample& a : sol.pre.samples) EXPECT_TRUE(a.z.empty());
}

TEST(IntegrateAveraged, PostCrossingActionAnchor) {
  const AveragedSolution& sol = slow_solution();
  const double zs = sol.crossing->z_star[0];
  for (int nu : {1, 2}) {
    const AveragedBranch& b = sol.branch(nu);
    ASSERT_FALSE(b.empty());
    EXPECT_DOUBLE_EQ(b.tau_begin(), sol.crossing->tau_star);
    EXPECT_NEAR(b.samples.front().j, s1_closed(zs) / kTwoPi, 1e-9);
    EXPECT_EQ(b.samples.front().h, 0.0);
  }
}

TEST(IntegrateAveraged, BandToRegularHandoffKeepsAction) {
  // at the handoff the band action (u + S) / 2 pi must equal the action of
  // the level line the regular segment starts on
  const AveragedSolution& sol = slow_solution();
  const ThetaContext& ctx = slow_ctx();
  for (int nu : {1, 2}) {
    const AveragedBranch& b = sol.branch(nu);
    std::size_t k = 0;
    while (k < b.samples.size() && b.samples[k].band) ++k;
    ASSERT_GT(k, 1u);
    ASSERT_LT(k, b.samples.size());
    const AveragedSample& handoff = b.samples[k - 1];
    ASSERT_EQ(b.segments.size(), 2u);
    const AveragedSegment& reg = b.segments[1];
    EXPECT_DOUBLE_EQ(reg.begin(), handoff.tau);
    double h = 0.0;
    SlowVector z;
    reg.eval(handoff.tau, h, z);
    EXPECT_NEAR(z[0], handoff.z[0], 1e-14);
    EXPECT_NEAR(action(ctx.system(), h, z, nu), handoff.j, 1e-12);
    EXPECT_NEAR(h, handoff.h, 1e-4 * std::abs(h));
  }
}

TEST(IntegrateAveraged, GluingContinuity) {
  const AveragedSolution& sol = slow_solution();
  const double ts = sol.crossing->tau_star;
  const AveragedSample& end_pre = sol.pre.samples.back();
  EXPECT_DOUBLE_EQ(end_pre.tau, ts);
  EXPECT_EQ(end_pre.h, 0.0);
  EXPECT_NEAR(sol.pre.at(ts).h, 0.0, 1e-12);
  for (int nu : {1, 2}) {
    const AveragedState a = sol.at(ts + 1e-12, nu);
    EXPECT_NEAR(a.h, 0.0, 1e-9);
    EXPECT_NEAR(a.z[0], end_pre.z[0], 1e-9);
  }
}

TEST(IntegrateAveraged, MonotoneApproachAndDeparture) {
  const AveragedSolution& sol = slow_solution();
  const auto& pre = sol.pre.samples;
  for (std::size_t i = 1; i < pre.size(); ++i) EXPECT_LT(pre[i].h, pre[i - 1].h);
  for (int nu : {1, 2}) {
    const auto& post = sol.branch(nu).samples;
    for (std::size_t i = 1; i < post.size(); ++i) EXPECT_GT(std::abs(post[i].h), std::abs(post[i - 1].h));
  }
}

TEST(IntegrateAveraged, DenseOutputMatchesSamples) {
  const AveragedSolution& sol = slow_solution();
  for (int nu : {1, 2}) {
    for (const AveragedSample& a : sol.branch(nu).samples) {
      const AveragedState st = sol.branch(nu).at(a.tau);
      EXPECT_NEAR(st.h, a.h, 1e-12);
      EXPECT_NEAR(st.z[0], a.z[0], 1e-12);
    }
  }
  // sampled derivatives agree with differences of the dense output
  const AveragedBranch& b = sol.branch(1);
  const AveragedSample& a = b.samples[b.samples.size() / 2];
  const double d = 1e-5;
  EXPECT_NEAR((b.at(a.tau + d).h - b.at(a.tau - d).h) / (2 * d), a.dh, 1e-7);
}

TEST(IntegrateAveraged, UniquenessFromSeparatrix) {
  const ThetaContext& ctx = slow_ctx();
  AveragedControl a;
  a.initial_step = 1e-3;
  AveragedControl b;
  b.initial_step = 3.7e-5;
  b.max_step = 0.011;
  const AveragedSolution sa = integrate_averaged(ctx, AveragedInitial{0, 0.0, zv(1.3)}, 0.8, a);
  const AveragedSolution sb = integrate_averaged(ctx, AveragedInitial{0, 0.0, zv(1.3)}, 0.8, b);
  ASSERT_TRUE(sa.crossing && sb.crossing);
  EXPECT_EQ(sa.crossing->tau_star, 0.0);
  EXPECT_NE(sa.branch(1).samples.size(), sb.branch(1).samples.size());
  for (int nu : {1, 2}) {
    for (double tau = 0.0; tau <= 0.8; tau += 0.05) {
      const AveragedState x = sa.at(tau, nu);
      const AveragedState y = sb.at(tau, nu);
      EXPECT_NEAR(x.h, y.h, 1e-8) << tau;
      EXPECT_NEAR(x.z[0], y.z[0], 1e-8);
    }
  }
}

TEST(IntegrateAveraged, CrossingTimeRobustUnderTolerance) {
  const SlowFastSystem s = make_preset("dw-slow", {{"gamma", 0.2}});
  NumericOptions fine;
  fine.averaged_rtol *= 0.5;
  fine.averaged_atol *= 0.5;
  const AveragedSolution& base = slow_solution();
  const ThetaContext ctx(s, fine);
  const AveragedSolution half = integrate_averaged(ctx, AveragedInitial{0, 0.3, zv(1.0)}, 1.0);
  EXPECT_LT(std::abs(half.crossing->tau_star - base.crossing->tau_star), base.crossing->tau_error);
}

TEST(IntegrateAveraged, StartInsideLoop) {
  const ThetaContext ctx(make_preset("dw-dissip", {{"gamma", 0.2}}));
  const AveragedSolution sol = integrate_averaged(ctx, AveragedInitial{2, -0.1, SlowVector(0)}, 2.0);
  EXPECT_FALSE(sol.crossing.has_value());
  EXPECT_EQ(sol.pre.nu, 2);
  const auto& smp = sol.pre.samples;
  for (std::size_t i = 1; i < smp.size(); ++i) EXPECT_LT(smp[i].h, smp[i - 1].h);
  EXPECT_GT(smp.back().h, -0.25);
}

TEST(IntegrateAveraged, NoCrossingWithinSpan) {
  const AveragedSolution sol = integrate_averaged(slow_ctx(), AveragedInitial{0, 0.3, zv(1.0)}, 0.2);
  EXPECT_FALSE(sol.crossing.has_value());
  EXPECT_DOUBLE_EQ(sol.pre.tau_end(), 0.2);
  EXPECT_GT(sol.pre.samples.back().h, 0.0);
}

TEST(IntegrateAveraged, Errors) {
  const ThetaContext& ctx = slow_ctx();
  EXPECT_THROW((void)integrate_averaged(ctx, AveragedInitial{0, 0.3, zv(1.0)}, 5.0), DomainError);
  EXPECT_THROW((void)integrate_averaged(ctx, AveragedInitial{0, -0.1, zv(1.0)}, 1.0), PreconditionError);
  EXPECT_THROW((void)integrate_averaged(ctx, AveragedInitial{1, 0.1, zv(1.0)}, 1.0), PreconditionError);
  EXPECT_THROW((void)integrate_averaged(ctx, AveragedInitial{0, 0.3, zv(1.0)}, -1.0), PreconditionError);
  EXPECT_THROW((void)integrate_averaged(ctx, AveragedInitial{0, 0.3, zv(9.0)}, 1.0), DomainError);
  // negative friction and no drift: Theta_3 < 0
  const ThetaContext anti(make_preset("dw-slow", {{"gamma", -0.2}, {"f3", 0.0}}));
  EXPECT_THROW((void)integrate_averaged(anti, AveragedInitial{0, 1e-7, zv(1.0)}, 1.0), ConditionError);
}

TEST(DistanceCheck, IdenticalSolutions) {
  const AveragedSolution& sol = slow_solution();
  const DistanceReport r = averaged_distance_check(sol, sol, 1e-3);
  EXPECT_EQ(r.max_separation, 0.0);
  EXPECT_EQ(r.constant, 0.0);
}

TEST(DistanceCheck, ConstantStableUnderHalvingDelta) {
  const ThetaContext& ctx = slow_ctx();
  AveragedControl ctl;
  ctl.estimate_error = false;
  const AveragedSolution base = integrate_averaged(ctx, AveragedInitial{0, 0.0, zv(1.2)}, 0.6, ctl);
  double constants[2];
  int k = 0;
  for (double delta : {1e-3, 5e-4}) {
    const AveragedSolution other = integrate_averaged(ctx, AveragedInitial{0, 0.0, zv(1.2 + delta)}, 0.6, ctl);
    const DistanceReport r = averaged_distance_check(base, other, delta);
    EXPECT_TRUE(std::isfinite(r.constant));
    EXPECT_GT(r.constant, 0.0);
    constants[k++] = r.constant;
  }
  EXPECT_LT(constants[0] / constants[1], 2.0);
  EXPECT_GT(constants[0] / constants[1], 0.5);
}

TEST(DistanceCheck, ProximityHypothesis) {
  const AveragedSolution& sol = slow_solution();
  EXPECT_THROW((void)averaged_distance_check(sol, sol, 0.5), PreconditionError);
  const AveragedSolution far = integrate_averaged(slow_ctx(), AveragedInitial{0, 0.35, zv(1.0)}, 1.5);
  EXPECT_THROW((void)averaged_distance_check(sol, far, 0.01), PreconditionError);
}
