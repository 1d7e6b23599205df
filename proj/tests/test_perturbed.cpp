#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sepcross/perturbed.hpp"
#include "sepcross/presets.hpp"

using namespace sepcross;

namespace {

SlowVector zv(double z) { return SlowVector{z}; }

// point of energy h on the q = 0 axis (p > 0), z-free double well
FullState dissip_start(double h) { return FullState{std::sqrt(2.0 * h), 0.0, SlowVector(0)}; }

const ThetaContext& dissip_ctx() {
  static const ThetaContext ctx(make_preset("dw-dissip"));
  return ctx;
}

const Trajectory& dissip_run() {
  static const Trajectory tr = [] {
    FullControl ctl;
    ctl.record_dense = true;
    return integrate_full(dissip_ctx().system(), dissip_start(0.3), 1e-3, 6000.0, {}, ctl);
  }();
  return tr;
}

double dissip_theta3() { return 2.0 * 0.2 * 4.0 / 3.0; }

}  // namespace

TEST(IntegrateFull, UnperturbedConservation) {
  const SlowFastSystem s = make_preset("dw-slow", {{"gamma", 0.2}});
  for (double h : {0.3, -0.1}) {
    const double q0 = h > 0.0 ? 0.0 : 1.0;
    const double p0 = std::sqrt(2.0 * (h - s.energy(0.0, q0, zv(1.0))));
    const Trajectory tr = integrate_full(s, FullState{p0, q0, zv(1.0)}, 0.0, 300.0);
    ASSERT_GT(tr.size(), 100u);
    double worst = 0.0;
    for (std::size_t i = 0; i < tr.size(); ++i) {
      worst = std::max(worst, std::abs(tr.h[i] - tr.h_initial));
      EXPECT_EQ(tr.z(i)[0], 1.0);
      if (i > 0) {
        EXPECT_GT(tr.t[i], tr.t[i - 1]);
      }
    }
    EXPECT_LE(worst, 1e-9) << "h=" << h;
  }
}

TEST(IntegrateFull, EnergyBookkeeping) {
  const SlowFastSystem s = make_preset("dw-asym", {{"gamma", 0.1}, {"f3", 0.5}});
  const Trajectory tr = integrate_full(s, FullState{0.8, 0.1, zv(1.0)}, 1e-2, 150.0);
  EXPECT_NEAR(tr.h_final - tr.h_initial, tr.work_final, 1e-8);
  EXPECT_GT(std::abs(tr.work_final), 1e-3);
}

TEST(IntegrateFull, DissipativeRoundDecrement) {
  const Trajectory& tr = dissip_run();
  const double eps = tr.eps;
  const double target = eps * dissip_theta3();
  int checked = 0;
  for (std::size_t k = 1; k < tr.events.size(); ++k) {
    const SectionEvent& a = tr.events[k - 1];
    const SectionEvent& b = tr.events[k];
    if (tr.t_plus && b.t > *tr.t_plus) break;
    if (a.h <= 0.0 || b.h <= 0.0) continue;
    const double dh = b.h - a.h;
    EXPECT_LT(dh, -0.5 * target);
    if (a.h < 5.0 * eps) {
      EXPECT_NEAR(-dh, target, 2.0 * std::pow(eps, 1.5)) << "h=" << a.h;
      ++checked;
    }
  }
  EXPECT_GE(checked, 2);
}

TEST(IntegrateFull, SlowDriftEndsInLoop) {
  const SlowFastSystem s = make_preset("dw-slow", {{"gamma", 0.2}});
  FullControl ctl;
  ctl.record_samples = false;
  const Trajectory tr = integrate_full(s, FullState{std::sqrt(0.6), 0.0, zv(1.0)}, 1e-3, 1000.0, {}, ctl);
  ASSERT_TRUE(tr.t_plus.has_value());
  EXPECT_TRUE(tr.region_at_t_plus == 1 || tr.region_at_t_plus == 2);
  EXPECT_EQ(detect_region(s, tr.final_state.p, tr.final_state.q, tr.final_state.z), tr.region_at_t_plus);
  EXPECT_LT(tr.h_final, 0.0);
}

TEST(IntegrateFull, TimeReversalEscapes) {
  const SlowFastSystem s = make_preset("dw-dissip", {{"gamma", -0.2}});
  const Trajectory tr = integrate_full(s, FullState{0.0, 1.2, SlowVector(0)}, 1e-2, 1500.0);
  EXPECT_LT(tr.h_initial, 0.0);
  EXPECT_GT(tr.h_final, 0.0);
  EXPECT_FALSE(tr.t_minus.has_value());
  ASSERT_FALSE(tr.transitions.empty());
  EXPECT_EQ(tr.transitions.front().from, 1);
  EXPECT_EQ(tr.transitions.back().to, 3);
  // h increases on average over each tenth of the run
  const std::size_t m = tr.size() / 10;
  for (std::size_t k = 1; k < 10; ++k) EXPECT_GT(tr.h[(k + 1) * m - 1], tr.h[k * m - 1] - 1e-3);
}

TEST(IntegrateFull, DomainEscapeIsReported) {
  const SlowFastSystem s = make_preset("dw-slow");
  try {
    integrate_full(s, FullState{0.5, 0.0, zv(3.9)}, 1e-2, 100.0);
    FAIL() << "expected DomainError";
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("z0="), std::string::npos) << e.what();
  }
}

TEST(IntegrateFull, RejectsBadArguments) {
  const SlowFastSystem s = make_preset("dw-slow");
  EXPECT_THROW(integrate_full(s, FullState{0.5, 0.0, SlowVector(0)}, 1e-3, 1.0), PreconditionError);
  EXPECT_THROW(integrate_full(s, FullState{0.5, 0.0, zv(1.0)}, -1e-3, 1.0), PreconditionError);
  EXPECT_THROW(integrate_full(s, FullState{0.5, 0.0, zv(1.0)}, 1e-3, 0.0), PreconditionError);
  EXPECT_THROW(integrate_full(s, FullState{0.5, 0.0, zv(5.0)}, 1e-3, 1.0), DomainError);
}

TEST(DetectRegion, Examples) {
  const SlowFastSystem s = make_preset("dw-slow");
  EXPECT_EQ(detect_region(s, 0.0, 1.0, zv(1.0)), 1);
  EXPECT_EQ(detect_region(s, 0.0, -1.0, zv(1.0)), 2);
  EXPECT_EQ(detect_region(s, 1.0, 0.0, zv(1.0)), 3);
  EXPECT_EQ(detect_region(s, 0.0, 0.0, zv(1.0)), kSeparatrixBand);
}

TEST(EtaSection, OneEventPerPeriodOnUnperturbedOrbit) {
  const SlowFastSystem s = make_preset("dw-slow");
  for (double h : {0.2, 0.02, 1e-4}) {
    const oracle::Quartic w{1.0, 0.0};
    const double period = oracle::period(w, h, 3);
    const Trajectory tr = integrate_full(s, FullState{std::sqrt(2.0 * h), 0.0, zv(1.0)}, 0.0, 10.3 * period);
    ASSERT_EQ(tr.events.size(), 10u) << "h=" << h;
    for (std::size_t k = 1; k < tr.events.size(); ++k) {
      EXPECT_NEAR(tr.events[k].t - tr.events[k - 1].t, period, 1e-7 * period);
    }
  }
}

TEST(EtaSection, EmptyInsideLoopFarFromSaddle) {
  const SlowFastSystem s = make_preset("dw-slow");
  // near the bottom of loop 1: q in about (1.2, 1.6), outside the neighbourhood of C
  const double q0 = 1.2;
  const double p0 = std::sqrt(2.0 * (-0.2 - s.energy(0.0, q0, zv(1.0))));
  const Trajectory tr = integrate_full(s, FullState{p0, q0, zv(1.0)}, 0.0, 100.0);
  EXPECT_TRUE(tr.events.empty());
}

TEST(EtaSection, DenseHistoryMatchesOnlineEvents) {
  const Trajectory& tr = dissip_run();
  const SaddleFrame frame = locate_saddle(dissip_ctx().system(), SlowVector(0));
  const std::vector<SectionEvent> ev = eta_section_events(dissip_ctx().system(), tr, frame);
  ASSERT_EQ(ev.size(), tr.events.size());
  for (std::size_t k = 0; k < ev.size(); ++k) {
    EXPECT_NEAR(ev[k].t, tr.events[k].t, 1e-9);
    EXPECT_NEAR(ev[k].h, tr.events[k].h, 1e-12);
    if (k > 0) {
      EXPECT_GT(ev[k].t, ev[k - 1].t);
    }
  }
  Trajectory no_dense = tr;
  no_dense.dense = DenseHistory{};
  EXPECT_THROW(eta_section_events(dissip_ctx().system(), no_dense, frame), PreconditionError);
}

TEST(PredictCapture, IntervalExamples) {
  const ThetaContext ctx(make_preset("dw-asym", {{"gamma", 0.1}}));
  const SlowVector z = zv(1.3);
  const SeparatrixData d = ctx.at(z);
  const double eps = 1e-3;
  EXPECT_EQ(predict_capture_pseudo(ctx, 0.5 * eps * d.theta[1], z, eps).nu, 2);
  EXPECT_EQ(predict_capture_pseudo(ctx, eps * d.theta[1] + 0.5 * eps * d.theta[0], z, eps).nu, 1);
  EXPECT_EQ(predict_capture_pseudo(ctx, 2.0 * eps * (d.theta[0] + d.theta[1]), z, eps).nu, 3);
  EXPECT_THROW(predict_capture_pseudo(ctx, 0.0, z, eps), PreconditionError);
  EXPECT_THROW(predict_capture_pseudo(ctx, -1e-4, z, eps), PreconditionError);
  EXPECT_THROW(predict_capture_pseudo(ctx, 1e-4, z, 0.0), PreconditionError);
}

TEST(PredictCapture, MarginAroundUpperEndpoints) {
  const ThetaContext& ctx = dissip_ctx();
  const double eps = 1e-3;
  const SeparatrixData d = ctx.at(SlowVector(0));
  const double margin = 5.0 * std::pow(eps, 1.5) * d.theta[2];
  const PseudoPrediction near = predict_capture_pseudo(ctx, eps * d.theta[1] + 0.5 * margin, SlowVector(0), eps);
  EXPECT_TRUE(near.in_margin);
  EXPECT_NEAR(near.margin, margin, 1e-15);
  EXPECT_FALSE(predict_capture_pseudo(ctx, eps * d.theta[1] + 2.0 * margin, SlowVector(0), eps).in_margin);
  EXPECT_TRUE(predict_capture_pseudo(ctx, eps * d.theta[2] - 0.5 * margin, SlowVector(0), eps).in_margin);
  EXPECT_FALSE(predict_capture_pseudo(ctx, 0.1 * margin, SlowVector(0), eps).in_margin);
}

TEST(ClassifyCapture, DissipativeCrossing) {
  const Trajectory& tr = dissip_run();
  const CaptureRecord c = classify_capture(tr, &dissip_ctx());
  ASSERT_TRUE(c.complete);
  EXPECT_LT(c.t_minus, c.t_plus);
  EXPECT_TRUE(c.destination == 1 || c.destination == 2);
  ASSERT_TRUE(c.has_prime);
  EXPECT_LT(c.t_prime, c.t_plus);
  EXPECT_GT(c.h_prime, 0.0);
  EXPECT_LE(c.h_prime, 1.1 * tr.eps * dissip_theta3());
  EXPECT_NE(c.predicted, 0);
  if (!c.in_margin) {
    EXPECT_TRUE(c.agree);
  }
  // destination consistent with the region after t_plus
  for (std::size_t i = 0; i < tr.size(); ++i) {
    if (tr.t[i] > c.t_plus) {
      EXPECT_EQ(tr.nu[i], c.destination) << tr.t[i];
    }
  }
}

TEST(ClassifyCapture, IncompleteWithoutCrossing) {
  const Trajectory tr = integrate_full(dissip_ctx().system(), dissip_start(0.3), 1e-3, 500.0);
  const CaptureRecord c = classify_capture(tr, &dissip_ctx());
  EXPECT_FALSE(c.complete);
  EXPECT_EQ(c.destination, 0);
  EXPECT_EQ(c.predicted, 0);
}

TEST(ClassifyCapture, BandPassageScalesWithLogEps) {
  std::vector<double> ratio;
  FullControl ctl;
  ctl.record_samples = false;
  ctl.stop_after_capture = 0.0;
  for (double eps : {4e-3, 2e-3, 1e-3, 5e-4}) {
    const Trajectory tr = integrate_full(dissip_ctx().system(), dissip_start(0.3), eps, 8.0 / eps, {}, ctl);
    const CaptureRecord c = classify_capture(tr);
    ASSERT_TRUE(c.complete) << eps;
    ratio.push_back((c.t_plus - c.t_minus) / std::abs(std::log(eps)));
  }
  const auto [lo, hi] = std::minmax_element(ratio.begin(), ratio.end());
  EXPECT_LT(*hi / *lo, 1.3) << *lo << " " << *hi;
}

TEST(CompareToAveraged, UnperturbedAgainstConstantSolution) {
  const ThetaContext ctx(make_preset("dw-slow", {{"gamma", 0.0}, {"f3", 0.0}}));
  const FullState x{std::sqrt(0.6), 0.0, zv(1.0)};
  const Trajectory tr = integrate_full(ctx.system(), x, 0.0, 50.0);
  const AveragedSolution sol = integrate_averaged(ctx, AveragedInitial{3, 0.3, zv(1.0)}, 1.0);
  ASSERT_FALSE(sol.crossing.has_value());
  const AveragingError e = compare_to_averaged(tr, sol);
  EXPECT_EQ(e.pre_samples, tr.size());
  EXPECT_LE(e.pre, 1e-9);
}

TEST(CompareToAveraged, DissipativeErrorIsOrderEps) {
  const Trajectory& tr = dissip_run();
  const AveragedSolution sol = integrate_averaged(dissip_ctx(), AveragedInitial{3, tr.h_initial, SlowVector(0)}, 6.0);
  ASSERT_TRUE(sol.crossing.has_value());
  const AveragingError e = compare_to_averaged(tr, sol);
  EXPECT_GT(e.pre_samples, 0u);
  EXPECT_GT(e.post_samples, 0u);
  EXPECT_LT(e.pre, 0.5);  // K1 eps with a generous K1
  EXPECT_LT(e.post_weighted, 5.0 * tr.eps * std::abs(std::log(tr.eps)));
  const int wrong = 3 - tr.region_at_t_plus;
  EXPECT_THROW(compare_to_averaged(tr, sol, wrong), PreconditionError);
}

TEST(ActionSeries, AbsentInsideBand) {
  const Trajectory& tr = dissip_run();
  const std::vector<double> j = action_series(dissip_ctx().system(), tr);
  ASSERT_EQ(j.size(), tr.size());
  const oracle::Quartic w{1.0, 0.0};
  std::size_t present = 0;
  for (std::size_t i = 0; i < tr.size(); i += 97) {
    if (std::abs(tr.h[i]) < 1e-10) {
      EXPECT_TRUE(std::isnan(j[i]));
      continue;
    }
    ASSERT_FALSE(std::isnan(j[i]));
    EXPECT_NEAR(j[i], oracle::action(w, tr.h[i], tr.nu[i]), 1e-9);
    ++present;
  }
  EXPECT_GT(present, 10u);
}
