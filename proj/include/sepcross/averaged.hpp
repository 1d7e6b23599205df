#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/tools/toms748_solve.hpp>

#include "sepcross/errors.hpp"
#include "sepcross/geometry/level_orbit.hpp"
#include "sepcross/model.hpp"
#include "sepcross/ode/dop853.hpp"
#include "sepcross/ode/events.hpp"
#include "sepcross/options.hpp"
#include "sepcross/theta.hpp"

namespace sepcross {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// A point of the averaged system in slow time tau = eps t.
struct AveragedState {
  int nu = 3;
  double h = 0.0;
  SlowVector z;
  double j = std::numeric_limits<double>::quiet_NaN();  ///< action, when known
  double tau = 0.0;
};

/// Right-hand side of the averaged system in slow time.
struct AveragedRates {
  double dh = 0.0;
  SlowVector dz;
  double period = std::numeric_limits<double>::infinity();
  bool asymptotic = false;  ///< true inside the switch band or at h = 0
};

/// Output sample of an averaged branch.
struct AveragedSample {
  double tau = 0.0;
  int nu = 3;
  double h = 0.0;
  SlowVector z;
  double j = 0.0;
  double dh = 0.0;
  SlowVector dz;
  bool band = false;
};

/// Knobs of one averaged integration that are not numeric defaults.
struct AveragedControl {
  double initial_step = 0.0;
  double max_step = std::numeric_limits<double>::infinity();
  bool estimate_error = true;
  double error_rerun_factor = 100.0;  ///< tolerance multiplier of the tau_* error rerun
  std::size_t max_steps = 200'000;
};

namespace detail {

/// Near-separatrix model u = h (c - a ln|h|) of u = 2 pi I - S_nu, with
/// a = k / omega0 (k saddle passages per period) and c fitted at one edge
/// point (h_e, u_e).
struct BandModel {
  double a = 0.0;
  double c = 0.0;
  double h_edge = 0.0;
  double u_edge = 0.0;

  static BandModel fit(double omega0, int nu, double h_e, double u_e) {
    BandModel m;
    m.a = (nu == 3 ? 2.0 : 1.0) / omega0;
    m.c = u_e / h_e + m.a * std::log(std::abs(h_e));
    m.h_edge = h_e;
    m.u_edge = u_e;
    return m;
  }
  [[nodiscard]] double u(double h) const { return h == 0.0 ? 0.0 : h * (c - a * std::log(std::abs(h))); }
  [[nodiscard]] double period(double h) const {
    return h == 0.0 ? std::numeric_limits<double>::infinity() : c - a - a * std::log(std::abs(h));
  }
  [[nodiscard]] double energy(double uu) const {
    if (uu == 0.0) return 0.0;
    if (uu * u_edge < 0.0) return 0.0;
    // u(h) is monotone on [0, 2 h_e]
    double lo = 0.0, hi = 2.0 * h_edge;
    if (lo > hi) std::swap(lo, hi);
    auto f = [&](double h) { return u(h) - uu; };
    double f_lo = f(lo), f_hi = f(hi);
    if (f_lo * f_hi > 0.0) return std::abs(f_lo) < std::abs(f_hi) ? lo : hi;
    std::uintmax_t it = 200;
    const auto r = boost::math::tools::toms748_solve(f, lo, hi, f_lo, f_hi,
                                                     boost::math::tools::eps_tolerance<double>(50), it);
    return 0.5 * (r.first + r.second);
  }
};

}  // namespace detail

/// One stretch of integration in either the (h, z) or the band (u, z)
/// variables. Holds the dense-output coefficients of every step.
struct AveragedSegment {
  int nu = 3;
  bool band = false;
  std::size_t n = 0;
  detail::BandModel model;
  std::vector<double> t0, dt;
  std::vector<double> coeff;  ///< 8 n per step
  double t_stop = 0.0;        ///< end of validity (an event may cut the last step)

  [[nodiscard]] double begin() const { return t0.front(); }
  [[nodiscard]] double end() const { return t_stop; }
  [[nodiscard]] bool empty() const { return t0.empty(); }

  /// (h, z) at tau inside the segment.
  void eval(double tau, double& h, SlowVector& z) const {
    auto it = std::upper_bound(t0.begin(), t0.end(), tau);
    std::size_t k = it == t0.begin() ? 0 : static_cast<std::size_t>(it - t0.begin()) - 1;
    const std::span<const double> r(coeff.data() + 8 * n * k, 8 * n);
    const double y0 = ode::dense_from_coefficients(r, n, t0[k], dt[k], tau, 0);
    z = SlowVector(n - 1);
    for (std::size_t i = 1; i < n; ++i) z[i - 1] = ode::dense_from_coefficients(r, n, t0[k], dt[k], tau, i);
    h = band ? model.energy(y0) : y0;
  }
};

/// A solution branch in one region, possibly split into band and regular
/// segments.
struct AveragedBranch {
  int nu = 3;
  std::vector<AveragedSegment> segments;
  std::vector<AveragedSample> samples;

  [[nodiscard]] bool empty() const { return samples.empty(); }
  [[nodiscard]] double tau_begin() const { return samples.front().tau; }
  [[nodiscard]] double tau_end() const { return samples.back().tau; }

  [[nodiscard]] AveragedState at(double tau) const {
    if (samples.empty()) throw PreconditionError("AveragedBranch: empty branch");
    if (tau < tau_begin() || tau > tau_end()) {
      throw PreconditionError("AveragedBranch: tau outside the branch span");
    }
    AveragedState st;
    st.nu = nu;
    st.tau = tau;
    for (const AveragedSegment& s : segments) {
      if (!s.empty() && tau >= s.begin() && tau <= s.end()) {
        s.eval(tau, st.h, st.z);
        return st;
      }
    }
    // degenerate branch (single sample)
    const AveragedSample& a = samples.front();
    st.h = a.h;
    st.z = a.z;
    st.j = a.j;
    return st;
  }
};

struct CrossingRecord {
  double tau_star = 0.0;
  double tau_error = 0.0;  ///< estimated error of tau_star
  SlowVector z_star;
  std::array<double, 3> theta{};
  double p1 = 0.0;
  double p2 = 0.0;
};

struct AveragedSolution {
  AveragedBranch pre;
  std::optional<CrossingRecord> crossing;
  std::array<AveragedBranch, 2> post;  ///< nu = 1, 2 (empty without crossing)
  double tau_end = 0.0;

  [[nodiscard]] const AveragedBranch& branch(int nu) const {
    if (nu == 3 || !crossing) return pre;
    return post.at(static_cast<std::size_t>(nu - 1));
  }

  /// State at tau; after the crossing the branch `nu` (1 or 2) is used.
  [[nodiscard]] AveragedState at(double tau, int nu = 1) const {
    if (crossing && tau > crossing->tau_star) return post.at(static_cast<std::size_t>(nu - 1)).at(tau);
    if (crossing && pre.empty()) return post.at(static_cast<std::size_t>(nu - 1)).at(tau);
    return pre.at(tau);
  }
};

/// Slow-time right-hand side of the averaged system in region nu.
/// Outside the band: orbit averages. Inside 0 < |h| < h_switch: -Theta_nu/T
/// with the logarithmic period model, dz = f3 at C. At h = 0: (0, f3 at C).
inline AveragedRates averaged_rhs(const ThetaContext& ctx, const AveragedState& st) {
  const SlowFastSystem& s = ctx.system();
  const NumericOptions& opt = ctx.options();
  if (st.nu < 1 || st.nu > 3) throw PreconditionError("averaged_rhs: region must be 1, 2 or 3");
  if (st.z.size() != s.dim_z) throw PreconditionError("averaged_rhs: slow vector has wrong dimension");
  if (st.h != 0.0 && ((st.h > 0.0) != (st.nu == 3))) {
    throw PreconditionError("averaged_rhs: sign of h does not match the region");
  }
  const SeparatrixData d = ctx.at(st.z);
  const double h_sw = opt.h_switch_rel * d.area[2];
  AveragedRates r;
  if (st.h == 0.0) {
    r.dz = d.f3c;
    r.asymptotic = true;
    return r;
  }
  if (std::abs(st.h) < h_sw) {
    const double th = d.theta[static_cast<std::size_t>(st.nu - 1)];
    if (!(th > 0.0)) throw ConditionError("averaged_rhs: Theta_nu is not positive near the separatrix");
    const double he = st.nu == 3 ? h_sw : -h_sw;
    const LevelOrbit edge = level_orbit(s, he, st.z, st.nu, opt);
    const double k = st.nu == 3 ? 2.0 : 1.0;
    r.period = edge.period + k / d.omega0 * std::log(h_sw / std::abs(st.h));
    r.dh = -th / r.period;
    r.dz = d.f3c;
    r.asymptotic = true;
    return r;
  }
  const LevelOrbit o = level_orbit(s, st.h, st.z, st.nu, opt, true);
  r.period = o.period;
  r.dh = o.work_integral / o.period;
  r.dz = o.f3_integral;
  r.dz *= 1.0 / o.period;
  return r;
}

/// dI/dt along the averaged flow in fast time:
/// (eps / 2 pi) (loop integral of F0 dt - (loop integral of E_z dt) . <f3>).
inline double action_rate(const SlowFastSystem& s, const AveragedState& st, double eps,
                          const NumericOptions& opt = {}) {
  if (!(eps >= 0.0)) throw PreconditionError("action_rate: eps must be non-negative");
  if (std::abs(st.h) < opt.h_min) {
    throw NearSeparatrixError("action_rate: |h| is below the separatrix floor");
  }
  const LevelOrbit o = level_orbit(s, st.h, st.z, st.nu, opt, true);
  SlowVector mean_f3 = o.f3_integral;
  mean_f3 *= 1.0 / o.period;
  return eps / kTwoPi * (o.work_integral - o.ez_integral.dot(mean_f3));
}

namespace detail {

/// Shared integration plumbing: runs a Dop853 on y = [x, z...] and records
/// segments and samples until `stop` fires or tau_end is reached.
struct SegmentRun {
  bool stopped = false;  ///< event fired (otherwise tau_end reached)
  double tau = 0.0;
  std::vector<double> y;
};

template <class Rhs, class Sample, class Stop>
SegmentRun run_segment(Rhs& rhs, std::size_t n, double tau0, std::span<const double> y0, double tau_end,
                       double rtol, double atol, const AveragedControl& ctl, AveragedSegment& seg,
                       std::vector<AveragedSample>& samples, Sample&& make_sample, Stop&& stop,
                       std::string& last_error) {
  ode::StepperOptions so;
  so.rtol = rtol;
  so.atol = atol;
  so.initial_step = ctl.initial_step;
  so.max_step = ctl.max_step;
  so.max_steps = ctl.max_steps;
  auto f = [&rhs](double t, std::span<const double> y, std::span<double> dy) { rhs(t, y, dy); };
  ode::Dop853 stepper(n, f, so);
  stepper.reset(tau0, y0);
  seg.n = n;
  SegmentRun out;
  std::vector<double> y_event(n);
  double g_prev = stop(stepper.y());
  for (;;) {
    bool moved = false;
    try {
      moved = stepper.step(tau_end);
    } catch (const IntegrationError& e) {
      if (!last_error.empty()) throw DomainError("averaged flow: " + last_error);
      throw;
    }
    if (!moved) break;
    for (double v : stepper.dydt()) {
      if (!std::isfinite(v)) {
        if (!last_error.empty()) throw DomainError("averaged flow: " + last_error);
        throw IntegrationError("averaged flow: step ended outside the region");
      }
    }
    const auto coeff = stepper.dense_coefficients();
    seg.t0.push_back(stepper.t_prev());
    seg.dt.push_back(stepper.last_step());
    seg.coeff.insert(seg.coeff.end(), coeff.begin(), coeff.end());
    const double g_now = stop(stepper.y());
    if (g_now <= 0.0 && g_prev > 0.0) {
      out.tau = ode::refine_event(
          stepper, [&](double, std::span<const double> yy) { return stop(yy); }, g_prev, g_now, y_event);
      seg.t_stop = out.tau;
      out.stopped = true;
      out.y = y_event;
      samples.push_back(make_sample(out.tau, std::span<const double>(out.y), std::nullopt));
      return out;
    }
    g_prev = g_now;
    seg.t_stop = stepper.t();
    samples.push_back(make_sample(stepper.t(), stepper.y(), std::optional(stepper.dydt())));
  }
  out.tau = stepper.t();
  out.y.assign(stepper.y().begin(), stepper.y().end());
  return out;
}

/// RHS in the regular variables (h, z); invalid states yield NaN so the
/// stepper rejects the step.
struct RegularRhs {
  const ThetaContext* ctx = nullptr;
  int nu = 3;
  std::string* last_error = nullptr;
  // cache of the last orbit, reused for the sample at the step end
  mutable std::vector<double> cached_y;
  mutable double cached_action = 0.0;

  void operator()(double, std::span<const double> y, std::span<double> dy) const {
    const SlowFastSystem& s = ctx->system();
    const NumericOptions& opt = ctx->options();
    const double h = y[0];
    const SlowVector z(y.subspan(1));
    const bool sign_ok = nu == 3 ? h > 0.0 : h < 0.0;
    if (!std::isfinite(h) || !sign_ok || std::abs(h) < opt.h_min || !s.domain.contains_z(z)) {
      if (!s.domain.contains_z(z)) *last_error = "slow variable leaves the domain box";
      std::fill(dy.begin(), dy.end(), std::numeric_limits<double>::quiet_NaN());
      return;
    }
    try {
      const LevelOrbit o = level_orbit(s, h, z, nu, opt, true);
      dy[0] = o.work_integral / o.period;
      for (std::size_t i = 0; i < s.dim_z; ++i) dy[1 + i] = o.f3_integral[i] / o.period;
      cached_y.assign(y.begin(), y.end());
      cached_action = o.action;
    } catch (const DomainError& e) {
      *last_error = e.what();
      std::fill(dy.begin(), dy.end(), std::numeric_limits<double>::quiet_NaN());
    }
  }

  [[nodiscard]] double action(std::span<const double> y) const {
    if (cached_y.size() == y.size() && std::equal(y.begin(), y.end(), cached_y.begin())) return cached_action;
    return level_orbit(ctx->system(), y[0], SlowVector(y.subspan(1)), nu, ctx->options()).action;
  }
};

/// RHS in the band variables (u, z): du = -Theta_nu, dz = f3 at C.
struct BandRhs {
  const ThetaContext* ctx = nullptr;
  int nu = 3;
  std::string* last_error = nullptr;

  void operator()(double, std::span<const double> y, std::span<double> dy) const {
    const SlowVector z(y.subspan(1));
    if (!ctx->system().domain.contains_z(z)) {
      *last_error = "slow variable leaves the domain box";
      std::fill(dy.begin(), dy.end(), std::numeric_limits<double>::quiet_NaN());
      return;
    }
    const SeparatrixData d = ctx->at(z);
    const double th = d.theta[static_cast<std::size_t>(nu - 1)];
    if (!(th > 0.0)) {
      throw ConditionError("averaged flow: Theta_" + std::to_string(nu) + " = " + std::to_string(th) +
                           " is not positive at the separatrix");
    }
    dy[0] = -th;
    for (std::size_t i = 0; i < z.size(); ++i) dy[1 + i] = d.f3c[i];
  }
};

inline double h_switch(const ThetaContext& ctx, const SlowVector& z) {
  return ctx.options().h_switch_rel * ctx.at(z).area[2];
}

inline std::vector<double> pack_state(double x, const SlowVector& z) {
  std::vector<double> y{x};
  y.insert(y.end(), z.begin(), z.end());
  return y;
}

inline double area_of(const SeparatrixData& d, int nu) { return d.area[static_cast<std::size_t>(nu - 1)]; }

/// Regular (h, z) integration in region nu from (tau0, h0, z0). For
/// nu = 3 it stops when h reaches the switch band.
inline SegmentRun regular_phase(const ThetaContext& ctx, int nu, double tau0, double h0, const SlowVector& z0,
                                double tau_end, const AveragedControl& ctl, double tol_scale,
                                AveragedBranch& branch) {
  std::string last_error;
  RegularRhs rhs{&ctx, nu, &last_error, {}, 0.0};
  AveragedSegment seg;
  seg.nu = nu;
  const std::size_t n = 1 + z0.size();
  auto make_sample = [&](double tau, std::span<const double> y, std::optional<std::span<const double>> dy) {
    AveragedSample a;
    a.tau = tau;
    a.nu = nu;
    a.h = y[0];
    a.z = SlowVector(y.subspan(1));
    std::vector<double> d(n);
    if (dy) {
      std::copy(dy->begin(), dy->end(), d.begin());
    } else {
      rhs(tau, y, d);
    }
    a.j = rhs.action(y);
    a.dh = d[0];
    a.dz = SlowVector(std::span<const double>(d).subspan(1));
    return a;
  };
  auto stop = [&](std::span<const double> y) {
    if (nu != 3) return 1.0;
    return y[0] - h_switch(ctx, SlowVector(y.subspan(1)));
  };
  const std::vector<double> y0 = pack_state(h0, z0);
  branch.samples.push_back(make_sample(tau0, y0, std::nullopt));
  const NumericOptions& opt = ctx.options();
  SegmentRun run = run_segment(rhs, n, tau0, y0, tau_end, opt.averaged_rtol * tol_scale,
                               opt.averaged_atol * tol_scale, ctl, seg, branch.samples, make_sample, stop,
                               last_error);
  if (!seg.empty()) branch.segments.push_back(std::move(seg));
  return run;
}

/// Band integration in (u, z) from (tau0, u0, z0) in region nu, stopping at
/// u = u_stop (pre-crossing: u_stop = 0 from above; post: u_edge from above).
inline SegmentRun band_phase(const ThetaContext& ctx, int nu, double tau0, double u0, const SlowVector& z0,
                             double u_stop, const BandModel& model, double tau_end, const AveragedControl& ctl,
                             double tol_scale, AveragedBranch& branch) {
  std::string last_error;
  BandRhs rhs{&ctx, nu, &last_error};
  AveragedSegment seg;
  seg.nu = nu;
  seg.band = true;
  seg.model = model;
  const std::size_t n = 1 + z0.size();
  auto make_sample = [&](double tau, std::span<const double> y, std::optional<std::span<const double>>) {
    AveragedSample a;
    a.tau = tau;
    a.nu = nu;
    a.band = true;
    a.z = SlowVector(y.subspan(1));
    const SeparatrixData d = ctx.at(a.z);
    a.h = model.energy(y[0]);
    a.j = (y[0] + area_of(d, nu)) / kTwoPi;
    const double th = d.theta[static_cast<std::size_t>(nu - 1)];
    a.dh = a.h == 0.0 ? 0.0 : -th / model.period(a.h);
    a.dz = d.f3c;
    return a;
  };
  auto stop = [&](std::span<const double> y) { return y[0] - u_stop; };
  const std::vector<double> y0 = pack_state(u0, z0);
  branch.samples.push_back(make_sample(tau0, y0, std::nullopt));
  const NumericOptions& opt = ctx.options();
  SegmentRun run = run_segment(rhs, n, tau0, y0, tau_end, opt.averaged_rtol * tol_scale,
                               opt.averaged_atol * tol_scale, ctl, seg, branch.samples, make_sample, stop,
                               last_error);
  if (!seg.empty()) branch.segments.push_back(std::move(seg));
  return run;
}

/// Branch nu = 1 or 2 leaving the separatrix at (tau_star, z_star), or
/// starting inside the band at energy h0 (0 > h0 > -h_switch).
inline AveragedBranch post_branch(const ThetaContext& ctx, int nu, double tau_star, const SlowVector& z_star,
                                  double tau_end, const AveragedControl& ctl, double tol_scale,
                                  double h0 = 0.0) {
  const SlowFastSystem& s = ctx.system();
  const NumericOptions& opt = ctx.options();
  AveragedBranch b;
  b.nu = nu;
  const SeparatrixData d = ctx.at(z_star);
  const double h_e = -opt.h_switch_rel * d.area[2];
  const LevelOrbit edge = level_orbit(s, h_e, z_star, nu, opt);
  const double u_edge = kTwoPi * edge.action - area_of(d, nu);
  const BandModel model = BandModel::fit(d.omega0, nu, h_e, u_edge);
  const SegmentRun band =
      band_phase(ctx, nu, tau_star, model.u(h0), z_star, u_edge, model, tau_end, ctl, tol_scale, b);
  if (!band.stopped) return b;
  const SlowVector z(std::span<const double>(band.y).subspan(1));
  const double target = (u_edge + area_of(ctx.at(z), nu)) / kTwoPi;
  const double h = energy_for_action(s, nu, target, z, opt, h_e);
  AveragedBranch reg;
  regular_phase(ctx, nu, band.tau, h, z, tau_end, ctl, tol_scale, reg);
  for (auto& seg : reg.segments) b.segments.push_back(std::move(seg));
  // the band end sample stands for the handoff point
  for (std::size_t i = 1; i < reg.samples.size(); ++i) b.samples.push_back(std::move(reg.samples[i]));
  return b;
}

struct PreResult {
  AveragedBranch branch;
  bool crossed = false;
  double tau_star = 0.0;
  SlowVector z_star;
};

inline PreResult pre_branch(const ThetaContext& ctx, double tau0, double h0, const SlowVector& z0, double tau_end,
                            const AveragedControl& ctl, double tol_scale) {
  const SlowFastSystem& s = ctx.system();
  const NumericOptions& opt = ctx.options();
  PreResult r;
  r.branch.nu = 3;
  double tau = tau0;
  SlowVector z = z0;
  double h = h0;
  if (h >= h_switch(ctx, z)) {
    const SegmentRun reg = regular_phase(ctx, 3, tau0, h0, z0, tau_end, ctl, tol_scale, r.branch);
    if (!reg.stopped) return r;
    tau = reg.tau;
    z = SlowVector(std::span<const double>(reg.y).subspan(1));
    h = reg.y[0];
    r.branch.samples.pop_back();
  }
  const SeparatrixData d = ctx.at(z);
  if (!(d.theta[2] > 0.0)) {
    throw ConditionError("averaged flow: Theta_3 = " + std::to_string(d.theta[2]) +
                         " is not positive; the solution does not reach the separatrix");
  }
  // band entry at h (the switch level, or the initial h when it starts inside)
  double u0 = 0.0;
  BandModel model;
  const double h_e = std::max(h, opt.h_min);
  const LevelOrbit edge = level_orbit(s, h_e, z, 3, opt);
  u0 = kTwoPi * edge.action - d.area[2];
  model = BandModel::fit(d.omega0, 3, h_e, u0);
  if (!(u0 > 0.0)) u0 = 0.0;
  const SegmentRun band = band_phase(ctx, 3, tau, u0, z, 0.0, model, tau_end, ctl, tol_scale, r.branch);
  if (band.stopped || u0 == 0.0) {
    r.crossed = true;
    r.tau_star = band.stopped ? band.tau : tau;
    r.z_star = band.stopped ? SlowVector(std::span<const double>(band.y).subspan(1)) : z;
  }
  return r;
}

}  // namespace detail

/// Initial point of the averaged system. nu = 0 picks region 3 for h > 0;
/// h = 0 starts on the separatrix (crossing at tau0).
struct AveragedInitial {
  int nu = 0;
  double h = 0.0;
  SlowVector z;
  double tau = 0.0;
};

/// Integrates the averaged system over [initial.tau, tau_end] in slow time.
/// A solution starting in region 3 that reaches the separatrix is glued to
/// both branches nu = 1, 2 started from J = S_nu(z_*) / 2 pi.
inline AveragedSolution integrate_averaged(const ThetaContext& ctx, const AveragedInitial& init, double tau_end,
                                           const AveragedControl& ctl = {}) {
  const SlowFastSystem& s = ctx.system();
  if (init.z.size() != s.dim_z) throw PreconditionError("integrate_averaged: slow vector has wrong dimension");
  if (!std::isfinite(tau_end) || !std::isfinite(init.tau) || tau_end <= init.tau) {
    throw PreconditionError("integrate_averaged: tau span must be finite and non-empty");
  }
  if (!std::isfinite(init.h)) throw PreconditionError("integrate_averaged: h0 is not finite");
  if (!s.domain.contains_z(init.z)) throw DomainError("integrate_averaged: z0 outside the domain box");
  int nu = init.nu;
  if (nu == 0) {
    if (init.h < 0.0) throw PreconditionError("integrate_averaged: region must be given for h0 < 0");
    nu = 3;
  }
  if (nu < 1 || nu > 3) throw PreconditionError("integrate_averaged: region must be 1, 2 or 3");
  if (init.h != 0.0 && ((init.h > 0.0) != (nu == 3))) {
    throw PreconditionError("integrate_averaged: sign of h0 does not match the region");
  }

  AveragedSolution sol;
  sol.tau_end = tau_end;
  auto glue = [&](double tau_star, const SlowVector& z_star) {
    CrossingRecord c;
    c.tau_star = tau_star;
    c.z_star = z_star;
    c.theta = ctx.at(z_star).theta;
    if (c.theta[2] > 0.0) {
      c.p1 = c.theta[0] / c.theta[2];
      c.p2 = c.theta[1] / c.theta[2];
    }
    sol.crossing = c;
    if (tau_star < tau_end) {
      sol.post[0] = detail::post_branch(ctx, 1, tau_star, z_star, tau_end, ctl, 1.0);
      sol.post[1] = detail::post_branch(ctx, 2, tau_star, z_star, tau_end, ctl, 1.0);
    } else {
      for (int k = 0; k < 2; ++k) sol.post[static_cast<std::size_t>(k)].nu = k + 1;
    }
  };

  if (init.h == 0.0) {
    glue(init.tau, init.z);
    return sol;
  }
  if (nu != 3) {
    sol.pre.nu = nu;
    const double h_sw = detail::h_switch(ctx, init.z);
    if (std::abs(init.h) >= h_sw) {
      detail::regular_phase(ctx, nu, init.tau, init.h, init.z, tau_end, ctl, 1.0, sol.pre);
      return sol;
    }
    // inside the band on the loop side: move outward in u first
    sol.pre = detail::post_branch(ctx, nu, init.tau, init.z, tau_end, ctl, 1.0, init.h);
    return sol;
  }

  detail::PreResult pre = detail::pre_branch(ctx, init.tau, init.h, init.z, tau_end, ctl, 1.0);
  sol.pre = std::move(pre.branch);
  if (!pre.crossed) return sol;
  glue(pre.tau_star, pre.z_star);
  if (ctl.estimate_error) {
    const double f = ctl.error_rerun_factor;
    AveragedControl coarse = ctl;
    coarse.estimate_error = false;
    const detail::PreResult rough = detail::pre_branch(ctx, init.tau, init.h, init.z, tau_end, coarse, f);
    const NumericOptions& opt = ctx.options();
    const double floor = 10.0 * opt.averaged_rtol * (1.0 + std::abs(pre.tau_star));
    sol.crossing->tau_error =
        rough.crossed ? std::max(std::abs(rough.tau_star - pre.tau_star), floor) : std::abs(tau_end - pre.tau_star);
  }
  return sol;
}

/// Convenience overload building the context from the system.
inline AveragedSolution integrate_averaged(const SlowFastSystem& s, const AveragedInitial& init, double tau_end,
                                           const NumericOptions& opt = {}, const AveragedControl& ctl = {}) {
  const ThetaContext ctx(s, opt);
  return integrate_averaged(ctx, init, tau_end, ctl);
}

/// Result of comparing two nearby averaged solutions.
struct DistanceReport {
  double tau0 = 0.0;
  double gap = 0.0;       ///< |dH| + |dZ| at tau0
  double delta = 0.0;
  double constant = 0.0;  ///< max separation / (delta + delta |ln delta| / (1 + |ln|H||))
  double max_separation = 0.0;
  std::size_t samples = 0;
};

/// Fits the constant of the bound
/// |dH| + |dZ| <= C (delta + delta |ln delta| / (1 + |ln|H||))
/// over the common span of two solutions that start within delta.
inline DistanceReport averaged_distance_check(const AveragedSolution& a, const AveragedSolution& b, double delta,
                                              int nu = 1, std::size_t n = 200, double delta_max = 0.1) {
  if (!(delta > 0.0) || delta > delta_max) {
    throw PreconditionError("averaged_distance_check: delta must lie in (0, " + std::to_string(delta_max) +
                            "]; proximity hypothesis not met");
  }
  auto first = [](const AveragedSolution& s) {
    return s.pre.empty() ? s.post[0].tau_begin() : s.pre.tau_begin();
  };
  auto last = [nu](const AveragedSolution& s) {
    const AveragedBranch& br = s.crossing ? s.post.at(static_cast<std::size_t>(nu - 1)) : s.pre;
    return br.empty() ? s.crossing->tau_star : br.tau_end();
  };
  auto separation = [nu](const AveragedState& x, const AveragedState& y) {
    (void)nu;
    return std::abs(x.h - y.h) + (x.z - y.z).norm1();
  };
  DistanceReport r;
  r.delta = delta;
  r.tau0 = std::max(first(a), first(b));
  const double t1 = std::min(last(a), last(b));
  if (!(t1 > r.tau0)) throw PreconditionError("averaged_distance_check: solutions have no common span");
  r.gap = separation(a.at(r.tau0, nu), b.at(r.tau0, nu));
  if (r.gap > delta) {
    throw PreconditionError("averaged_distance_check: initial gap " + std::to_string(r.gap) +
                            " exceeds delta; proximity hypothesis not met");
  }
  const double log_delta = std::abs(std::log(delta));
  for (std::size_t i = 0; i <= n; ++i) {
    const double tau = r.tau0 + (t1 - r.tau0) * static_cast<double>(i) / static_cast<double>(n);
    const AveragedState x = a.at(tau, nu);
    const AveragedState y = b.at(tau, nu);
    const double sep = separation(x, y);
    const double hh = std::max(std::abs(x.h), std::abs(y.h));
    const double lh = hh > 0.0 ? std::abs(std::log(hh)) : std::numeric_limits<double>::infinity();
    const double bound = delta + delta * log_delta / (1.0 + lh);
    r.max_separation = std::max(r.max_separation, sep);
    r.constant = std::max(r.constant, sep / bound);
    ++r.samples;
  }
  return r;
}

}  // namespace sepcross
