#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/tools/toms748_solve.hpp>

#include "sepcross/errors.hpp"
#include "sepcross/geometry/saddle.hpp"
#include "sepcross/model.hpp"
#include "sepcross/ode/dop853.hpp"
#include "sepcross/ode/events.hpp"
#include "sepcross/options.hpp"

namespace sepcross {

/// Poincare section used to close a level orbit: the ray origin + r along,
/// r > 0, crossed in the direction of `normal` with sign `direction`.
struct OrbitSection {
  PhasePoint origin;
  Vec2 along;
  Vec2 normal;
  int direction = 1;

  [[nodiscard]] double g(double p, double q) const noexcept {
    return (p - origin.p) * normal.p + (q - origin.q) * normal.q;
  }
  [[nodiscard]] double r(double p, double q) const noexcept {
    return (p - origin.p) * along.p + (q - origin.q) * along.q;
  }
};

struct LevelOrbit {
  int nu = 0;
  double h = 0.0;
  SlowVector z;
  double period = 0.0;
  double action = 0.0;  ///< I = S / (2 pi)
  PhasePoint ref;       ///< angle origin
  OrbitSection section;
  double work_integral = 0.0;  ///< loop integral of F0 dt (eps = 0)
  SlowVector f3_integral;      ///< loop integral of f3 dt (eps = 0)
  SlowVector ez_integral;      ///< loop integral of dE/dz dt
  std::vector<double> t, p, q;
};

struct ActionAngle {
  int nu = 0;
  double h = 0.0;
  double action = 0.0;
  double angle = 0.0;
  double period = 0.0;
};

/// Extra time integrands evaluated along a level orbit.
struct OrbitIntegrands {
  std::size_t count = 0;
  std::function<void(double p, double q, const SlowVector& z, double* out)> eval;
};

namespace detail {

inline void check_level(const SlowFastSystem& s, double h, int nu, const NumericOptions& opt) {
  if (nu < 1 || nu > 3) throw PreconditionError("level orbit: region must be 1, 2 or 3");
  if (!std::isfinite(h)) throw PreconditionError("level orbit: energy is not finite");
  if (std::abs(h) < opt.h_min) {
    throw NearSeparatrixError("level orbit: |h| = " + std::to_string(std::abs(h)) +
                              " is below the separatrix floor");
  }
  if (nu == 3 && h < 0.0) throw PreconditionError("level orbit: region 3 needs h > 0");
  if (nu != 3 && h > 0.0) throw PreconditionError("level orbit: loop regions need h < 0");
  (void)s;
}

/// Solves E(origin + r dir) = h for r > 0, with E(origin) < h.
inline double solve_on_ray(const SlowFastSystem& s, PhasePoint origin, Vec2 dir, const SlowVector& z,
                           double h, double r_guess) {
  auto f = [&](double r) { return s.energy(origin.p + r * dir.p, origin.q + r * dir.q, z) - h; };
  const double scale = s.domain.scale();
  double lo = 0.0;
  double hi = std::max(r_guess, 1e-12 * scale);
  double f_lo = f(lo);
  if (!(f_lo < 0.0)) throw PreconditionError("level orbit: energy level not reached along the ray");
  // distance from origin to the domain boundary along dir
  const DomainBox& box = s.domain;
  double r_max = std::numeric_limits<double>::infinity();
  auto limit = [&r_max](double x, double d, double lo_b, double hi_b) {
    if (d > 0.0) r_max = std::min(r_max, (hi_b - x) / d);
    if (d < 0.0) r_max = std::min(r_max, (lo_b - x) / d);
  };
  limit(origin.p, dir.p, box.p_min, box.p_max);
  limit(origin.q, dir.q, box.q_min, box.q_max);
  hi = std::min(hi, r_max);
  double f_hi = f(hi);
  while (f_hi < 0.0) {
    if (hi >= r_max) throw DomainError("level orbit: level line leaves the domain box");
    lo = hi;
    f_lo = f_hi;
    hi = std::min(2.0 * hi, r_max);
    f_hi = f(hi);
  }
  if (f_hi == 0.0) return hi;
  std::uintmax_t iters = 200;
  auto tol = [](double a, double b) { return std::abs(b - a) <= 4e-16 * std::max(std::abs(a), std::abs(b)); };
  const auto br = boost::math::tools::toms748_solve(f, lo, hi, f_lo, f_hi, tol, iters);
  return 0.5 * (br.first + br.second);
}

struct OrbitSetup {
  PhasePoint ref;
  OrbitSection section;
};

inline OrbitSetup orbit_setup(const SlowFastSystem& s, double h, const SlowVector& z, int nu,
                              const std::optional<SaddleFrame>& frame_hint) {
  const SaddleFrame frame = frame_hint ? *frame_hint : locate_saddle(s, z);
  OrbitSetup out;
  if (nu == 3) {
    const double mu = 0.5 * (frame.hessian.pp + frame.hessian.qq) +
                      std::sqrt(0.25 * (frame.hessian.pp - frame.hessian.qq) *
                                    (frame.hessian.pp - frame.hessian.qq) +
                                frame.hessian.pq * frame.hessian.pq);
    const double r = solve_on_ray(s, frame.c, frame.eta, z, h, std::sqrt(2.0 * h / mu));
    out.ref = PhasePoint{frame.c.p + r * frame.eta.p, frame.c.q + r * frame.eta.q};
    out.section.origin = frame.c;
    out.section.along = frame.eta;
    out.section.normal = frame.xi;
  } else {
    const WellCenter wc = find_well_center(s, frame, nu);
    if (!(h > wc.energy)) {
      throw PreconditionError("level orbit: energy " + std::to_string(h) +
                              " is below the bottom of loop " + std::to_string(nu));
    }
    const Vec2 up{1.0, 0.0};
    const double r = solve_on_ray(s, wc.c, up, z, h, std::sqrt(2.0 * (h - wc.energy)));
    out.ref = PhasePoint{wc.c.p + r, wc.c.q};
    out.section.origin = wc.c;
    out.section.along = up;
    out.section.normal = Vec2{0.0, 1.0};
  }
  const EnergyGradient g = s.gradient(out.ref.p, out.ref.q, z);
  const Vec2 v{-g.dq, g.dp};
  out.section.direction = v.dot(out.section.normal) >= 0.0 ? 1 : -1;
  return out;
}

struct OrbitRun {
  double period = 0.0;
  double area = 0.0;
  std::vector<double> extras;
};

/// Integrates the unperturbed flow from `start` until the first crossing of
/// `section` in its direction. The state carries [p, q, area, extras...].
/// With `stop_time` set, integration ends there instead and writes the
/// final point into `end_point`.
template <class Rec>
OrbitRun run_orbit(const SlowFastSystem& s, const SlowVector& z, PhasePoint start,
                   const OrbitSection& section, const OrbitIntegrands& extra,
                   const NumericOptions& opt, Rec&& record, std::optional<double> stop_time = {},
                   PhasePoint* end_point = nullptr, bool skip_start_crossing = true) {
  const std::size_t n = 3 + extra.count;
  auto rhs = [&s, &z, &extra](double, std::span<const double> y, std::span<double> dy) {
    const EnergyGradient g = s.gradient(y[0], y[1], z);
    dy[0] = -g.dq;
    dy[1] = g.dp;
    dy[2] = y[0] * g.dp;
    if (extra.count > 0) extra.eval(y[0], y[1], z, dy.data() + 3);
  };
  ode::StepperOptions so;
  so.rtol = opt.orbit_rtol;
  so.atol = opt.orbit_atol;
  so.max_steps = 4'000'000;
  ode::Dop853 stepper(n, rhs, so);
  std::vector<double> y0(n, 0.0);
  y0[0] = start.p;
  y0[1] = start.q;
  stepper.reset(0.0, y0);
  record(0.0, start.p, start.q);

  const double t_limit = stop_time ? *stop_time : 1e7;
  const double sigma = section.direction;
  double g_prev = section.g(start.p, start.q) * sigma;
  // a start point on the section must not count as its own return
  bool first = skip_start_crossing && std::abs(g_prev) <= 1e-12 * s.domain.scale();
  std::vector<double> y_ev(n);
  while (stepper.step(t_limit)) {
    auto y = stepper.y();
    if (!s.domain.contains_pq(y[0], y[1])) {
      throw DomainError("level orbit: orbit leaves the domain box");
    }
    const double g_now = section.g(y[0], y[1]) * sigma;
    if (!stop_time && !first && g_prev < 0.0 && g_now >= 0.0) {
      const double t_ev = ode::refine_event(
          stepper,
          [&](double, std::span<const double> yy) { return section.g(yy[0], yy[1]) * sigma; },
          g_prev, g_now, y_ev);
      if (section.r(y_ev[0], y_ev[1]) > 0.0) {
        record(t_ev, y_ev[0], y_ev[1]);
        OrbitRun run;
        run.period = t_ev;
        run.area = y_ev[2];
        run.extras.assign(y_ev.begin() + 3, y_ev.end());
        return run;
      }
    }
    first = false;
    g_prev = g_now;
    record(stepper.t(), y[0], y[1]);
  }
  if (stop_time) {
    auto y = stepper.y();
    if (end_point) *end_point = PhasePoint{y[0], y[1]};
    OrbitRun run;
    run.period = stepper.t();
    run.area = y[2];
    return run;
  }
  throw GeometryError("level orbit: orbit did not close");
}

struct NoRecord {
  void operator()(double, double, double) const noexcept {}
};

}  // namespace detail

/// Closed level line {E = h} in region nu at slow value z.
inline LevelOrbit level_orbit(const SlowFastSystem& s, double h, const SlowVector& z, int nu,
                              const NumericOptions& opt = {}, bool with_integrals = false,
                              bool record = false,
                              const std::optional<SaddleFrame>& frame_hint = std::nullopt) {
  detail::check_level(s, h, nu, opt);
  const detail::OrbitSetup setup = detail::orbit_setup(s, h, z, nu, frame_hint);
  LevelOrbit orbit;
  orbit.nu = nu;
  orbit.h = h;
  orbit.z = z;
  orbit.ref = setup.ref;
  orbit.section = setup.section;

  OrbitIntegrands extra;
  const std::size_t d = s.dim_z;
  if (with_integrals) {
    extra.count = 1 + 2 * d;
    extra.eval = [&s, d](double p, double q, const SlowVector& zz, double* out) {
      const EnergyGradient g = s.gradient(p, q, zz);
      const Perturbation f = s.perturb(p, q, zz, 0.0);
      out[0] = energy_work_density(g, f);
      for (std::size_t i = 0; i < d; ++i) {
        out[1 + i] = f.f3[i];
        out[1 + d + i] = g.dz[i];
      }
    };
  }
  detail::OrbitRun run;
  if (record) {
    auto rec = [&orbit](double t, double p, double q) {
      orbit.t.push_back(t);
      orbit.p.push_back(p);
      orbit.q.push_back(q);
    };
    run = detail::run_orbit(s, z, setup.ref, setup.section, extra, opt, rec);
  } else {
    run = detail::run_orbit(s, z, setup.ref, setup.section, extra, opt, detail::NoRecord{});
  }
  orbit.period = run.period;
  orbit.action = std::abs(run.area) / (2.0 * std::numbers::pi);
  orbit.f3_integral = SlowVector(d);
  orbit.ez_integral = SlowVector(d);
  if (with_integrals) {
    orbit.work_integral = run.extras[0];
    for (std::size_t i = 0; i < d; ++i) {
      orbit.f3_integral[i] = run.extras[1 + i];
      orbit.ez_integral[i] = run.extras[1 + d + i];
    }
  }
  return orbit;
}

inline double period(const SlowFastSystem& s, double h, const SlowVector& z, int nu,
                     const NumericOptions& opt = {}) {
  return level_orbit(s, h, z, nu, opt).period;
}

inline double action(const SlowFastSystem& s, double h, const SlowVector& z, int nu,
                     const NumericOptions& opt = {}) {
  return level_orbit(s, h, z, nu, opt).action;
}

/// Loop integral of g(p, q, z) dt over the level line {E = h} in region nu.
template <class G>
double loop_time_integral(const SlowFastSystem& s, G&& g, double h, const SlowVector& z, int nu,
                          const NumericOptions& opt = {}) {
  detail::check_level(s, h, nu, opt);
  const detail::OrbitSetup setup = detail::orbit_setup(s, h, z, nu, std::nullopt);
  OrbitIntegrands extra;
  extra.count = 1;
  extra.eval = [&g](double p, double q, const SlowVector& zz, double* out) { out[0] = g(p, q, zz); };
  return detail::run_orbit(s, z, setup.ref, setup.section, extra, opt, detail::NoRecord{}).extras[0];
}

/// Boundary marker returned by detect_region for points on the separatrix.
inline constexpr int kSeparatrixBand = 0;

/// Region of a point: 3 above the separatrix, else its loop side, or
/// kSeparatrixBand when |E| is within the band.
inline int detect_region(const SlowFastSystem& s, double p, double q, const SlowVector& z,
                         const NumericOptions& opt = {}) {
  const double e = s.energy(p, q, z);
  if (std::abs(e) <= opt.region_band * s.domain.scale()) return kSeparatrixBand;
  return e > 0.0 ? 3 : s.side(p, q, z);
}

/// Energy h of the level line in region nu with action I, by safeguarded
/// Newton iteration (dI/dh = T / 2 pi).
inline double energy_for_action(const SlowFastSystem& s, int nu, double target, const SlowVector& z,
                                const NumericOptions& opt = {},
                                std::optional<double> guess = std::nullopt) {
  if (nu < 1 || nu > 3) throw PreconditionError("energy_for_action: region must be 1, 2 or 3");
  if (!(target > 0.0)) throw PreconditionError("energy_for_action: action must be positive");
  const SaddleFrame frame = locate_saddle(s, z);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  auto eval = [&](double h) { return level_orbit(s, h, z, nu, opt, false, false, frame); };

  double lo, hi, h;
  double f_lo, f_hi;
  if (nu == 3) {
    lo = opt.h_min;
    const LevelOrbit o = eval(lo);
    f_lo = o.action - target;
    if (f_lo >= 0.0) {
      throw PreconditionError("energy_for_action: action is not above the separatrix value");
    }
    hi = std::numeric_limits<double>::infinity();
    f_hi = std::numeric_limits<double>::infinity();
    h = guess && *guess > lo ? *guess : lo - f_lo * two_pi / o.period;
  } else {
    const WellCenter wc = find_well_center(s, frame, nu);
    hi = -opt.h_min;
    const LevelOrbit o = eval(hi);
    f_hi = o.action - target;
    if (f_hi <= 0.0) {
      throw PreconditionError("energy_for_action: action is not below the separatrix value");
    }
    lo = wc.energy;
    f_lo = -target;
    h = guess && *guess > lo && *guess < hi ? *guess : wc.energy * (1.0 - target / o.action);
  }
  for (int it = 0; it < 100; ++it) {
    if (!(h > lo && h < hi)) h = std::isfinite(hi) ? 0.5 * (lo + hi) : 2.0 * lo;
    const LevelOrbit o = eval(h);
    const double f = o.action - target;
    if (f == 0.0) return h;
    if (f < 0.0) {
      lo = h;
      f_lo = f;
    } else {
      hi = h;
      f_hi = f;
    }
    const double step = f * two_pi / o.period;
    double next = h - step;
    if (!(next > lo && next < hi)) next = std::isfinite(hi) ? 0.5 * (lo + hi) : 2.0 * h;
    if (std::abs(next - h) <= 1e-15 * std::abs(h) + 1e-300 ||
        std::abs(f) <= 2e-16 * target) {
      return next;
    }
    if (std::isfinite(hi) && hi - lo <= 4e-16 * std::max(std::abs(lo), std::abs(hi))) return next;
    h = next;
  }
  (void)f_lo;
  (void)f_hi;
  throw GeometryError("energy_for_action: iteration did not converge");
}

/// Action-angle coordinates of a point. The angle is 2 pi t / T where t is
/// the unperturbed time from the orbit's reference point.
inline ActionAngle to_action_angle(const SlowFastSystem& s, double p, double q, const SlowVector& z,
                                   const NumericOptions& opt = {}) {
  const double h = s.energy(p, q, z);
  if (std::abs(h) < opt.h_min) {
    throw NearSeparatrixError("to_action_angle: point lies within the separatrix floor");
  }
  const int nu = h > 0.0 ? 3 : s.side(p, q, z);
  const LevelOrbit orbit = level_orbit(s, h, z, nu, opt);
  // time from the point to the next section crossing
  const detail::OrbitRun run = detail::run_orbit(s, z, PhasePoint{p, q}, orbit.section, OrbitIntegrands{},
                                                 opt, detail::NoRecord{});
  double t_hit = run.period;
  if (t_hit >= orbit.period) t_hit -= orbit.period;
  double phi = 2.0 * std::numbers::pi * (orbit.period - t_hit) / orbit.period;
  if (phi >= 2.0 * std::numbers::pi) phi -= 2.0 * std::numbers::pi;
  if (phi < 0.0) phi = 0.0;
  return ActionAngle{nu, h, orbit.action, phi, orbit.period};
}

/// Inverse of to_action_angle.
inline PhasePoint from_action_angle(const SlowFastSystem& s, int nu, double action_value, double angle,
                                    const SlowVector& z, const NumericOptions& opt = {}) {
  const double h = energy_for_action(s, nu, action_value, z, opt);
  const LevelOrbit orbit = level_orbit(s, h, z, nu, opt);
  double phi = std::fmod(angle, 2.0 * std::numbers::pi);
  if (phi < 0.0) phi += 2.0 * std::numbers::pi;
  const double t = phi / (2.0 * std::numbers::pi) * orbit.period;
  if (t == 0.0) return orbit.ref;
  PhasePoint out;
  detail::run_orbit(s, z, orbit.ref, orbit.section, OrbitIntegrands{}, opt, detail::NoRecord{}, t, &out);
  return out;
}

struct PeriodFit {
  int nu = 0;
  double a = 0.0;  ///< fitted log coefficient (per saddle passage)
  double b = 0.0;
  double a_expected = 0.0;  ///< 1 / omega0
  double rms_residual = 0.0;
  std::vector<double> h, period;
};

/// Least-squares fit of T(h) = -k a ln|h| + b on a geometric ladder of
/// energies toward the separatrix (k = 2 for region 3, else 1).
inline PeriodFit period_asymptotics(const SlowFastSystem& s, const SlowVector& z, int nu,
                                    const NumericOptions& opt = {}, double h0 = 1e-6, int levels = 12) {
  const SaddleFrame frame = locate_saddle(s, z);
  PeriodFit fit;
  fit.nu = nu;
  fit.a_expected = 1.0 / frame.omega0;
  const double sign = nu == 3 ? 1.0 : -1.0;
  const double k = nu == 3 ? 2.0 : 1.0;
  std::vector<double> x, y, w;
  for (int i = 0; i < levels; ++i) {
    const double hh = h0 * std::ldexp(1.0, -i);
    if (hh < opt.h_min) break;
    const double T = level_orbit(s, sign * hh, z, nu, opt, false, false, frame).period;
    fit.h.push_back(sign * hh);
    fit.period.push_back(T);
    x.push_back(-k * std::log(hh));
    y.push_back(T);
    w.push_back(1.0);
  }
  if (x.size() < 3) throw PreconditionError("period_asymptotics: not enough energy levels");
  for (std::size_t i = x.size() - std::min<std::size_t>(3, x.size() - 2); i < x.size(); ++i) w[i] = 0.25;
  double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sw += w[i];
    sx += w[i] * x[i];
    sy += w[i] * y[i];
    sxx += w[i] * x[i] * x[i];
    sxy += w[i] * x[i] * y[i];
  }
  const double den = sw * sxx - sx * sx;
  fit.a = (sw * sxy - sx * sy) / den;
  fit.b = (sy - fit.a * sx) / sw;
  double ss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (fit.a * x[i] + fit.b);
    ss += r * r;
  }
  fit.rms_residual = std::sqrt(ss / static_cast<double>(x.size()));
  return fit;
}

}  // namespace sepcross
