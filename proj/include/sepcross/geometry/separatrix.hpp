#pragma once

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "sepcross/errors.hpp"
#include "sepcross/geometry/saddle.hpp"
#include "sepcross/model.hpp"
#include "sepcross/ode/dop853.hpp"
#include "sepcross/ode/events.hpp"
#include "sepcross/options.hpp"

namespace sepcross {

/// One separatrix loop l_nu traced from C back to C.
struct SeparatrixLoop {
  int nu = 0;
  std::vector<double> s;  ///< arc length along the loop
  std::vector<double> p;
  std::vector<double> q;
  double area = 0.0;        ///< S_nu
  double arc_length = 0.0;
  double work_integral = 0.0;  ///< loop integral of F0 dt (equals -Theta_nu)
  SlowVector ez_integral;      ///< loop integral of dE/dz dt (equals -dS_nu/dz)
  double diameter = 0.0;       ///< max distance from C along the loop
  double end_gap = 0.0;        ///< distance from C where the trace stopped
};

struct SeparatrixGeometry {
  SaddleFrame frame;
  std::array<SeparatrixLoop, 2> loops;

  [[nodiscard]] const SeparatrixLoop& loop(int nu) const { return loops.at(static_cast<std::size_t>(nu - 1)); }
  /// S_nu for nu = 1, 2, 3.
  [[nodiscard]] double area(int nu) const {
    return nu == 3 ? loops[0].area + loops[1].area : loop(nu).area;
  }
  [[nodiscard]] double min_diameter() const { return std::min(loops[0].diameter, loops[1].diameter); }
};

namespace detail {

/// Integrand of the standard separatrix integrals at eps = 0:
/// out = [F0, dE/dz...]. Returns |grad E|.
inline double separatrix_integrands(const SlowFastSystem& s, double p, double q, const SlowVector& z,
                                    EnergyGradient& g, double* out) {
  g = s.gradient(p, q, z);
  const Perturbation f = s.perturb(p, q, z, 0.0);
  out[0] = energy_work_density(g, f);
  for (std::size_t i = 0; i < s.dim_z; ++i) out[1 + i] = g.dz[i];
  return std::hypot(g.dp, g.dq);
}

inline void check_normalized(const SlowFastSystem& s, const SaddleFrame& f) {
  const double e = s.energy(f.c.p, f.c.q, f.z);
  const double tol = 1e-10 * std::max(1.0, s.domain.scale() * s.domain.scale());
  if (std::abs(e) > tol) {
    throw PreconditionError("energy is not normalized at the saddle (E(C) = " + std::to_string(e) +
                            "); call normalize_energy first");
  }
  const EnergyGradient g = s.gradient(f.c.p, f.c.q, f.z);
  if (g.dz.norm_inf() > 1e-8) {
    throw PreconditionError(
        "dE/dz does not vanish at the saddle; separatrix integrals diverge (call normalize_energy)");
  }
}

}  // namespace detail

/// Traces the separatrix loop `nu` in arc-length parametrization and
/// accumulates its area and time integrals.
inline SeparatrixLoop trace_separatrix(const SlowFastSystem& s, const SaddleFrame& frame, int nu,
                                       const NumericOptions& opt = {}, double rtol_scale = 1.0) {
  if (nu != 1 && nu != 2) throw PreconditionError("trace_separatrix: nu must be 1 or 2");
  const SlowVector z = frame.z;
  const std::size_t m = 1 + s.dim_z;  // integrals
  const std::size_t n = 3 + m;        // p, q, area, integrals
  const double scale = s.domain.scale();
  const double s0 = opt.separatrix_offset * scale;
  const double r_cap = opt.capture_radius * scale;

  Vec2 u = frame.unstable;
  const double probe = 1e-3 * scale;
  if (s.side(frame.c.p + probe * u.p, frame.c.q + probe * u.q, z) != nu) u = Vec2{-u.p, -u.q};

  auto rhs = [&s, &z, m](double, std::span<const double> y, std::span<double> dy) {
    EnergyGradient g;
    double w[1 + kMaxSlowDim];
    const double speed = detail::separatrix_integrands(s, y[0], y[1], z, g, w);
    const double inv = 1.0 / speed;
    dy[0] = -g.dq * inv;
    dy[1] = g.dp * inv;
    dy[2] = y[0] * dy[1];
    for (std::size_t i = 0; i < m; ++i) dy[3 + i] = w[i] * inv;
  };

  ode::StepperOptions so;
  so.rtol = opt.orbit_rtol * rtol_scale;
  so.atol = opt.orbit_atol * rtol_scale;
  so.max_step = 0.05 * scale;
  so.max_steps = 2'000'000;
  ode::Dop853 stepper(n, rhs, so);

  std::vector<double> y0(n, 0.0);
  y0[0] = frame.c.p + s0 * u.p;
  y0[1] = frame.c.q + s0 * u.q;
  stepper.reset(0.0, y0);

  SeparatrixLoop loop;
  loop.nu = nu;
  loop.s = {0.0, s0};
  loop.p = {frame.c.p, y0[0]};
  loop.q = {frame.c.q, y0[1]};

  auto dist = [&](std::span<const double> y) { return std::hypot(y[0] - frame.c.p, y[1] - frame.c.q); };
  auto approach = [&](std::span<const double> y, std::span<const double> dy) {
    return (y[0] - frame.c.p) * dy[0] + (y[1] - frame.c.q) * dy[1];
  };

  const double s_max = 1000.0 * scale;
  bool armed = false;
  std::vector<double> y_end(n), dy_tmp(n);
  double prev_d = dist(stepper.y());
  double prev_a = approach(stepper.y(), stepper.dydt());
  bool done = false;
  double s_event = 0.0;
  while (!done) {
    if (!stepper.step(s_max)) {
      throw GeometryError("trace_separatrix: loop did not return to the saddle");
    }
    auto y = stepper.y();
    if (!s.domain.contains_pq(y[0], y[1])) {
      throw DomainError("trace_separatrix: separatrix leaves the domain box");
    }
    const double d = dist(y);
    const double a = approach(y, stepper.dydt());
    if (!armed && d > 100.0 * r_cap && d > 0.01 * scale) armed = true;
    if (armed) {
      if (d <= r_cap && prev_d > r_cap) {
        s_event = ode::refine_event(
            stepper, [&](double, std::span<const double> yy) { return dist(yy) - r_cap; },
            prev_d - r_cap, d - r_cap, y_end);
        done = true;
      } else if (a >= 0.0 && prev_a < 0.0 && d < 0.1 * scale) {
        s_event = ode::refine_event(
            stepper,
            [&](double t, std::span<const double> yy) {
              rhs(t, yy, dy_tmp);
              return approach(yy, dy_tmp);
            },
            prev_a, a, y_end);
        done = true;
      }
    }
    if (!done) {
      loop.s.push_back(s0 + stepper.t());
      loop.p.push_back(y[0]);
      loop.q.push_back(y[1]);
      loop.diameter = std::max(loop.diameter, d);
    }
    prev_d = d;
    prev_a = a;
  }

  // straight end pieces between C and the traced arc
  EnergyGradient g;
  double w0[1 + kMaxSlowDim], w1[1 + kMaxSlowDim];
  const double sp0 = detail::separatrix_integrands(s, y0[0], y0[1], z, g, w0);
  const double sp1 = detail::separatrix_integrands(s, y_end[0], y_end[1], z, g, w1);
  const double d_end = dist(y_end);
  double area = y_end[2];
  area += 0.5 * (frame.c.p + y0[0]) * (y0[1] - frame.c.q);
  area += 0.5 * (y_end[0] + frame.c.p) * (frame.c.q - y_end[1]);
  std::vector<double> integ(m);
  for (std::size_t i = 0; i < m; ++i) integ[i] = y_end[3 + i] + w0[i] / sp0 * s0 + w1[i] / sp1 * d_end;

  const double s_arc = s0 + s_event;
  const double s_total = s_arc + d_end;
  loop.s.push_back(s_arc);
  loop.p.push_back(y_end[0]);
  loop.q.push_back(y_end[1]);
  loop.s.push_back(s_total);
  loop.p.push_back(frame.c.p);
  loop.q.push_back(frame.c.q);
  loop.area = std::abs(area);
  loop.arc_length = s_total;
  loop.work_integral = integ[0];
  loop.ez_integral = SlowVector(s.dim_z);
  for (std::size_t i = 0; i < s.dim_z; ++i) loop.ez_integral[i] = integ[1 + i];
  loop.end_gap = d_end;
  return loop;
}

/// Saddle frame plus both separatrix loops at slow value z.
inline SeparatrixGeometry compute_separatrix(const SlowFastSystem& s, const SlowVector& z,
                                             const NumericOptions& opt = {},
                                             std::optional<PhasePoint> guess = std::nullopt,
                                             double rtol_scale = 1.0) {
  SeparatrixGeometry geo;
  geo.frame = locate_saddle(s, z, guess);
  detail::check_normalized(s, geo.frame);
  geo.loops[0] = trace_separatrix(s, geo.frame, 1, opt, rtol_scale);
  geo.loops[1] = trace_separatrix(s, geo.frame, 2, opt, rtol_scale);
  return geo;
}

}  // namespace sepcross
