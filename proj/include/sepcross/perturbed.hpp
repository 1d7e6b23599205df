#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/tools/toms748_solve.hpp>

#include "sepcross/averaged.hpp"
#include "sepcross/errors.hpp"
#include "sepcross/geometry/level_orbit.hpp"
#include "sepcross/geometry/saddle.hpp"
#include "sepcross/geometry/separatrix.hpp"
#include "sepcross/model.hpp"
#include "sepcross/ode/dop853.hpp"
#include "sepcross/options.hpp"
#include "sepcross/theta.hpp"

namespace sepcross {

/// Arrival at the eta-ray C + s eta (s > 0) near the saddle.
struct SectionEvent {
  double t = 0.0;
  double h = 0.0;
  double p = 0.0;
  double q = 0.0;
  SlowVector z;
};

struct RegionChange {
  double t = 0.0;
  int from = 0;
  int to = 0;
};

/// Dense output of every accepted step, in the stepper's coefficient form.
/// Component order per step: p, q, z..., w (accumulated energy change).
struct DenseHistory {
  std::size_t n = 0;
  std::vector<double> t0, dt;
  std::vector<double> coeff;

  [[nodiscard]] bool empty() const { return t0.empty(); }
  [[nodiscard]] std::size_t steps() const { return t0.size(); }
  [[nodiscard]] std::span<const double> step(std::size_t k) const {
    return {coeff.data() + 8 * n * k, 8 * n};
  }
  [[nodiscard]] std::size_t locate(double t) const {
    auto it = std::upper_bound(t0.begin(), t0.end(), t);
    return it == t0.begin() ? 0 : static_cast<std::size_t>(it - t0.begin()) - 1;
  }
  [[nodiscard]] double component(double t, std::size_t i) const {
    const std::size_t k = locate(t);
    return ode::dense_from_coefficients(step(k), n, t0[k], dt[k], t, i);
  }
  [[nodiscard]] double component_in(std::size_t k, double t, std::size_t i) const {
    return ode::dense_from_coefficients(step(k), n, t0[k], dt[k], t, i);
  }
};

/// Controls of one full-system run that are not numeric defaults.
struct FullControl {
  bool record_samples = true;
  bool record_dense = false;
  /// Radius of the saddle neighbourhood for section events; 0 selects
  /// section_radius_factor * min loop diameter at z0.
  double section_radius = 0.0;
  /// Stop this long (fast time) after t_plus; negative keeps going to t_end.
  double stop_after_capture = -1.0;
  double max_step = std::numeric_limits<double>::infinity();
  std::size_t max_steps = 50'000'000;
};

/// Solution of the full perturbed system.
struct Trajectory {
  double eps = 0.0;
  std::size_t dim_z = 0;
  double kappa_plus = 0.0;
  double kappa_minus = 0.0;
  double section_radius = 0.0;

  // one entry per accepted step (and the initial point)
  std::vector<double> t;
  std::vector<double> state;  ///< p, q, z... per sample
  std::vector<double> h;
  std::vector<int> nu;
  std::vector<double> work;  ///< eps * integral of (E_q f1 + E_p f2 + E_z f3) dt

  std::vector<SectionEvent> events;
  std::vector<RegionChange> transitions;
  std::optional<double> t_minus;  ///< first time h <= kappa_plus eps
  std::optional<double> t_plus;   ///< first time h <= -kappa_minus eps
  int region_at_t_plus = 0;

  double t_final = 0.0;
  FullState final_state;
  double h_initial = 0.0;
  double h_final = 0.0;
  double work_final = 0.0;
  std::size_t accepted_steps = 0;
  std::size_t rejected_steps = 0;
  DenseHistory dense;

  [[nodiscard]] std::size_t size() const { return t.size(); }
  [[nodiscard]] std::size_t stride() const { return 2 + dim_z; }
  [[nodiscard]] double p(std::size_t i) const { return state[i * stride()]; }
  [[nodiscard]] double q(std::size_t i) const { return state[i * stride() + 1]; }
  [[nodiscard]] SlowVector z(std::size_t i) const {
    return SlowVector(std::span<const double>(state.data() + i * stride() + 2, dim_z));
  }
};

namespace detail {

inline std::string describe_state(std::span<const double> y, std::size_t dim_z) {
  return describe(y[0], y[1], SlowVector(y.subspan(2, dim_z)));
}

template <class F>
double refine_in_step(F&& g, double a, double b, double ga, double gb) {
  if (ga == 0.0) return a;
  if (gb == 0.0) return b;
  std::uintmax_t it = 200;
  auto tol = [](double lo, double hi) { return std::abs(hi - lo) <= ode::kEventTimeTolerance; };
  const auto r = boost::math::tools::toms748_solve(g, a, b, ga, gb, tol, it);
  return 0.5 * (r.first + r.second);
}

inline double default_section_radius(const SlowFastSystem& s, const SlowVector& z0, const NumericOptions& opt) {
  const SeparatrixGeometry g = compute_separatrix(s, z0, opt);
  return opt.section_radius_factor * g.min_diameter();
}

}  // namespace detail

/// Scans one dense-output step for arrivals at the eta-ray of `frame`:
/// the xi coordinate changes sign from + to - with 0 < eta < radius.
template <class Eval>
void scan_section(const SlowFastSystem& s, const SaddleFrame& frame, double radius, double ta, double tb,
                  Eval&& eval, std::vector<SectionEvent>& out) {
  auto xi_at = [&](double t) {
    double p, q;
    SlowVector z;
    eval(t, p, q, z);
    return frame.xi_coord(p, q);
  };
  const double xa = xi_at(ta), xb = xi_at(tb);
  if (!(xa > 0.0 && xb <= 0.0)) return;
  const double tr = detail::refine_in_step(xi_at, ta, tb, xa, xb);
  double p, q;
  SlowVector z;
  eval(tr, p, q, z);
  const double eta = frame.eta_coord(p, q);
  if (!(eta > 0.0 && std::hypot(p - frame.c.p, q - frame.c.q) < radius)) return;
  out.push_back(SectionEvent{tr, s.energy(p, q, z), p, q, z});
}

/// Integrates the full system from `initial` over [0, t_end] in fast time.
inline Trajectory integrate_full(const SlowFastSystem& s, const FullState& initial, double eps, double t_end,
                                 const NumericOptions& opt = {}, const FullControl& ctl = {}) {
  if (initial.z.size() != s.dim_z) throw PreconditionError("integrate_full: slow vector has wrong dimension");
  if (!(eps >= 0.0) || !std::isfinite(eps)) throw PreconditionError("integrate_full: eps must be non-negative");
  if (!(t_end > 0.0) || !std::isfinite(t_end)) throw PreconditionError("integrate_full: t_end must be positive");
  if (!s.domain.contains(initial.p, initial.q, initial.z)) {
    throw DomainError("integrate_full: initial state outside the domain box " +
                      detail::describe(initial.p, initial.q, initial.z));
  }
  const std::size_t dz = s.dim_z;
  const std::size_t n = 3 + dz;  // p, q, z..., w

  Trajectory tr;
  tr.eps = eps;
  tr.dim_z = dz;
  tr.kappa_plus = opt.kappa_plus;
  tr.kappa_minus = opt.kappa_minus;
  tr.section_radius = ctl.section_radius > 0.0 ? ctl.section_radius
                                                : detail::default_section_radius(s, initial.z, opt);
  tr.dense.n = n;

  auto rhs = [&s, eps, dz](double, std::span<const double> y, std::span<double> dy) {
    const SlowVector z(y.subspan(2, dz));
    const EnergyGradient g = s.gradient(y[0], y[1], z);
    const Perturbation f = s.perturb(y[0], y[1], z, eps);
    dy[0] = -g.dq + eps * f.f2;
    dy[1] = g.dp + eps * f.f1;
    for (std::size_t i = 0; i < dz; ++i) dy[2 + i] = eps * f.f3[i];
    dy[2 + dz] = eps * energy_work_density(g, f);
  };
  ode::StepperOptions so;
  so.rtol = opt.full_rtol;
  so.atol = opt.full_atol;
  so.max_step = ctl.max_step;
  so.max_steps = ctl.max_steps;
  ode::Dop853 stepper(n, rhs, so);
  std::vector<double> y0(n, 0.0);
  y0[0] = initial.p;
  y0[1] = initial.q;
  for (std::size_t i = 0; i < dz; ++i) y0[2 + i] = initial.z[i];
  stepper.reset(0.0, y0);

  const double thr_minus = opt.kappa_plus * eps;   // entering the band from above
  const double thr_plus = -opt.kappa_minus * eps;  // leaving it below
  auto energy_of = [&](std::span<const double> y) { return s.energy(y[0], y[1], SlowVector(y.subspan(2, dz))); };
  auto region_of = [&](std::span<const double> y) {
    return detect_region(s, y[0], y[1], SlowVector(y.subspan(2, dz)), opt);
  };
  auto record = [&](double t, std::span<const double> y, double h, int nu) {
    if (!ctl.record_samples) return;
    tr.t.push_back(t);
    tr.state.insert(tr.state.end(), y.begin(), y.begin() + static_cast<std::ptrdiff_t>(2 + dz));
    tr.h.push_back(h);
    tr.nu.push_back(nu);
    tr.work.push_back(y[2 + dz]);
  };

  double h_prev = energy_of(stepper.y());
  int last_region = region_of(stepper.y());
  tr.h_initial = h_prev;
  record(0.0, stepper.y(), h_prev, last_region);
  if (eps > 0.0 && h_prev <= thr_minus && h_prev > thr_plus) tr.t_minus = 0.0;  // starts inside the band

  SaddleFrame frame = locate_saddle(s, initial.z);
  const bool z_fixed = dz == 0 || eps == 0.0;

  for (;;) {
    bool moved = false;
    try {
      moved = stepper.step(t_end);
    } catch (const IntegrationError& e) {
      throw IntegrationError(std::string(e.what()) + " at state " + detail::describe_state(stepper.y(), dz));
    }
    if (!moved) break;
    const auto y = stepper.y();
    const SlowVector z(y.subspan(2, dz));
    if (!s.domain.contains(y[0], y[1], z)) {
      throw DomainError("integrate_full: trajectory leaves the domain box at t=" + std::to_string(stepper.t()) +
                        " " + detail::describe_state(y, dz));
    }
    const double ta = stepper.t_prev(), tb = stepper.t();
    const auto coeff = stepper.dense_coefficients();
    const double step_h = stepper.last_step();
    if (ctl.record_dense) {
      tr.dense.t0.push_back(ta);
      tr.dense.dt.push_back(step_h);
      tr.dense.coeff.insert(tr.dense.coeff.end(), coeff.begin(), coeff.end());
    }
    auto comp = [&](double t, std::size_t i) { return ode::dense_from_coefficients(coeff, n, ta, step_h, t, i); };
    auto h_at = [&](double t) {
      SlowVector zz(dz);
      for (std::size_t i = 0; i < dz; ++i) zz[i] = comp(t, 2 + i);
      return s.energy(comp(t, 0), comp(t, 1), zz);
    };
    const double h_now = energy_of(y);

    if (!z_fixed) frame = locate_saddle(s, z, frame.c);
    auto eval = [&](double t, double& p, double& q, SlowVector& zz) {
      p = comp(t, 0);
      q = comp(t, 1);
      zz = SlowVector(dz);
      for (std::size_t i = 0; i < dz; ++i) zz[i] = comp(t, 2 + i);
    };
    scan_section(s, frame, tr.section_radius, ta, tb, eval, tr.events);

    if (!tr.t_minus && h_now <= thr_minus && h_prev > thr_minus) {
      tr.t_minus = detail::refine_in_step([&](double t) { return h_at(t) - thr_minus; }, ta, tb,
                                          h_prev - thr_minus, h_now - thr_minus);
    }
    if (!tr.t_plus && h_now <= thr_plus && h_prev > thr_plus) {
      const double tp = detail::refine_in_step([&](double t) { return h_at(t) - thr_plus; }, ta, tb,
                                               h_prev - thr_plus, h_now - thr_plus);
      tr.t_plus = tp;
      SlowVector zz(dz);
      for (std::size_t i = 0; i < dz; ++i) zz[i] = comp(tp, 2 + i);
      const double pp = comp(tp, 0), qq = comp(tp, 1);
      tr.region_at_t_plus = s.energy(pp, qq, zz) > 0.0 ? 3 : s.side(pp, qq, zz);
    }
    const int region = region_of(y);
    if (region != kSeparatrixBand && last_region != kSeparatrixBand && region != last_region) {
      tr.transitions.push_back(RegionChange{tb, last_region, region});
    }
    if (region != kSeparatrixBand) last_region = region;
    record(tb, y, h_now, region);
    h_prev = h_now;
    if (ctl.stop_after_capture >= 0.0 && tr.t_plus && tb >= *tr.t_plus + ctl.stop_after_capture) break;
  }
  const auto y = stepper.y();
  tr.t_final = stepper.t();
  tr.final_state = FullState{y[0], y[1], SlowVector(y.subspan(2, dz))};
  tr.h_final = energy_of(y);
  tr.work_final = y[2 + dz];
  tr.accepted_steps = stepper.accepted_steps();
  tr.rejected_steps = stepper.rejected_steps();
  return tr;
}

/// Arrivals at the eta-ray of `frame` recovered from a recorded dense
/// history.
inline std::vector<SectionEvent> eta_section_events(const SlowFastSystem& s, const Trajectory& tr,
                                                    const SaddleFrame& frame, double radius = 0.0) {
  if (tr.dense.empty()) throw PreconditionError("eta_section_events: trajectory has no dense history");
  if (radius <= 0.0) radius = tr.section_radius;
  std::vector<SectionEvent> out;
  const std::size_t dz = tr.dim_z;
  for (std::size_t k = 0; k < tr.dense.steps(); ++k) {
    auto eval = [&](double t, double& p, double& q, SlowVector& z) {
      p = tr.dense.component_in(k, t, 0);
      q = tr.dense.component_in(k, t, 1);
      z = SlowVector(dz);
      for (std::size_t i = 0; i < dz; ++i) z[i] = tr.dense.component_in(k, t, 2 + i);
    };
    scan_section(s, frame, radius, tr.dense.t0[k], tr.dense.t0[k] + tr.dense.dt[k], eval, out);
  }
  return out;
}

/// Outcome of the pseudo-crossing rule at an eta-section arrival.
struct PseudoPrediction {
  int nu = 3;                 ///< 1, 2, or 3 (comes back to the eta-ray)
  double edge_distance = 0.0;  ///< distance of h' to eps Theta_2 or eps Theta_3
  double margin = 0.0;         ///< predictor_margin * eps^{3/2} * Theta_3
  bool in_margin = false;
};

/// Interval rule: h' in (0, eps Theta_2) -> 2; (eps Theta_2, eps Theta_3) -> 1;
/// above -> 3. Theta is taken at z'.
inline PseudoPrediction predict_capture_pseudo(const ThetaContext& ctx, double h_prime, const SlowVector& z_prime,
                                               double eps) {
  if (!(h_prime > 0.0)) {
    throw PreconditionError("predict_capture_pseudo: h' = " + std::to_string(h_prime) +
                            " is not above the separatrix");
  }
  if (!(eps > 0.0)) throw PreconditionError("predict_capture_pseudo: eps must be positive");
  const SeparatrixData d = ctx.at(z_prime);
  const double a = eps * d.theta[1];
  const double b = eps * d.theta[2];
  PseudoPrediction r;
  r.nu = h_prime < a ? 2 : (h_prime < b ? 1 : 3);
  // h' near 0 cannot flip the outcome: only the two upper endpoints count
  r.edge_distance = std::min(std::abs(h_prime - a), std::abs(h_prime - b));
  r.margin = ctx.options().predictor_margin * std::pow(eps, 1.5) * std::abs(d.theta[2]);
  r.in_margin = r.edge_distance < r.margin;
  return r;
}

struct CaptureRecord {
  bool complete = false;
  int destination = 0;
  double t_minus = std::numeric_limits<double>::quiet_NaN();
  double t_plus = std::numeric_limits<double>::quiet_NaN();
  bool has_prime = false;
  double t_prime = std::numeric_limits<double>::quiet_NaN();
  double h_prime = std::numeric_limits<double>::quiet_NaN();
  SlowVector z_prime;
  int predicted = 0;  ///< 0 when no prediction was made
  bool agree = false;
  bool in_margin = false;
};

/// Capture outcome of a trajectory: t_minus, t_plus, destination and h' at
/// the last eta-section arrival before t_plus. With a context, the
/// pseudo-crossing prediction is filled in too.
inline CaptureRecord classify_capture(const Trajectory& tr, const ThetaContext* ctx = nullptr) {
  CaptureRecord c;
  if (tr.t_minus) c.t_minus = *tr.t_minus;
  if (!tr.t_plus || !tr.t_minus) return c;
  c.complete = true;
  c.t_plus = *tr.t_plus;
  c.destination = tr.region_at_t_plus;
  for (auto it = tr.events.rbegin(); it != tr.events.rend(); ++it) {
    if (it->t < c.t_plus) {
      c.has_prime = true;
      c.t_prime = it->t;
      c.h_prime = it->h;
      c.z_prime = it->z;
      break;
    }
  }
  if (ctx && c.has_prime && c.h_prime > 0.0) {
    const PseudoPrediction p = predict_capture_pseudo(*ctx, c.h_prime, c.z_prime, tr.eps);
    c.predicted = p.nu;
    c.in_margin = p.in_margin;
    c.agree = p.nu == c.destination;
  }
  return c;
}

/// Deviation of a trajectory from an averaged solution.
struct AveragingError {
  double pre = 0.0;            ///< sup |h - H| + |z - Z| for eps t <= tau_*
  double post = 0.0;           ///< sup of the same after tau_*
  double post_weighted = 0.0;  ///< sup (|h - H| + |z - Z|) (1 + |ln|H||) after tau_*
  std::size_t pre_samples = 0;
  std::size_t post_samples = 0;
};

/// Compares the recorded samples with branch `nu` of the averaged solution
/// (nu = 0 uses the trajectory's capture destination).
inline AveragingError compare_to_averaged(const Trajectory& tr, const AveragedSolution& sol, int nu = 0) {
  if (tr.t.empty()) throw PreconditionError("compare_to_averaged: trajectory has no samples");
  const bool crossing_compared = sol.crossing.has_value();
  if (crossing_compared) {
    if (nu == 0) {
      if (!tr.t_plus) throw PreconditionError("compare_to_averaged: trajectory did not cross the separatrix");
      nu = tr.region_at_t_plus;
    }
    if (tr.t_plus && tr.region_at_t_plus != nu) {
      throw PreconditionError("compare_to_averaged: trajectory was captured in region " +
                              std::to_string(tr.region_at_t_plus) + ", not " + std::to_string(nu));
    }
    if (nu != 1 && nu != 2) throw PreconditionError("compare_to_averaged: branch must be 1 or 2");
  }
  const double tau_star = crossing_compared ? sol.crossing->tau_star : std::numeric_limits<double>::infinity();
  const double tau_lo = sol.pre.empty() ? tau_star : sol.pre.tau_begin();
  double tau_hi = sol.pre.empty() ? tau_star : sol.pre.tau_end();
  if (crossing_compared) {
    const AveragedBranch& b = sol.post[static_cast<std::size_t>(nu - 1)];
    if (!b.empty()) tau_hi = b.tau_end();
  }
  AveragingError e;
  for (std::size_t i = 0; i < tr.size(); ++i) {
    const double tau = tr.eps * tr.t[i];
    if (tau < tau_lo || tau > tau_hi) continue;
    const AveragedState a = sol.at(tau, crossing_compared ? nu : 1);
    const double err = std::abs(tr.h[i] - a.h) + (tr.z(i) - a.z).norm1();
    if (tau <= tau_star) {
      e.pre = std::max(e.pre, err);
      ++e.pre_samples;
    } else {
      e.post = std::max(e.post, err);
      if (a.h != 0.0) e.post_weighted = std::max(e.post_weighted, err * (1.0 + std::abs(std::log(std::abs(a.h)))));
      ++e.post_samples;
    }
  }
  return e;
}

/// Action j(t) = I(h, z, nu) at the recorded samples; NaN where |h| is below
/// h_min or the sample sits in the separatrix band.
inline std::vector<double> action_series(const SlowFastSystem& s, const Trajectory& tr,
                                         const NumericOptions& opt = {}) {
  std::vector<double> j(tr.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < tr.size(); ++i) {
    if (tr.nu[i] == kSeparatrixBand || std::abs(tr.h[i]) < opt.h_min) continue;
    try {
      j[i] = action(s, tr.h[i], tr.z(i), tr.nu[i], opt);
    } catch (const Error&) {
      // level line not traceable (e.g. it leaves the box): leave absent
    }
  }
  return j;
}

}  // namespace sepcross
