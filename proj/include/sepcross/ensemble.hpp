#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <numbers>
#include <string>
#include <thread>
#include <vector>

#include "sepcross/averaged.hpp"
#include "sepcross/errors.hpp"
#include "sepcross/geometry/level_orbit.hpp"
#include "sepcross/model.hpp"
#include "sepcross/options.hpp"
#include "sepcross/perturbed.hpp"
#include "sepcross/rng.hpp"
#include "sepcross/theta.hpp"

namespace sepcross {

/// Base point M0 of an ensemble, in the fast plane plus slow variables.
struct BasePoint {
  double p = 0.0;
  double q = 0.0;
  SlowVector z;
};

struct EnsembleSpec {
  BasePoint base;
  double delta = 0.05;
  std::vector<double> eps{1e-3};
  std::size_t n = 1000;
  std::uint64_t seed = 1;
  double t_span = 2.0;             ///< slow time; each run lasts t_span / eps
  double capture_delay = 0.0;      ///< fast time integrated past t_plus
  unsigned threads = 0;            ///< 0: hardware concurrency
};

/// One initial point of the box U^delta.
struct BoxSample {
  std::size_t id = 0;
  SlowVector z;
  double action = 0.0;
  double angle = 0.0;
  FullState initial;
  double h0 = 0.0;
  int cell = 0;  ///< sub-box 0..7 from the signs of (z - z0, I - I0, phi - phi0)
};

/// Base point expressed in (I, phi, z).
struct BaseCoordinates {
  double action = 0.0;
  double angle = 0.0;
  double h = 0.0;
  SlowVector z;
};

inline void check_spec(const SlowFastSystem& s, const EnsembleSpec& spec) {
  if (spec.base.z.size() != s.dim_z) throw PreconditionError("ensemble: base z has wrong dimension");
  if (!(spec.delta > 0.0)) throw PreconditionError("ensemble: delta must be positive");
  if (spec.n == 0) throw PreconditionError("ensemble: sample count must be positive");
  if (spec.eps.empty()) throw PreconditionError("ensemble: no eps values");
  if (!(spec.t_span > 0.0)) throw PreconditionError("ensemble: t_span must be positive");
  for (double e : spec.eps) {
    if (!(e > 0.0)) throw PreconditionError("ensemble: eps must be positive");
    if (!(e < spec.delta * spec.delta)) {
      throw PreconditionError("ensemble: eps = " + std::to_string(e) + " violates eps < delta^2 for delta = " +
                              std::to_string(spec.delta));
    }
  }
}

inline BaseCoordinates base_coordinates(const SlowFastSystem& s, const BasePoint& b, const NumericOptions& opt = {}) {
  const ActionAngle aa = to_action_angle(s, b.p, b.q, b.z, opt);
  if (aa.nu != 3) throw PreconditionError("ensemble: base point is not above the separatrix");
  return BaseCoordinates{aa.action, aa.angle, aa.h, b.z};
}

/// Draws the n points of U^delta uniformly in (z, I, phi) and maps them to
/// (p, q, z). Sample i depends only on (seed, i).
inline std::vector<BoxSample> sample_initials(const SlowFastSystem& s, const EnsembleSpec& spec,
                                              const NumericOptions& opt = {}) {
  if (spec.base.z.size() != s.dim_z) throw PreconditionError("sample_initials: base z has wrong dimension");
  if (!(spec.delta > 0.0)) throw PreconditionError("sample_initials: delta must be positive");
  const BaseCoordinates b = base_coordinates(s, spec.base, opt);
  const double d = spec.delta;
  // the z box must sit in the domain and the action box above the separatrix
  for (std::size_t i = 0; i < s.dim_z; ++i) {
    if (!(b.z[i] - d >= s.domain.z_min[i] && b.z[i] + d <= s.domain.z_max[i])) {
      throw DomainError("sample_initials: slow box leaves the domain");
    }
  }
  const std::size_t corners = std::size_t{1} << s.dim_z;
  for (std::size_t c = 0; c < corners; ++c) {
    SlowVector z = b.z;
    for (std::size_t i = 0; i < s.dim_z; ++i) z[i] += (c >> i) & 1 ? d : -d;
    const double i_sep = compute_separatrix(s, z, opt).area(3) / kTwoPi;
    if (!(b.action - d > i_sep)) throw PreconditionError("sample_initials: action box leaves region 3");
  }
  std::vector<BoxSample> out(spec.n);
  for (std::size_t k = 0; k < spec.n; ++k) {
    CounterRng rng(spec.seed, k);
    BoxSample& x = out[k];
    x.id = k;
    x.z = b.z;
    for (std::size_t i = 0; i < s.dim_z; ++i) x.z[i] += d * rng.symmetric();
    const double du = rng.symmetric();
    const double dphi = rng.symmetric();
    x.action = b.action + d * du;
    x.angle = b.angle + d * dphi;
    x.cell = (s.dim_z > 0 && x.z[0] >= b.z[0] ? 1 : 0) | (du >= 0.0 ? 2 : 0) | (dphi >= 0.0 ? 4 : 0);
  }
  return out;
}

/// Fills initial (p, q) of the samples (the costly part of sampling).
inline void map_sample(const SlowFastSystem& s, BoxSample& x, const NumericOptions& opt = {}) {
  const PhasePoint pt = from_action_angle(s, 3, x.action, x.angle, x.z, opt);
  x.initial = FullState{pt.p, pt.q, x.z};
  x.h0 = s.energy(pt.p, pt.q, x.z);
}

namespace detail {

/// Runs fn(i) for i in [0, n) on `threads` workers pulling indices from a
/// shared counter. Results must be written by index.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  unsigned w = threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : threads;
  w = static_cast<unsigned>(std::min<std::size_t>(w, std::max<std::size_t>(n, 1)));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex m;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(m);
        if (!failure) failure = std::current_exception();
        next.store(n);
        return;
      }
    }
  };
  if (w <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned k = 0; k < w; ++k) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace detail

/// Per-trajectory outcome.
struct TrajectorySummary {
  std::size_t id = 0;
  double eps = 0.0;
  int cell = 0;
  double h0 = 0.0;
  int destination = 0;  ///< 0: incomplete
  CaptureRecord capture;
  double pre_err = std::numeric_limits<double>::quiet_NaN();
  double post_err = std::numeric_limits<double>::quiet_NaN();
  std::string error;  ///< failure message for incomplete runs
};

struct CellCounts {
  std::size_t n1 = 0, n2 = 0, incomplete = 0;
};

struct EpsilonResult {
  double eps = 0.0;
  std::size_t n = 0;
  std::size_t n1 = 0, n2 = 0, incomplete = 0;
  double f1 = 0.0, f2 = 0.0;
  double se1 = 0.0;           ///< binomial standard error of f1 (at the predicted P1)
  double budget_shape = 0.0;  ///< delta + eps |ln eps| / delta
  double k4 = 0.0;            ///< |f1 - P1| / budget_shape
  std::size_t predictor_evaluated = 0;  ///< complete, with prediction, outside the margins
  std::size_t predictor_agree = 0;
  std::size_t predictor_excluded = 0;   ///< inside the endpoint margins
  double agreement = std::numeric_limits<double>::quiet_NaN();
  std::array<CellCounts, 8> cells{};
  std::vector<TrajectorySummary> trajectories;
};

struct EnsembleReport {
  BaseCoordinates base;
  double delta = 0.0;
  std::uint64_t seed = 0;
  double tau_star = 0.0;
  SlowVector z_star;
  double p1 = 0.0, p2 = 0.0;
  std::vector<EpsilonResult> results;
};

namespace detail {

inline AveragedSolution base_averaged(const ThetaContext& ctx, const BaseCoordinates& b, double t_span) {
  AveragedControl ctl;
  ctl.estimate_error = false;
  AveragedSolution sol = integrate_averaged(ctx, AveragedInitial{3, b.h, b.z}, t_span, ctl);
  if (!sol.crossing) {
    throw PreconditionError("ensemble: the averaged solution from the base point does not cross the separatrix "
                            "within t_span");
  }
  return sol;
}

inline TrajectorySummary run_capture(const ThetaContext& ctx, const BoxSample& x, double eps, double t_span,
                                     double capture_delay, double radius, bool record) {
  const SlowFastSystem& s = ctx.system();
  TrajectorySummary out;
  out.id = x.id;
  out.eps = eps;
  out.cell = x.cell;
  out.h0 = x.h0;
  FullControl ctl;
  ctl.record_samples = record;
  ctl.section_radius = radius;
  ctl.stop_after_capture = record ? -1.0 : capture_delay;
  try {
    const Trajectory tr = integrate_full(s, x.initial, eps, t_span / eps, ctx.options(), ctl);
    out.capture = classify_capture(tr, &ctx);
    if (out.capture.complete) out.destination = out.capture.destination;
  } catch (const Error& e) {
    out.error = e.what();
  }
  return out;
}

}  // namespace detail

/// Capture fractions of a box ensemble for every eps of the spec.
inline EnsembleReport run_capture_experiment(const ThetaContext& ctx, const EnsembleSpec& spec) {
  const SlowFastSystem& s = ctx.system();
  const NumericOptions& opt = ctx.options();
  check_spec(s, spec);
  EnsembleReport rep;
  rep.base = base_coordinates(s, spec.base, opt);
  rep.delta = spec.delta;
  rep.seed = spec.seed;
  const AveragedSolution avg = detail::base_averaged(ctx, rep.base, spec.t_span);
  rep.tau_star = avg.crossing->tau_star;
  rep.z_star = avg.crossing->z_star;
  rep.p1 = avg.crossing->p1;
  rep.p2 = avg.crossing->p2;

  std::vector<BoxSample> samples = sample_initials(s, spec, opt);
  std::vector<std::string> map_errors(samples.size());
  detail::parallel_for(samples.size(), spec.threads, [&](std::size_t i) {
    try {
      map_sample(s, samples[i], opt);
    } catch (const Error& e) {
      map_errors[i] = e.what();
    }
  });
  const double radius = detail::default_section_radius(s, spec.base.z, opt);

  for (double eps : spec.eps) {
    EpsilonResult r;
    r.eps = eps;
    r.n = samples.size();
    r.trajectories.resize(samples.size());
    detail::parallel_for(samples.size(), spec.threads, [&](std::size_t i) {
      if (!map_errors[i].empty()) {
        r.trajectories[i].id = i;
        r.trajectories[i].eps = eps;
        r.trajectories[i].cell = samples[i].cell;
        r.trajectories[i].error = map_errors[i];
        return;
      }
      r.trajectories[i] = detail::run_capture(ctx, samples[i], eps, spec.t_span, spec.capture_delay, radius, false);
    });
    for (const TrajectorySummary& t : r.trajectories) {
      CellCounts& c = r.cells[static_cast<std::size_t>(t.cell)];
      if (t.destination == 1) {
        ++r.n1;
        ++c.n1;
      } else if (t.destination == 2) {
        ++r.n2;
        ++c.n2;
      } else {
        ++r.incomplete;
        ++c.incomplete;
      }
      if (t.destination != 0 && t.capture.predicted != 0) {
        if (t.capture.in_margin) {
          ++r.predictor_excluded;
        } else {
          ++r.predictor_evaluated;
          if (t.capture.agree) ++r.predictor_agree;
        }
      }
    }
    const double nn = static_cast<double>(r.n);
    r.f1 = static_cast<double>(r.n1) / nn;
    r.f2 = static_cast<double>(r.n2) / nn;
    r.se1 = std::sqrt(rep.p1 * (1.0 - rep.p1) / nn);
    r.budget_shape = spec.delta + eps * std::abs(std::log(eps)) / spec.delta;
    r.k4 = std::abs(r.f1 - rep.p1) / r.budget_shape;
    if (r.predictor_evaluated > 0) {
      r.agreement = static_cast<double>(r.predictor_agree) / static_cast<double>(r.predictor_evaluated);
    }
    rep.results.push_back(std::move(r));
  }
  return rep;
}

/// Least-squares fit of |f1 - P1| = c1 delta + c2 eps |ln eps| / delta with
/// c1, c2 >= 0, plus the largest residual in units of the standard errors.
struct BudgetFit {
  double c1 = 0.0;
  double c2 = 0.0;
  double max_residual_sigma = 0.0;
};

inline BudgetFit fit_budget(const std::vector<double>& delta, const std::vector<double>& deviation,
                            const std::vector<double>& se, double eps) {
  const std::size_t m = delta.size();
  if (m == 0 || deviation.size() != m || se.size() != m) throw PreconditionError("fit_budget: size mismatch");
  const double l = eps * std::abs(std::log(eps));
  auto residual = [&](double c1, double c2) {
    double worst = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double r = (deviation[i] - (c1 * delta[i] + c2 * l / delta[i])) / se[i];
      worst = std::max(worst, std::abs(r));
      ss += r * r;
    }
    return std::pair{ss, worst};
  };
  // weighted normal equations, then the non-negative faces
  double a11 = 0, a12 = 0, a22 = 0, b1 = 0, b2 = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double w = 1.0 / (se[i] * se[i]);
    const double x1 = delta[i], x2 = l / delta[i];
    a11 += w * x1 * x1;
    a12 += w * x1 * x2;
    a22 += w * x2 * x2;
    b1 += w * x1 * deviation[i];
    b2 += w * x2 * deviation[i];
  }
  std::vector<std::pair<double, double>> cand{{0.0, 0.0}};
  const double det = a11 * a22 - a12 * a12;
  if (det > 0.0) cand.emplace_back((b1 * a22 - b2 * a12) / det, (a11 * b2 - a12 * b1) / det);
  cand.emplace_back(std::max(0.0, b1 / a11), 0.0);
  cand.emplace_back(0.0, std::max(0.0, b2 / a22));
  BudgetFit best;
  double best_ss = std::numeric_limits<double>::infinity();
  for (auto [c1, c2] : cand) {
    if (c1 < 0.0 || c2 < 0.0) continue;
    const auto [ss, worst] = residual(c1, c2);
    if (ss < best_ss) {
      best_ss = ss;
      best = BudgetFit{c1, c2, worst};
    }
  }
  return best;
}

/// Averaging error against eps for a fixed set of box samples.
struct ScalingRow {
  double eps = 0.0;
  std::size_t used = 0;
  double pre = 0.0;            ///< median pre-crossing sup error
  double post_weighted = 0.0;  ///< median weighted post-crossing sup error
  double post_ratio = 0.0;     ///< post_weighted / (eps |ln eps|)
  std::vector<TrajectorySummary> trajectories;
};

struct ScalingReport {
  std::vector<ScalingRow> rows;
  double pre_slope = 0.0;         ///< log-log slope of the pre-crossing error
  double pre_slope_residual = 0.0;
  double pre_constant = 0.0;      ///< least-squares C in pre ~ C eps
  double post_constant = 0.0;     ///< least-squares C in post ~ C eps |ln eps|
  double post_ratio_spread = 0.0;  ///< max / min of post_ratio, minus one
};

inline ScalingReport error_scaling_sweep(const ThetaContext& ctx, const EnsembleSpec& spec) {
  const SlowFastSystem& s = ctx.system();
  const NumericOptions& opt = ctx.options();
  check_spec(s, spec);
  if (spec.eps.size() < 4) throw PreconditionError("error_scaling_sweep: need at least 4 eps values");
  if (spec.n < 20) throw PreconditionError("error_scaling_sweep: need at least 20 trajectories per eps");
  std::vector<BoxSample> samples = sample_initials(s, spec, opt);
  // one averaged solution per sample, shared by the whole ladder
  std::vector<AveragedSolution> avg(samples.size());
  std::vector<std::string> errors(samples.size());
  AveragedControl actl;
  actl.estimate_error = false;
  detail::parallel_for(samples.size(), spec.threads, [&](std::size_t i) {
    try {
      map_sample(s, samples[i], opt);
      avg[i] = integrate_averaged(ctx, AveragedInitial{3, samples[i].h0, samples[i].z}, spec.t_span, actl);
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });
  const double radius = detail::default_section_radius(s, spec.base.z, opt);
  ScalingReport rep;
  for (double eps : spec.eps) {
    ScalingRow row;
    row.eps = eps;
    row.trajectories.resize(samples.size());
    detail::parallel_for(samples.size(), spec.threads, [&](std::size_t i) {
      TrajectorySummary& out = row.trajectories[i];
      out.id = i;
      out.eps = eps;
      out.cell = samples[i].cell;
      out.h0 = samples[i].h0;
      if (!errors[i].empty()) {
        out.error = errors[i];
        return;
      }
      try {
        FullControl ctl;
        ctl.section_radius = radius;
        const Trajectory tr = integrate_full(s, samples[i].initial, eps, spec.t_span / eps, opt, ctl);
        out.capture = classify_capture(tr, &ctx);
        if (!out.capture.complete || !avg[i].crossing) {
          out.error = "no crossing within t_span";
          return;
        }
        out.destination = out.capture.destination;
        const AveragingError e = compare_to_averaged(tr, avg[i], out.destination);
        out.pre_err = e.pre;
        out.post_err = e.post_weighted;
      } catch (const Error& e) {
        out.error = e.what();
        out.destination = 0;
      }
    });
    std::vector<double> pre, post;
    for (const TrajectorySummary& t : row.trajectories) {
      if (t.destination == 0) continue;
      pre.push_back(t.pre_err);
      post.push_back(t.post_err);
    }
    row.used = pre.size();
    row.pre = detail::median(pre);
    row.post_weighted = detail::median(post);
    row.post_ratio = row.post_weighted / (eps * std::abs(std::log(eps)));
    rep.rows.push_back(std::move(row));
  }
  // fits
  double sx = 0, sy = 0, sxx = 0, sxy = 0, num_pre = 0, den_pre = 0, num_post = 0, den_post = 0;
  const double m = static_cast<double>(rep.rows.size());
  double rmin = std::numeric_limits<double>::infinity(), rmax = 0.0;
  for (const ScalingRow& r : rep.rows) {
    const double x = std::log(r.eps), y = std::log(r.pre);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    num_pre += r.pre * r.eps;
    den_pre += r.eps * r.eps;
    const double l = r.eps * std::abs(std::log(r.eps));
    num_post += r.post_weighted * l;
    den_post += l * l;
    rmin = std::min(rmin, r.post_ratio);
    rmax = std::max(rmax, r.post_ratio);
  }
  rep.pre_slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  const double icpt = (sy - rep.pre_slope * sx) / m;
  double ss = 0.0;
  for (const ScalingRow& r : rep.rows) {
    const double d = std::log(r.pre) - (icpt + rep.pre_slope * std::log(r.eps));
    ss += d * d;
  }
  rep.pre_slope_residual = std::sqrt(ss / m);
  rep.pre_constant = num_pre / den_pre;
  rep.post_constant = num_post / den_post;
  rep.post_ratio_spread = rmax / rmin - 1.0;
  return rep;
}

/// Capture statistics over eps drawn uniformly in (eps0 / 2, eps0] from one
/// fixed initial point.
struct AnosovReport {
  double eps0 = 0.0;
  std::size_t m = 0;
  std::size_t n1 = 0, n2 = 0, incomplete = 0;
  double f1 = 0.0, f2 = 0.0;
  double se1 = 0.0;
  double p1 = 0.0, p2 = 0.0;
  SlowVector z_star;
  std::vector<TrajectorySummary> trajectories;
};

inline AnosovReport anosov_sweep(const ThetaContext& ctx, const BasePoint& base, double eps0, std::size_t m,
                                 std::uint64_t seed, double t_span, unsigned threads = 0) {
  const SlowFastSystem& s = ctx.system();
  const NumericOptions& opt = ctx.options();
  if (m == 0) throw PreconditionError("anosov_sweep: no eps samples requested");
  if (!(eps0 > 0.0)) throw PreconditionError("anosov_sweep: eps0 must be positive");
  AnosovReport rep;
  rep.eps0 = eps0;
  rep.m = m;
  const BaseCoordinates b = base_coordinates(s, base, opt);
  const AveragedSolution avg = detail::base_averaged(ctx, b, t_span);
  rep.p1 = avg.crossing->p1;
  rep.p2 = avg.crossing->p2;
  rep.z_star = avg.crossing->z_star;
  BoxSample x;
  x.initial = FullState{base.p, base.q, base.z};
  x.h0 = b.h;
  x.z = base.z;
  const double radius = detail::default_section_radius(s, base.z, opt);
  rep.trajectories.resize(m);
  detail::parallel_for(m, threads, [&](std::size_t i) {
    CounterRng rng(seed, i);
    const double eps = eps0 * (1.0 - 0.5 * rng.uniform());  // (eps0/2, eps0]
    BoxSample xi = x;
    xi.id = i;
    rep.trajectories[i] = detail::run_capture(ctx, xi, eps, t_span, 0.0, radius, false);
  });
  for (const TrajectorySummary& t : rep.trajectories) {
    if (t.destination == 1) {
      ++rep.n1;
    } else if (t.destination == 2) {
      ++rep.n2;
    } else {
      ++rep.incomplete;
    }
  }
  rep.f1 = static_cast<double>(rep.n1) / static_cast<double>(m);
  rep.f2 = static_cast<double>(rep.n2) / static_cast<double>(m);
  rep.se1 = std::sqrt(rep.p1 * (1.0 - rep.p1) / static_cast<double>(m));
  return rep;
}

}  // namespace sepcross
