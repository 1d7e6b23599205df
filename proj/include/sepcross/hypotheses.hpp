#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "sepcross/errors.hpp"
#include "sepcross/geometry/separatrix.hpp"
#include "sepcross/model.hpp"
#include "sepcross/options.hpp"
#include "sepcross/theta.hpp"

namespace sepcross {

struct ConditionCheck {
  bool passed = true;
  double margin = 0.0;  ///< worst case over the sampled z
  std::string detail;
};

struct HypothesisReport {
  ConditionCheck saddle;      ///< non-degenerate saddle, margin = min omega0
  ConditionCheck theta;       ///< Theta_nu > 0, margin = min Theta_nu
  ConditionCheck derivatives; ///< grad E vanishes at C, margin = max |component|
  std::vector<SlowVector> samples;

  [[nodiscard]] bool passed() const noexcept { return saddle.passed && theta.passed && derivatives.passed; }
};

/// Sample points of a z-box: `per_axis` points per slow coordinate.
inline std::vector<SlowVector> sample_box(const SlowVector& lo, const SlowVector& hi, int per_axis) {
  std::vector<SlowVector> out;
  const std::size_t d = lo.size();
  if (d == 0) return {SlowVector(0)};
  std::size_t total = 1;
  for (std::size_t i = 0; i < d; ++i) total *= static_cast<std::size_t>(per_axis);
  for (std::size_t k = 0; k < total; ++k) {
    SlowVector z(d);
    std::size_t rest = k;
    for (std::size_t i = 0; i < d; ++i) {
      const auto j = static_cast<double>(rest % static_cast<std::size_t>(per_axis));
      rest /= static_cast<std::size_t>(per_axis);
      z[i] = per_axis == 1 ? 0.5 * (lo[i] + hi[i]) : lo[i] + (hi[i] - lo[i]) * j / (per_axis - 1);
    }
    out.push_back(z);
  }
  return out;
}

/// Checks the standing hypotheses on a z-box. Failures are reported, never
/// thrown.
inline HypothesisReport validate_hypotheses(const SlowFastSystem& s, const SlowVector& z_lo,
                                            const SlowVector& z_hi, const NumericOptions& opt = {},
                                            int per_axis = 5) {
  HypothesisReport r;
  r.samples = sample_box(z_lo, z_hi, per_axis);
  r.saddle.margin = std::numeric_limits<double>::infinity();
  r.theta.margin = std::numeric_limits<double>::infinity();
  r.derivatives.margin = 0.0;
  for (const SlowVector& z : r.samples) {
    SaddleFrame f;
    try {
      f = locate_saddle(s, z);
    } catch (const Error& e) {
      r.saddle.passed = false;
      r.saddle.margin = 0.0;
      r.saddle.detail = e.what();
      r.theta.passed = false;
      r.derivatives.passed = false;
      continue;
    }
    r.saddle.margin = std::min(r.saddle.margin, f.omega0);
    const EnergyGradient g = s.gradient(f.c.p, f.c.q, z);
    double worst = std::max(std::abs(g.dp), std::abs(g.dq));
    if (s.dim_z) worst = std::max(worst, g.dz.norm_inf());
    r.derivatives.margin = std::max(r.derivatives.margin, worst);
    if (worst > 1e-8 || std::abs(s.energy(f.c.p, f.c.q, z)) > 1e-12) {
      r.derivatives.passed = false;
      r.derivatives.detail = "energy or its gradient does not vanish at the saddle";
      r.theta.passed = false;
      r.theta.detail = "separatrix integrals undefined without normalization";
      continue;
    }
    try {
      const ThetaValues t = compute_theta(s, compute_separatrix(s, z, opt, f.c), opt);
      for (int nu = 1; nu <= 3; ++nu) {
        r.theta.margin = std::min(r.theta.margin, t[nu]);
        if (!(t[nu] > t.quad_error)) {
          r.theta.passed = false;
          r.theta.detail = "Theta_" + std::to_string(nu) + " is not positive";
        }
      }
    } catch (const Error& e) {
      r.theta.passed = false;
      r.theta.detail = e.what();
    }
  }
  if (!(r.saddle.margin > 0.0)) r.saddle.passed = false;
  return r;
}

inline HypothesisReport validate_hypotheses(const SlowFastSystem& s, const NumericOptions& opt = {},
                                            int per_axis = 5) {
  return validate_hypotheses(s, s.domain.z_min, s.domain.z_max, opt, per_axis);
}

}  // namespace sepcross
