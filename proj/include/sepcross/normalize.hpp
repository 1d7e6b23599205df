#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "sepcross/errors.hpp"
#include "sepcross/geometry/saddle.hpp"
#include "sepcross/model.hpp"

namespace sepcross {

namespace detail {

struct ShiftKnot {
  double z = 0.0;
  double value = 0.0;  ///< -E(C(z), z)
  double slope = 0.0;  ///< -dE/dz at C(z)
};

/// Cubic Hermite interpolation through the knots (end cubics extend
/// outside the sampled range).
inline std::pair<double, double> hermite_shift(const std::vector<ShiftKnot>& k, double z) {
  if (k.size() == 1) return {k[0].value + k[0].slope * (z - k[0].z), k[0].slope};
  auto it = std::upper_bound(k.begin(), k.end(), z,
                             [](double v, const ShiftKnot& n) { return v < n.z; });
  std::size_t i = it == k.begin() ? 0 : static_cast<std::size_t>(it - k.begin()) - 1;
  i = std::min(i, k.size() - 2);
  const ShiftKnot& a = k[i];
  const ShiftKnot& b = k[i + 1];
  const double h = b.z - a.z;
  const double s = (z - a.z) / h;
  const double s2 = s * s, s3 = s2 * s;
  const double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s, h01 = -2 * s3 + 3 * s2,
               h11 = s3 - s2;
  const double v = h00 * a.value + h10 * h * a.slope + h01 * b.value + h11 * h * b.slope;
  const double d00 = (6 * s2 - 6 * s) / h, d10 = 3 * s2 - 4 * s + 1, d01 = (-6 * s2 + 6 * s) / h,
               d11 = 3 * s2 - 2 * s;
  const double dv = d00 * a.value + d10 * a.slope + d01 * b.value + d11 * b.slope;
  return {v, dv};
}

}  // namespace detail

/// Returns a copy of `system` whose energy vanishes at the saddle.
///
/// dim_z = 0: constant shift. dim_z = 1: cubic Hermite interpolation of
/// -E(C(z), z) through `z_samples`, using the exact slope -dE/dz at C.
/// dim_z >= 2: the saddle is located on demand at every evaluation.
inline SlowFastSystem normalize_energy(const SlowFastSystem& system,
                                       const std::vector<SlowVector>& z_samples) {
  SlowFastSystem out = system;
  const auto base = std::make_shared<const SlowFastSystem>(system);
  if (system.dim_z == 0) {
    const SaddleFrame f = locate_saddle(system, SlowVector(0));
    const double shift = -system.energy(f.c.p, f.c.q, f.z);
    if (shift == 0.0) return out;
    out.energy_shift = [base, shift](const SlowVector& z) {
      return (base->energy_shift ? base->energy_shift(z) : 0.0) + shift;
    };
    out.energy_shift_gradient = [base](const SlowVector& z) {
      return base->energy_shift_gradient ? base->energy_shift_gradient(z) : SlowVector(0);
    };
    return out;
  }
  if (system.dim_z == 1) {
    if (z_samples.empty()) throw PreconditionError("normalize_energy: no z samples");
    std::vector<detail::ShiftKnot> knots;
    bool trivial = true;
    std::optional<PhasePoint> warm;
    std::vector<SlowVector> sorted = z_samples;
    std::sort(sorted.begin(), sorted.end(),
              [](const SlowVector& a, const SlowVector& b) { return a[0] < b[0]; });
    for (const SlowVector& z : sorted) {
      if (!knots.empty() && z[0] == knots.back().z) continue;
      const SaddleFrame f = locate_saddle(system, z, warm);
      warm = f.c;
      const double e = system.energy(f.c.p, f.c.q, z);
      const double ez = system.gradient(f.c.p, f.c.q, z).dz[0];
      if (e != 0.0 || ez != 0.0) trivial = false;
      knots.push_back({z[0], -e, -ez});
    }
    if (trivial) return out;
    auto table = std::make_shared<const std::vector<detail::ShiftKnot>>(std::move(knots));
    out.energy_shift = [base, table](const SlowVector& z) {
      return (base->energy_shift ? base->energy_shift(z) : 0.0) +
             detail::hermite_shift(*table, z[0]).first;
    };
    out.energy_shift_gradient = [base, table](const SlowVector& z) {
      SlowVector g = base->energy_shift_gradient ? base->energy_shift_gradient(z) : SlowVector(1);
      g[0] += detail::hermite_shift(*table, z[0]).second;
      return g;
    };
    return out;
  }
  out.energy_shift = [base](const SlowVector& z) {
    const SaddleFrame f = locate_saddle(*base, z);
    return -base->raw_energy(f.c.p, f.c.q, z);
  };
  out.energy_shift_gradient = [base](const SlowVector& z) {
    const SaddleFrame f = locate_saddle(*base, z);
    SlowVector g = base->raw_gradient(f.c.p, f.c.q, z).dz;
    g *= -1.0;
    return g;
  };
  return out;
}

}  // namespace sepcross
