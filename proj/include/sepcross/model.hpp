#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <sstream>
#include <string>
#include <utility>

#include "sepcross/errors.hpp"
#include "sepcross/slow_vector.hpp"

namespace sepcross {

/// A point of the fast phase plane. Coordinates are always ordered (p, q).
struct PhasePoint {
  double p = 0.0;
  double q = 0.0;
};

/// Full state (p, q, z) of the slow-fast system.
struct FullState {
  double p = 0.0;
  double q = 0.0;
  SlowVector z;
};

struct EnergyGradient {
  double dp = 0.0;  ///< dE/dp
  double dq = 0.0;  ///< dE/dq
  SlowVector dz;    ///< dE/dz
};

/// Perturbation terms (f1, f2, f3) at a given eps.
struct Perturbation {
  double f1 = 0.0;
  double f2 = 0.0;
  SlowVector f3;
};

/// Time derivatives of the full system, named by component.
struct StateRate {
  double dp = 0.0;
  double dq = 0.0;
  SlowVector dz;
};

struct DomainBox {
  double p_min = -1.0;
  double p_max = 1.0;
  double q_min = -1.0;
  double q_max = 1.0;
  SlowVector z_min;
  SlowVector z_max;

  [[nodiscard]] bool contains_pq(double p, double q) const noexcept {
    return p >= p_min && p <= p_max && q >= q_min && q <= q_max;
  }
  [[nodiscard]] bool contains_z(const SlowVector& z) const noexcept {
    for (std::size_t i = 0; i < z.size(); ++i) {
      if (!(z[i] >= z_min[i] && z[i] <= z_max[i])) return false;
    }
    return true;
  }
  [[nodiscard]] bool contains(double p, double q, const SlowVector& z) const noexcept {
    return contains_pq(p, q) && contains_z(z);
  }
  /// Characteristic length of the fast plane.
  [[nodiscard]] double scale() const noexcept {
    return 0.5 * std::max(p_max - p_min, q_max - q_min);
  }
};

/// The slow-fast system
///   q' = dE/dp + eps f1,  p' = -dE/dq + eps f2,  z' = eps f3.
///
/// Evaluators are plain callables; the struct is a value type and safe to
/// share read-only between threads as long as the callables are pure.
/// The raw energy is shifted by `energy_shift(z)` so that E vanishes at the
/// saddle (see normalize_energy).
struct SlowFastSystem {
  using EnergyFn = std::function<double(double p, double q, const SlowVector& z)>;
  using GradientFn = std::function<EnergyGradient(double p, double q, const SlowVector& z)>;
  using PerturbationFn =
      std::function<Perturbation(double p, double q, const SlowVector& z, double eps)>;
  using SideFn = std::function<int(double p, double q, const SlowVector& z)>;
  using ShiftFn = std::function<double(const SlowVector& z)>;
  using ShiftGradientFn = std::function<SlowVector(const SlowVector& z)>;
  using GuessFn = std::function<PhasePoint(const SlowVector& z)>;

  std::string name;
  std::size_t dim_z = 0;
  EnergyFn raw_energy;
  GradientFn raw_gradient;
  PerturbationFn perturbation;
  /// Loop region (1 or 2) of a point with E < 0.
  SideFn loop_side;
  DomainBox domain;
  /// Optional normalization offset and its z-gradient.
  ShiftFn energy_shift;
  ShiftGradientFn energy_shift_gradient;
  /// Starting point for the saddle search; (0, 0) when empty.
  GuessFn saddle_guess;

  [[nodiscard]] double energy(double p, double q, const SlowVector& z) const {
    double e = raw_energy(p, q, z);
    if (energy_shift) e += energy_shift(z);
    return e;
  }

  [[nodiscard]] EnergyGradient gradient(double p, double q, const SlowVector& z) const {
    EnergyGradient g = raw_gradient(p, q, z);
    if (g.dz.size() != dim_z) g.dz = SlowVector(dim_z);
    if (energy_shift_gradient) g.dz += energy_shift_gradient(z);
    return g;
  }

  [[nodiscard]] Perturbation perturb(double p, double q, const SlowVector& z, double eps) const {
    Perturbation f = perturbation ? perturbation(p, q, z, eps) : Perturbation{};
    if (f.f3.size() != dim_z) f.f3 = SlowVector(dim_z);
    return f;
  }

  [[nodiscard]] int side(double p, double q, const SlowVector& z) const {
    return loop_side(p, q, z);
  }

  [[nodiscard]] PhasePoint guess(const SlowVector& z) const {
    return saddle_guess ? saddle_guess(z) : PhasePoint{};
  }

  [[nodiscard]] bool is_normalized_by_shift() const noexcept { return bool(energy_shift); }
};

namespace detail {
inline std::string describe(double p, double q, const SlowVector& z) {
  std::ostringstream os;
  os << "(p=" << p << ", q=" << q;
  for (std::size_t i = 0; i < z.size(); ++i) os << ", z" << i << "=" << z[i];
  os << ")";
  return os.str();
}
}  // namespace detail

/// Right-hand side of the full system at (state, eps).
inline StateRate vector_field(const SlowFastSystem& system, const FullState& state, double eps) {
  if (state.z.size() != system.dim_z) {
    throw PreconditionError("vector_field: slow vector has wrong dimension");
  }
  if (!(eps >= 0.0)) throw PreconditionError("vector_field: eps must be non-negative");
  if (!system.domain.contains(state.p, state.q, state.z)) {
    throw DomainError("vector_field: state outside domain box " +
                      detail::describe(state.p, state.q, state.z));
  }
  const EnergyGradient g = system.gradient(state.p, state.q, state.z);
  const Perturbation f = system.perturb(state.p, state.q, state.z, eps);
  StateRate r;
  r.dq = g.dp + eps * f.f1;
  r.dp = -g.dq + eps * f.f2;
  r.dz = f.f3 * eps;
  return r;
}

/// dE/dt along the perturbed flow divided by eps:
/// dE/dq f1 + dE/dp f2 + dE/dz . f3.
inline double energy_work_density(const EnergyGradient& g, const Perturbation& f) {
  return g.dq * f.f1 + g.dp * f.f2 + g.dz.dot(f.f3);
}

}  // namespace sepcross
