#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <optional>
#include <vector>

#include <boost/math/interpolators/cardinal_cubic_b_spline.hpp>

#include "sepcross/errors.hpp"
#include "sepcross/geometry/separatrix.hpp"
#include "sepcross/model.hpp"
#include "sepcross/options.hpp"

namespace sepcross {

struct ThetaValues {
  SlowVector z;
  std::array<double, 3> theta{};  ///< Theta_1, Theta_2, Theta_3 = Theta_1 + Theta_2
  double quad_error = 0.0;

  [[nodiscard]] double operator[](int nu) const { return theta.at(static_cast<std::size_t>(nu - 1)); }
};

struct CaptureProbabilities {
  SlowVector z;
  double p1 = 0.0;
  double p2 = 0.0;
};

namespace detail {
inline ThetaValues theta_from(const SeparatrixGeometry& g) {
  ThetaValues t;
  t.z = g.frame.z;
  t.theta[0] = -g.loops[0].work_integral;
  t.theta[1] = -g.loops[1].work_integral;
  t.theta[2] = t.theta[0] + t.theta[1];
  return t;
}
}  // namespace detail

/// Separatrix fluxes Theta_nu from an already traced geometry. The error
/// estimate compares against a second trace at 1000x looser tolerance.
inline ThetaValues compute_theta(const SlowFastSystem& s, const SeparatrixGeometry& geometry,
                                 const NumericOptions& opt = {}) {
  detail::check_normalized(s, geometry.frame);
  ThetaValues t = detail::theta_from(geometry);
  const SeparatrixGeometry coarse = compute_separatrix(s, geometry.frame.z, opt, geometry.frame.c, 1e3);
  const ThetaValues tc = detail::theta_from(coarse);
  double err = 0.0;
  for (int i = 0; i < 3; ++i) {
    err = std::max(err, std::abs(t.theta[i] - tc.theta[i]));
    err = std::max(err, 1e-14 * (1.0 + std::abs(t.theta[i])));
  }
  t.quad_error = err;
  return t;
}

inline ThetaValues compute_theta(const SlowFastSystem& s, const SlowVector& z,
                                 const NumericOptions& opt = {}) {
  return compute_theta(s, compute_separatrix(s, z, opt), opt);
}

inline CaptureProbabilities capture_probability(const ThetaValues& t) {
  if (!(t.theta[2] > 0.0)) {
    throw ConditionError("capture_probability: Theta_3 = " + std::to_string(t.theta[2]) +
                         " is not positive");
  }
  CaptureProbabilities p;
  p.z = t.z;
  p.p1 = t.theta[0] / t.theta[2];
  p.p2 = t.theta[1] / t.theta[2];
  return p;
}

/// Everything the averaged flow and the predictor need about the
/// separatrix at one slow value.
struct SeparatrixData {
  SlowVector z;
  std::array<double, 3> theta{};
  std::array<double, 3> area{};
  std::array<SlowVector, 2> area_dz;  ///< dS_nu/dz for nu = 1, 2
  SlowVector f3c;                     ///< f3 at the saddle, eps = 0
  double omega0 = 0.0;
  double min_diameter = 0.0;
};

inline SeparatrixData separatrix_data(const SlowFastSystem& s, const SlowVector& z,
                                      const NumericOptions& opt = {},
                                      std::optional<PhasePoint> guess = std::nullopt) {
  const SeparatrixGeometry g = compute_separatrix(s, z, opt, guess);
  SeparatrixData d;
  d.z = z;
  const ThetaValues t = detail::theta_from(g);
  d.theta = t.theta;
  d.area = {g.area(1), g.area(2), g.area(3)};
  for (int i = 0; i < 2; ++i) {
    d.area_dz[i] = g.loops[i].ez_integral;
    d.area_dz[i] *= -1.0;
  }
  d.f3c = s.perturb(g.frame.c.p, g.frame.c.q, z, 0.0).f3;
  d.omega0 = g.frame.omega0;
  d.min_diameter = g.min_diameter();
  return d;
}

/// Separatrix data as a function of z. For one slow variable the data is
/// tabulated on a uniform grid over [z_lo, z_hi] (refined until cubic
/// spline midpoint errors drop below `tol`); elsewhere and for more slow
/// variables it is computed on demand.
class ThetaContext {
 public:
  ThetaContext(SlowFastSystem system, NumericOptions opt = {}, double z_lo = 0.0, double z_hi = 0.0,
               double tol = 1e-10)
      : system_(std::move(system)), opt_(opt) {
    if (system_.dim_z == 0) {
      constant_ = separatrix_data(system_, SlowVector(0), opt_);
    } else if (system_.dim_z == 1 && z_hi > z_lo) {
      build_table(z_lo, z_hi, tol);
    }
  }

  [[nodiscard]] const SlowFastSystem& system() const noexcept { return system_; }
  [[nodiscard]] const NumericOptions& options() const noexcept { return opt_; }
  [[nodiscard]] bool tabulated() const noexcept { return bool(table_); }
  [[nodiscard]] double table_error() const noexcept { return table_ ? table_->error : 0.0; }
  [[nodiscard]] std::size_t table_size() const noexcept { return table_ ? table_->n : 0; }

  [[nodiscard]] SeparatrixData at(const SlowVector& z) const {
    if (constant_) {
      SeparatrixData d = *constant_;
      d.z = z;
      return d;
    }
    if (table_ && z[0] >= table_->lo && z[0] <= table_->hi) return table_->eval(z);
    return separatrix_data(system_, z, opt_);
  }

  [[nodiscard]] ThetaValues theta(const SlowVector& z) const {
    const SeparatrixData d = at(z);
    ThetaValues t;
    t.z = z;
    t.theta = d.theta;
    return t;
  }

 private:
  static constexpr int kFields = 10;  // theta1, theta2, S1, S2, dS1, dS2, f3c, omega0, diameter, spare

  struct Table {
    double lo = 0.0, hi = 0.0, error = 0.0;
    std::size_t n = 0;
    std::vector<boost::math::interpolators::cardinal_cubic_b_spline<double>> splines;

    [[nodiscard]] SeparatrixData eval(const SlowVector& z) const {
      const double x = z[0];
      SeparatrixData d;
      d.z = z;
      d.theta[0] = splines[0](x);
      d.theta[1] = splines[1](x);
      d.theta[2] = d.theta[0] + d.theta[1];
      d.area[0] = splines[2](x);
      d.area[1] = splines[3](x);
      d.area[2] = d.area[0] + d.area[1];
      d.area_dz[0] = SlowVector{splines[4](x)};
      d.area_dz[1] = SlowVector{splines[5](x)};
      d.f3c = SlowVector{splines[6](x)};
      d.omega0 = splines[7](x);
      d.min_diameter = splines[8](x);
      return d;
    }
  };

  static std::array<double, kFields> pack(const SeparatrixData& d) {
    return {d.theta[0], d.theta[1], d.area[0], d.area[1], d.area_dz[0][0], d.area_dz[1][0],
            d.f3c[0],   d.omega0,   d.min_diameter, 0.0};
  }

  // end slopes from one-sided fourth-order differences
  static boost::math::interpolators::cardinal_cubic_b_spline<double> spline(const std::vector<double>& v,
                                                                             double lo, double step) {
    const std::size_t n = v.size();
    const double left = (-25 * v[0] + 48 * v[1] - 36 * v[2] + 16 * v[3] - 3 * v[4]) / (12 * step);
    const double right =
        (25 * v[n - 1] - 48 * v[n - 2] + 36 * v[n - 3] - 16 * v[n - 4] + 3 * v[n - 5]) / (12 * step);
    return {v.begin(), v.end(), lo, step, left, right};
  }

  void build_table(double lo, double hi, double tol) {
    std::size_t n = 17;
    std::vector<std::array<double, kFields>> values(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double z = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
      values[i] = pack(separatrix_data(system_, SlowVector{z}, opt_));
    }
    for (;;) {
      auto table = std::make_unique<Table>();
      table->lo = lo;
      table->hi = hi;
      table->n = n;
      const double step = (hi - lo) / static_cast<double>(n - 1);
      for (int f = 0; f < kFields; ++f) {
        std::vector<double> col(n);
        for (std::size_t i = 0; i < n; ++i) col[i] = values[i][f];
        table->splines.push_back(spline(col, lo, step));
      }
      // compare against fresh values at the midpoints
      std::vector<std::array<double, kFields>> mids(n - 1);
      double err = 0.0;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        const double z = lo + step * (static_cast<double>(i) + 0.5);
        mids[i] = pack(separatrix_data(system_, SlowVector{z}, opt_));
        const SeparatrixData interp = table->eval(SlowVector{z});
        const auto iv = pack(interp);
        for (int f = 0; f < 4; ++f) {
          err = std::max(err, std::abs(iv[f] - mids[i][f]) / (1.0 + std::abs(mids[i][f])));
        }
      }
      std::vector<std::array<double, kFields>> merged(2 * n - 1);
      for (std::size_t i = 0; i < n; ++i) merged[2 * i] = values[i];
      for (std::size_t i = 0; i + 1 < n; ++i) merged[2 * i + 1] = mids[i];
      values = std::move(merged);
      n = 2 * n - 1;
      if (err < tol || n > 1025) {
        auto fine = std::make_unique<Table>();
        fine->lo = lo;
        fine->hi = hi;
        fine->n = n;
        // the refined grid is at least as accurate as the tested one
        fine->error = err / 16.0;
        const double h = (hi - lo) / static_cast<double>(n - 1);
        for (int f = 0; f < kFields; ++f) {
          std::vector<double> col(n);
          for (std::size_t i = 0; i < n; ++i) col[i] = values[i][f];
          fine->splines.push_back(spline(col, lo, h));
        }
        table_ = std::shared_ptr<const Table>(std::move(fine));
        return;
      }
    }
  }

  SlowFastSystem system_;
  NumericOptions opt_;
  std::optional<SeparatrixData> constant_;
  std::shared_ptr<const Table> table_;
};

}  // namespace sepcross
