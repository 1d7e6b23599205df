#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>

#include <boost/math/tools/minima.hpp>

#include "sepcross/errors.hpp"
#include "sepcross/model.hpp"

namespace sepcross {

/// 2x2 symmetric matrix of second derivatives in (p, q).
struct Hessian2 {
  double pp = 0.0;
  double pq = 0.0;
  double qq = 0.0;
  [[nodiscard]] double det() const noexcept { return pp * qq - pq * pq; }
};

struct Vec2 {
  double p = 0.0;
  double q = 0.0;
  [[nodiscard]] double dot(const Vec2& o) const noexcept { return p * o.p + q * o.q; }
  [[nodiscard]] double norm() const noexcept { return std::hypot(p, q); }
};

/// Saddle point C(z) with its local frame.
///
/// xi points along the contracting principal axis of the Hessian, oriented
/// into loop 1; eta points along the expanding axis, oriented so that the
/// unperturbed flow through the ray C + s eta heads into loop 2.
struct SaddleFrame {
  SlowVector z;
  PhasePoint c;
  double omega0 = 0.0;  ///< positive eigenvalue of the linearized flow
  Hessian2 hessian;
  Vec2 xi;
  Vec2 eta;
  Vec2 unstable;  ///< unit eigenvector of the linearization for +omega0
  Vec2 stable;    ///< unit eigenvector for -omega0
  double residual = 0.0;

  [[nodiscard]] double xi_coord(double p, double q) const noexcept {
    return (p - c.p) * xi.p + (q - c.q) * xi.q;
  }
  [[nodiscard]] double eta_coord(double p, double q) const noexcept {
    return (p - c.p) * eta.p + (q - c.q) * eta.q;
  }
};

/// A non-degenerate minimum of E inside one loop.
struct WellCenter {
  PhasePoint c;
  double energy = 0.0;
};

namespace detail {

inline Hessian2 fd_hessian(const SlowFastSystem& s, double p, double q, const SlowVector& z,
                           double step) {
  const EnergyGradient gp1 = s.gradient(p + step, q, z);
  const EnergyGradient gp0 = s.gradient(p - step, q, z);
  const EnergyGradient gq1 = s.gradient(p, q + step, z);
  const EnergyGradient gq0 = s.gradient(p, q - step, z);
  Hessian2 h;
  h.pp = (gp1.dp - gp0.dp) / (2.0 * step);
  h.qq = (gq1.dq - gq0.dq) / (2.0 * step);
  h.pq = 0.25 * ((gp1.dq - gp0.dq) + (gq1.dp - gq0.dp)) / step;
  return h;
}

struct Critical {
  PhasePoint x;
  Hessian2 hess;
  double residual = 0.0;
};

/// Newton iteration for grad E = 0 from `guess`.
inline Critical newton_critical(const SlowFastSystem& s, PhasePoint x, const SlowVector& z,
                                const char* what) {
  const double scale = s.domain.scale();
  const double fd = 1e-5 * std::max(1.0, scale);
  const double tol = 1e-13 * std::max(1.0, scale);
  Critical out;
  for (int it = 0; it < 60; ++it) {
    const EnergyGradient g = s.gradient(x.p, x.q, z);
    const Hessian2 h = fd_hessian(s, x.p, x.q, z, fd);
    const double res = std::hypot(g.dp, g.dq);
    if (!std::isfinite(res)) break;
    out = Critical{x, h, res};
    if (res <= tol) return out;
    const double det = h.det();
    if (det == 0.0 || !std::isfinite(det)) break;
    const double dp = (h.qq * g.dp - h.pq * g.dq) / det;
    const double dq = (-h.pq * g.dp + h.pp * g.dq) / det;
    x.p -= dp;
    x.q -= dq;
    if (!s.domain.contains_pq(x.p, x.q)) {
      throw GeometryError(std::string(what) + ": Newton iteration left the domain");
    }
    if (std::hypot(dp, dq) <= 1e-15 * std::max(1.0, std::hypot(x.p, x.q))) {
      const EnergyGradient g2 = s.gradient(x.p, x.q, z);
      out = Critical{x, fd_hessian(s, x.p, x.q, z, fd), std::hypot(g2.dp, g2.dq)};
      return out;
    }
  }
  if (out.residual <= 1e-8 * std::max(1.0, scale)) return out;
  throw GeometryError(std::string(what) + ": Newton iteration did not converge");
}

inline Vec2 normalized(Vec2 v) {
  const double n = v.norm();
  return Vec2{v.p / n, v.q / n};
}

/// Eigenvector of the linearized flow matrix A = [[-Hpq, -Hqq], [Hpp, Hpq]]
/// for eigenvalue lambda.
inline Vec2 flow_eigenvector(const Hessian2& h, double lambda) {
  const Vec2 a{-h.qq, h.pq + lambda};
  const Vec2 b{lambda - h.pq, h.pp};
  return normalized(a.norm() >= b.norm() ? a : b);
}

/// Eigenvector of the symmetric Hessian for eigenvalue mu.
inline Vec2 hessian_eigenvector(const Hessian2& h, double mu) {
  const Vec2 a{h.pq, mu - h.pp};
  const Vec2 b{mu - h.qq, h.pq};
  return normalized(a.norm() >= b.norm() ? a : b);
}

}  // namespace detail

/// Finds the saddle point at slow value z and builds its frame.
/// Throws GeometryError when Newton fails or the critical point is not a
/// saddle.
inline SaddleFrame locate_saddle(const SlowFastSystem& s, const SlowVector& z,
                                 std::optional<PhasePoint> guess = std::nullopt) {
  if (z.size() != s.dim_z) throw PreconditionError("locate_saddle: slow vector has wrong dimension");
  if (!s.domain.contains_z(z)) {
    throw DomainError("locate_saddle: slow variable outside domain box");
  }
  const detail::Critical crit =
      detail::newton_critical(s, guess ? *guess : s.guess(z), z, "locate_saddle");
  const Hessian2 h = crit.hess;
  const double det = h.det();
  if (!(det < 0.0)) {
    throw GeometryError("locate_saddle: critical point is not a saddle (Hessian determinant " +
                        std::to_string(det) + ")");
  }
  SaddleFrame f;
  f.z = z;
  f.c = crit.x;
  f.hessian = h;
  f.residual = crit.residual;
  f.omega0 = std::sqrt(-det);
  f.unstable = detail::flow_eigenvector(h, f.omega0);
  f.stable = detail::flow_eigenvector(h, -f.omega0);

  const double mean = 0.5 * (h.pp + h.qq);
  const double rad = std::sqrt(0.25 * (h.pp - h.qq) * (h.pp - h.qq) + h.pq * h.pq);
  f.xi = detail::hessian_eigenvector(h, mean - rad);
  f.eta = detail::hessian_eigenvector(h, mean + rad);

  // xi into loop 1: probe along the contracting axis at a small distance
  const double probe = 1e-3 * s.domain.scale();
  const int side_plus = s.side(f.c.p + probe * f.xi.p, f.c.q + probe * f.xi.q, z);
  if (side_plus != 1) f.xi = Vec2{-f.xi.p, -f.xi.q};

  // eta such that the linear flow at C + eta moves toward loop 2 (xi < 0)
  const Vec2 v{-(h.pq * f.eta.p + h.qq * f.eta.q), h.pp * f.eta.p + h.pq * f.eta.q};
  if (v.dot(f.xi) > 0.0) f.eta = Vec2{-f.eta.p, -f.eta.q};
  return f;
}

/// Minimum of E inside loop `nu` (1 or 2), searched from the saddle along
/// the xi axis and polished by Newton.
inline WellCenter find_well_center(const SlowFastSystem& s, const SaddleFrame& frame, int nu) {
  if (nu != 1 && nu != 2) throw PreconditionError("find_well_center: nu must be 1 or 2");
  const Vec2 d = nu == 1 ? frame.xi : Vec2{-frame.xi.p, -frame.xi.q};
  const double scale = s.domain.scale();
  auto e_at = [&](double r) { return s.energy(frame.c.p + r * d.p, frame.c.q + r * d.q, frame.z); };
  // march outward until E turns positive again (far side of the loop)
  double r_hi = 0.0;
  const double dr = 0.01 * scale;
  for (double r = dr; r <= 4.0 * scale; r += dr) {
    if (!s.domain.contains_pq(frame.c.p + r * d.p, frame.c.q + r * d.q)) break;
    if (e_at(r) >= 0.0) {
      r_hi = r;
      break;
    }
  }
  if (r_hi == 0.0) throw GeometryError("find_well_center: loop is not closed along the xi axis");
  const auto best = boost::math::tools::brent_find_minima(e_at, 1e-6 * scale, r_hi, 40);
  const PhasePoint start{frame.c.p + best.first * d.p, frame.c.q + best.first * d.q};
  const detail::Critical crit = detail::newton_critical(s, start, frame.z, "find_well_center");
  if (!(crit.hess.det() > 0.0 && crit.hess.pp > 0.0)) {
    throw GeometryError("find_well_center: critical point inside the loop is not a minimum");
  }
  return WellCenter{crit.x, s.energy(crit.x.p, crit.x.q, frame.z)};
}

}  // namespace sepcross
