#pragma once

#include <cstddef>

namespace sepcross {

/// Every tunable numeric default lives here. The README mirrors this table
/// and every field is addressable from a run configuration.
struct NumericOptions {
  // unperturbed geometry
  double orbit_rtol = 3e-14;
  double orbit_atol = 1e-15;
  double separatrix_offset = 1e-7;   ///< start offset from C, units of domain scale
  double capture_radius = 1e-6;      ///< return radius around C, units of domain scale
  double h_min = 1e-10;              ///< level lines with |h| below this are refused

  // averaged flow
  double averaged_rtol = 1e-9;
  double averaged_atol = 1e-12;
  double h_switch_rel = 1e-6;        ///< asymptotic band |h| <= h_switch_rel * S3

  // full system
  double full_rtol = 1e-11;
  double full_atol = 1e-13;
  double kappa_plus = 20.0;          ///< t_minus: first time h <= kappa_plus * eps
  double kappa_minus = 20.0;         ///< t_plus: first time h <= -kappa_minus * eps
  double section_radius_factor = 0.5;  ///< eta-section radius, fraction of min loop diameter
  double region_band = 1e-12;        ///< |E| below band * scale is "on the separatrix"

  // pseudo-crossing predictor
  double predictor_margin = 5.0;     ///< excluded margin: margin * eps^{3/2} * Theta_3
};

}  // namespace sepcross
