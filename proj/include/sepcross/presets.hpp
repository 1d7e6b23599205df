#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "sepcross/errors.hpp"
#include "sepcross/model.hpp"

namespace sepcross {

using ParamMap = std::map<std::string, double>;

namespace detail {

inline double take_param(const ParamMap& params, const std::string& key, double fallback) {
  auto it = params.find(key);
  return it == params.end() ? fallback : it->second;
}

inline void reject_unknown(const std::string& preset, const ParamMap& params,
                           const std::set<std::string>& allowed) {
  for (const auto& [key, value] : params) {
    if (!allowed.count(key)) {
      throw ConfigError("preset '" + preset + "' has no parameter '" + key + "'");
    }
  }
}

inline int side_by_q(double, double q, const SlowVector&) { return q >= 0.0 ? 1 : 2; }

}  // namespace detail

/// Double well with friction: E = p^2/2 + q^4/4 - q^2/2, f2 = -gamma p.
inline SlowFastSystem make_dw_dissip(double gamma = 0.2) {
  SlowFastSystem s;
  s.name = "dw-dissip";
  s.dim_z = 0;
  s.raw_energy = [](double p, double q, const SlowVector&) {
    const double q2 = q * q;
    return 0.5 * p * p + 0.25 * q2 * q2 - 0.5 * q2;
  };
  s.raw_gradient = [](double p, double q, const SlowVector&) {
    EnergyGradient g;
    g.dp = p;
    g.dq = q * q * q - q;
    return g;
  };
  s.perturbation = [gamma](double p, double, const SlowVector&, double) {
    Perturbation f;
    f.f2 = -gamma * p;
    return f;
  };
  s.loop_side = detail::side_by_q;
  s.domain = DomainBox{-3.0, 3.0, -3.0, 3.0, SlowVector(0), SlowVector(0)};
  return s;
}

/// Double well with slowly varying depth and optional cubic asymmetry:
/// E = p^2/2 + q^4/4 + alpha q^3/3 - z q^2/2,  f2 = -gamma p,  f3 = rate.
inline SlowFastSystem make_dw_slow(double gamma = 0.0, double rate = 1.0, double alpha = 0.0) {
  SlowFastSystem s;
  s.name = alpha == 0.0 ? "dw-slow" : "dw-asym";
  s.dim_z = 1;
  s.raw_energy = [alpha](double p, double q, const SlowVector& z) {
    const double q2 = q * q;
    return 0.5 * p * p + 0.25 * q2 * q2 + alpha * q2 * q / 3.0 - 0.5 * z[0] * q2;
  };
  s.raw_gradient = [alpha](double p, double q, const SlowVector& z) {
    EnergyGradient g;
    g.dp = p;
    g.dq = q * q * q + alpha * q * q - z[0] * q;
    g.dz = SlowVector{-0.5 * q * q};
    return g;
  };
  s.perturbation = [gamma, rate](double p, double, const SlowVector&, double) {
    Perturbation f;
    f.f2 = -gamma * p;
    f.f3 = SlowVector{rate};
    return f;
  };
  s.loop_side = detail::side_by_q;
  s.domain = DomainBox{-3.0, 3.0, -3.0, 3.0, SlowVector{0.25}, SlowVector{4.0}};
  return s;
}

inline std::vector<std::string> preset_names() { return {"dw-dissip", "dw-slow", "dw-asym"}; }

/// Builds a preset by name. Unknown names or parameters raise ConfigError.
inline SlowFastSystem make_preset(const std::string& name, const ParamMap& params = {}) {
  if (name == "dw-dissip") {
    detail::reject_unknown(name, params, {"gamma"});
    return make_dw_dissip(detail::take_param(params, "gamma", 0.2));
  }
  if (name == "dw-slow") {
    detail::reject_unknown(name, params, {"gamma", "f3"});
    return make_dw_slow(detail::take_param(params, "gamma", 0.0),
                        detail::take_param(params, "f3", 1.0));
  }
  if (name == "dw-asym") {
    detail::reject_unknown(name, params, {"gamma", "f3", "alpha"});
    auto s = make_dw_slow(detail::take_param(params, "gamma", 0.0),
                          detail::take_param(params, "f3", 1.0),
                          detail::take_param(params, "alpha", 0.3));
    s.name = "dw-asym";
    // the asymmetric loop 2 reaches q ~ -3.03, p ~ 3.13 at z = 4
    s.domain.p_min = s.domain.q_min = -3.5;
    s.domain.p_max = s.domain.q_max = 3.5;
    return s;
  }
  throw ConfigError("unknown preset '" + name + "'");
}

}  // namespace sepcross
