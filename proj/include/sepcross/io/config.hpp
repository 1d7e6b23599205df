#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "sepcross/ensemble.hpp"
#include "sepcross/errors.hpp"
#include "sepcross/options.hpp"
#include "sepcross/presets.hpp"
#include "sepcross/slow_vector.hpp"

namespace sepcross::io {

using json = nlohmann::json;

enum class Subcommand { geometry, theta, averaged, simulate, ensemble, sweep };

inline const std::vector<std::string>& subcommand_names() {
  static const std::vector<std::string> names{"geometry", "theta", "averaged", "simulate", "ensemble", "sweep"};
  return names;
}

inline std::string to_string(Subcommand c) { return subcommand_names()[static_cast<std::size_t>(c)]; }

inline Subcommand parse_subcommand(const std::string& name) {
  const auto& n = subcommand_names();
  for (std::size_t i = 0; i < n.size(); ++i) {
    if (n[i] == name) return static_cast<Subcommand>(i);
  }
  throw ConfigError("unknown subcommand '" + name + "'");
}

/// Config key and member of every NumericOptions field.
struct NumericKey {
  const char* name;
  double NumericOptions::*member;
  const char* meaning;
};

inline const std::vector<NumericKey>& numeric_keys() {
  static const std::vector<NumericKey> keys{
      {"orbit_rtol", &NumericOptions::orbit_rtol, "relative tolerance of level-line and separatrix tracing"},
      {"orbit_atol", &NumericOptions::orbit_atol, "absolute tolerance of level-line and separatrix tracing"},
      {"separatrix_offset", &NumericOptions::separatrix_offset, "separatrix trace start offset from C (x scale)"},
      {"capture_radius", &NumericOptions::capture_radius, "separatrix trace return radius around C (x scale)"},
      {"h_min", &NumericOptions::h_min, "smallest |h| accepted for level-line quantities"},
      {"averaged_rtol", &NumericOptions::averaged_rtol, "relative tolerance of the averaged flow"},
      {"averaged_atol", &NumericOptions::averaged_atol, "absolute tolerance of the averaged flow"},
      {"h_switch_rel", &NumericOptions::h_switch_rel, "asymptotic band |h| <= h_switch_rel * S3"},
      {"full_rtol", &NumericOptions::full_rtol, "relative tolerance of the full system"},
      {"full_atol", &NumericOptions::full_atol, "absolute tolerance of the full system"},
      {"kappa_plus", &NumericOptions::kappa_plus, "t_minus threshold h = kappa_plus * eps"},
      {"kappa_minus", &NumericOptions::kappa_minus, "t_plus threshold h = -kappa_minus * eps"},
      {"section_radius_factor", &NumericOptions::section_radius_factor,
       "eta-section radius as a fraction of the smaller loop diameter"},
      {"region_band", &NumericOptions::region_band, "|E| <= region_band * scale counts as on the separatrix"},
      {"predictor_margin", &NumericOptions::predictor_margin,
       "predictor exclusion margin, units of eps^{3/2} Theta_3"},
  };
  return keys;
}

struct GeometryConfig {
  std::vector<SlowVector> z;
  std::vector<double> h{0.3, 0.1, 1e-2, 1e-3, 1e-4, -1e-4, -1e-3, -1e-2};
  bool loops = true;
};

struct ThetaConfig {
  SlowVector z;
  std::vector<SlowVector> z_grid;
};

struct AveragedConfig {
  double h0 = 0.0;
  SlowVector z0;
  int nu = 0;
  double tau_max = 0.0;
  std::optional<double> eps;
};

struct SimulateConfig {
  double p0 = 0.0;
  double q0 = 0.0;
  SlowVector z0;
  double eps = 0.0;
  double t_end = 0.0;  ///< fast time
  std::size_t stride = 1;
  double stop_after_capture = -1.0;
};

struct EnsembleConfig {
  EnsembleSpec spec;
};

struct SweepConfig {
  std::string mode = "scaling";  ///< "scaling" or "anosov"
  EnsembleSpec spec;            ///< scaling: ladder in spec.eps
  double eps0 = 0.0;            ///< anosov
  std::size_t m = 0;            ///< anosov
};

struct RunConfig {
  Subcommand command = Subcommand::theta;
  std::string preset;
  ParamMap params;
  NumericOptions numerics;
  std::uint64_t seed = 1;
  unsigned threads = 0;
  std::variant<GeometryConfig, ThetaConfig, AveragedConfig, SimulateConfig, EnsembleConfig, SweepConfig> body;
};

namespace detail {

/// Reads keys of one JSON object and rejects the ones never asked for.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  bool has(const std::string& k) {
    seen_.insert(k);
    return j_.contains(k);
  }

  const json& raw(const std::string& k) {
    if (!has(k)) throw ConfigError(where_ + ": missing key '" + k + "'");
    return j_.at(k);
  }

  double number(const std::string& k) {
    const json& v = raw(k);
    if (!v.is_number()) throw ConfigError(where_ + "." + k + ": expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ConfigError(where_ + "." + k + ": not finite");
    return x;
  }
  double number(const std::string& k, double fallback) { return has(k) ? number(k) : fallback; }

  double positive(const std::string& k) {
    const double x = number(k);
    if (!(x > 0.0)) throw ConfigError(where_ + "." + k + ": must be positive");
    return x;
  }
  double positive(const std::string& k, double fallback) { return has(k) ? positive(k) : fallback; }

  std::uint64_t count(const std::string& k) {
    const json& v = raw(k);
    if (!v.is_number_integer()) throw ConfigError(where_ + "." + k + ": expected an integer");
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    const std::int64_t x = v.get<std::int64_t>();
    if (x < 0) throw ConfigError(where_ + "." + k + ": must not be negative");
    return static_cast<std::uint64_t>(x);
  }
  std::uint64_t count(const std::string& k, std::uint64_t fallback) { return has(k) ? count(k) : fallback; }

  std::string text(const std::string& k) {
    const json& v = raw(k);
    if (!v.is_string()) throw ConfigError(where_ + "." + k + ": expected a string");
    return v.get<std::string>();
  }

  bool flag(const std::string& k, bool fallback) {
    if (!has(k)) return fallback;
    const json& v = j_.at(k);
    if (!v.is_boolean()) throw ConfigError(where_ + "." + k + ": expected true or false");
    return v.get<bool>();
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
    }
  }

  [[nodiscard]] const std::string& where() const noexcept { return where_; }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline SlowVector slow_vector(const json& v, std::size_t dim, const std::string& where) {
  SlowVector z(dim);
  if (v.is_number()) {
    if (dim != 1) throw ConfigError(where + ": scalar given for " + std::to_string(dim) + " slow variables");
    z[0] = v.get<double>();
  } else if (v.is_array()) {
    if (v.size() != dim) {
      throw ConfigError(where + ": expected " + std::to_string(dim) + " slow values, got " + std::to_string(v.size()));
    }
    for (std::size_t i = 0; i < dim; ++i) {
      if (!v[i].is_number()) throw ConfigError(where + ": expected numbers");
      z[i] = v[i].get<double>();
    }
  } else {
    throw ConfigError(where + ": expected a number or an array");
  }
  for (double x : z) {
    if (!std::isfinite(x)) throw ConfigError(where + ": not finite");
  }
  return z;
}

inline SlowVector slow_vector(Reader& r, const std::string& k, std::size_t dim) {
  if (!r.has(k)) {
    if (dim == 0) return SlowVector(0);
    throw ConfigError(r.where() + ": missing key '" + k + "'");
  }
  return slow_vector(r.raw(k), dim, r.where() + "." + k);
}

inline std::vector<SlowVector> slow_list(Reader& r, const std::string& k, std::size_t dim) {
  const json& v = r.raw(k);
  if (!v.is_array() || v.empty()) throw ConfigError(r.where() + "." + k + ": expected a non-empty array");
  std::vector<SlowVector> out;
  for (const json& x : v) out.push_back(slow_vector(x, dim, r.where() + "." + k));
  return out;
}

inline std::vector<double> number_list(Reader& r, const std::string& k) {
  const json& v = r.raw(k);
  std::vector<double> out;
  if (v.is_number()) {
    out.push_back(v.get<double>());
  } else if (v.is_array() && !v.empty()) {
    for (const json& x : v) {
      if (!x.is_number()) throw ConfigError(r.where() + "." + k + ": expected numbers");
      out.push_back(x.get<double>());
    }
  } else {
    throw ConfigError(r.where() + "." + k + ": expected a number or a non-empty array");
  }
  for (double x : out) {
    if (!std::isfinite(x)) throw ConfigError(r.where() + "." + k + ": not finite");
  }
  return out;
}

inline BasePoint base_point(Reader& r, std::size_t dim) {
  Reader b(r.raw("base_point"), r.where() + ".base_point");
  BasePoint p;
  p.p = b.number("p");
  p.q = b.number("q");
  p.z = slow_vector(b, "z", dim);
  b.finish();
  return p;
}

inline EnsembleSpec ensemble_spec(Reader& r, std::size_t dim, std::uint64_t seed, unsigned threads) {
  EnsembleSpec sp;
  sp.base = base_point(r, dim);
  sp.delta = r.positive("delta");
  sp.eps = number_list(r, "eps");
  for (double e : sp.eps) {
    if (!(e > 0.0)) throw ConfigError(r.where() + ".eps: must be positive");
    if (!(e < sp.delta * sp.delta)) throw ConfigError(r.where() + ".eps: each eps must satisfy eps < delta^2");
  }
  sp.n = r.count("N");
  if (sp.n == 0) throw ConfigError(r.where() + ".N: must be positive");
  sp.t_span = r.positive("t_span");
  sp.capture_delay = r.number("capture_delay", 0.0);
  if (sp.capture_delay < 0.0) throw ConfigError(r.where() + ".capture_delay: must not be negative");
  sp.seed = seed;
  sp.threads = threads;
  return sp;
}

}  // namespace detail

/// Validates a configuration object for `command`. Everything that can be
/// checked without integrating is checked here, so a failing config writes
/// no artifacts.
inline RunConfig parse_config(const json& j, Subcommand command) {
  detail::Reader r(j, "config");
  RunConfig c;
  c.command = command;
  if (r.has("subcommand") && r.text("subcommand") != to_string(command)) {
    throw ConfigError("config: written for subcommand '" + r.text("subcommand") + "', run as '" +
                      to_string(command) + "'");
  }
  c.preset = r.text("preset");
  if (r.has("params")) {
    const json& p = r.raw("params");
    if (!p.is_object()) throw ConfigError("config.params: expected an object");
    for (auto it = p.begin(); it != p.end(); ++it) {
      if (!it->is_number()) throw ConfigError("config.params." + it.key() + ": expected a number");
      c.params[it.key()] = it->get<double>();
    }
  }
  const SlowFastSystem system = make_preset(c.preset, c.params);  // unknown preset or parameter
  const std::size_t dim = system.dim_z;
  if (r.has("numerics")) {
    detail::Reader n(r.raw("numerics"), "config.numerics");
    for (const NumericKey& k : numeric_keys()) c.numerics.*k.member = n.positive(k.name, c.numerics.*k.member);
    n.finish();
  }
  c.seed = r.count("seed", 1);
  c.threads = static_cast<unsigned>(r.count("threads", 0));

  switch (command) {
    case Subcommand::geometry: {
      GeometryConfig g;
      if (dim == 0) {
        g.z = {SlowVector(0)};
        if (r.has("z")) g.z = detail::slow_list(r, "z", 0);
      } else {
        g.z = detail::slow_list(r, "z", dim);
      }
      if (r.has("h")) g.h = detail::number_list(r, "h");
      for (double h : g.h) {
        if (h == 0.0) throw ConfigError("config.h: energies must be non-zero");
      }
      g.loops = r.flag("loops", true);
      c.body = g;
      break;
    }
    case Subcommand::theta: {
      ThetaConfig t;
      t.z = detail::slow_vector(r, "z", dim);
      if (r.has("z_grid")) t.z_grid = detail::slow_list(r, "z_grid", dim);
      c.body = t;
      break;
    }
    case Subcommand::averaged: {
      AveragedConfig a;
      a.h0 = r.number("h0");
      a.z0 = detail::slow_vector(r, "z0", dim);
      a.nu = static_cast<int>(r.count("nu", 0));
      if (a.nu > 3) throw ConfigError("config.nu: must be 0 (automatic), 1, 2 or 3");
      if (a.h0 < 0.0 && a.nu != 1 && a.nu != 2) throw ConfigError("config.nu: h0 < 0 needs nu = 1 or 2");
      a.tau_max = r.positive("tau_max");
      if (r.has("eps")) a.eps = r.positive("eps");
      c.body = a;
      break;
    }
    case Subcommand::simulate: {
      SimulateConfig s;
      s.p0 = r.number("p0");
      s.q0 = r.number("q0");
      s.z0 = detail::slow_vector(r, "z0", dim);
      s.eps = r.number("eps");
      if (s.eps < 0.0) throw ConfigError("config.eps: must not be negative");
      const bool fast = r.has("t_end"), slow = r.has("tau_end");
      if (fast == slow) throw ConfigError("config: give exactly one of 't_end' (fast time) and 'tau_end'");
      if (fast) {
        s.t_end = r.positive("t_end");
      } else {
        if (!(s.eps > 0.0)) throw ConfigError("config.tau_end: needs eps > 0");
        s.t_end = r.positive("tau_end") / s.eps;
      }
      s.stride = r.count("stride", 1);
      if (s.stride == 0) throw ConfigError("config.stride: must be positive");
      s.stop_after_capture = r.number("stop_after_capture", -1.0);
      c.body = s;
      break;
    }
    case Subcommand::ensemble: {
      EnsembleConfig e;
      e.spec = detail::ensemble_spec(r, dim, c.seed, c.threads);
      c.body = e;
      break;
    }
    case Subcommand::sweep: {
      SweepConfig s;
      s.mode = r.has("mode") ? r.text("mode") : "scaling";
      if (s.mode == "scaling") {
        s.spec = detail::ensemble_spec(r, dim, c.seed, c.threads);
        if (s.spec.eps.size() < 4) throw ConfigError("config.eps: scaling sweep needs at least 4 values");
        if (s.spec.n < 20) throw ConfigError("config.N: scaling sweep needs at least 20 trajectories");
      } else if (s.mode == "anosov") {
        s.spec.base = detail::base_point(r, dim);
        s.spec.t_span = r.positive("t_span");
        s.spec.seed = c.seed;
        s.spec.threads = c.threads;
        s.eps0 = r.positive("eps0");
        s.m = r.count("M");
        if (s.m == 0) throw ConfigError("config.M: must be positive");
      } else {
        throw ConfigError("config.mode: expected 'scaling' or 'anosov'");
      }
      c.body = s;
      break;
    }
  }
  r.finish();
  return c;
}

inline json load_json(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config '" + path.string() + "'");
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

}  // namespace sepcross::io
