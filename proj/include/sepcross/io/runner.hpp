#pragma once

#include <cmath>
#include <filesystem>
#include <iostream>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sepcross/averaged.hpp"
#include "sepcross/ensemble.hpp"
#include "sepcross/errors.hpp"
#include "sepcross/geometry/level_orbit.hpp"
#include "sepcross/geometry/separatrix.hpp"
#include "sepcross/hypotheses.hpp"
#include "sepcross/io/config.hpp"
#include "sepcross/io/csv.hpp"
#include "sepcross/perturbed.hpp"
#include "sepcross/presets.hpp"
#include "sepcross/theta.hpp"

namespace sepcross::io {

/// Output files of one run, written only after the whole run succeeded.
struct Artifact {
  std::string name;
  std::string content;
};

namespace detail {

inline json vec(const SlowVector& z) { return json(std::vector<double>(z.begin(), z.end())); }

inline json num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

inline std::vector<std::string> z_header(std::size_t dim) {
  std::vector<std::string> h;
  for (std::size_t i = 0; i < dim; ++i) h.push_back("z" + std::to_string(i));
  return h;
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

inline json check_json(const ConditionCheck& c) {
  return json{{"passed", c.passed}, {"margin", num(c.margin)}, {"detail", c.detail}};
}

inline ThetaContext make_context(const RunConfig& c) {
  SlowFastSystem s = make_preset(c.preset, c.params);
  const double lo = s.dim_z == 1 ? s.domain.z_min[0] : 0.0;
  const double hi = s.dim_z == 1 ? s.domain.z_max[0] : 0.0;
  return ThetaContext(std::move(s), c.numerics, lo, hi);
}

inline json header_json(const RunConfig& c) {
  json p = json::object();
  for (const auto& [k, v] : c.params) p[k] = v;
  return json{{"subcommand", to_string(c.command)}, {"preset", c.preset}, {"params", p}};
}

inline std::vector<Artifact> run_geometry(const RunConfig& c, const GeometryConfig& g) {
  const SlowFastSystem s = make_preset(c.preset, c.params);
  const NumericOptions& opt = c.numerics;
  std::vector<std::string> head = z_header(s.dim_z);
  CsvTable levels;
  levels.header = head;
  for (const char* k : {"nu", "h", "T", "I", "S_nu"}) levels.header.push_back(k);
  CsvTable loops;
  loops.header = head;
  for (const char* k : {"nu", "s", "p", "q"}) loops.header.push_back(k);
  json out = header_json(c);
  out["z"] = json::array();
  for (const SlowVector& z : g.z) {
    const SeparatrixGeometry geo = compute_separatrix(s, z, opt);
    json jz{{"z", vec(z)},
            {"saddle", {{"p", geo.frame.c.p}, {"q", geo.frame.c.q}}},
            {"omega0", geo.frame.omega0},
            {"S", {geo.area(1), geo.area(2), geo.area(3)}},
            {"diameter", {geo.loops[0].diameter, geo.loops[1].diameter}}};
    json fits = json::array();
    for (int nu = 1; nu <= 3; ++nu) {
      const PeriodFit f = period_asymptotics(s, z, nu, opt);
      fits.push_back({{"nu", nu}, {"a", f.a}, {"b", f.b}, {"a_expected", f.a_expected}, {"rms", f.rms_residual}});
    }
    jz["period_fit"] = fits;
    out["z"].push_back(jz);
    for (double h : g.h) {
      const std::vector<int> regions = h > 0.0 ? std::vector<int>{3} : std::vector<int>{1, 2};
      for (int nu : regions) {
        const LevelOrbit o = level_orbit(s, h, z, nu, opt, false, false, geo.frame);
        std::vector<double> row(z.begin(), z.end());
        row.insert(row.end(), {double(nu), h, o.period, o.action, geo.area(nu)});
        levels.add(std::move(row));
      }
    }
    if (g.loops) {
      for (const SeparatrixLoop& l : geo.loops) {
        for (std::size_t i = 0; i < l.s.size(); ++i) {
          std::vector<double> row(z.begin(), z.end());
          row.insert(row.end(), {double(l.nu), l.s[i], l.p[i], l.q[i]});
          loops.add(std::move(row));
        }
      }
    }
  }
  SlowVector lo = g.z.front(), hi = g.z.front();
  for (const SlowVector& z : g.z) {
    for (std::size_t i = 0; i < z.size(); ++i) {
      lo[i] = std::min(lo[i], z[i]);
      hi[i] = std::max(hi[i], z[i]);
    }
  }
  const HypothesisReport hyp = validate_hypotheses(s, lo, hi, opt, g.z.size() > 1 ? 5 : 1);
  out["hypotheses"] = {{"passed", hyp.passed()},
                       {"saddle", check_json(hyp.saddle)},
                       {"theta", check_json(hyp.theta)},
                       {"derivatives", check_json(hyp.derivatives)}};
  std::vector<Artifact> a{{"geometry.csv", to_csv(levels)}, {"geometry.json", dump(out)}};
  if (g.loops) a.push_back({"loops.csv", to_csv(loops)});
  return a;
}

inline json theta_json(const ThetaValues& t) {
  const CaptureProbabilities p = capture_probability(t);
  return json{{"z", vec(t.z)},
              {"theta", {t.theta[0], t.theta[1], t.theta[2]}},
              {"P", {p.p1, p.p2}},
              {"quad_error", t.quad_error}};
}

inline std::vector<Artifact> run_theta(const RunConfig& c, const ThetaConfig& t) {
  const SlowFastSystem s = make_preset(c.preset, c.params);
  json out = header_json(c);
  out.update(theta_json(compute_theta(s, t.z, c.numerics)));
  std::vector<Artifact> a{{"theta.json", dump(out)}};
  if (!t.z_grid.empty()) {
    CsvTable grid;
    grid.header = z_header(s.dim_z);
    for (const char* k : {"theta1", "theta2", "theta3", "P1", "P2", "quad_error"}) grid.header.push_back(k);
    for (const SlowVector& z : t.z_grid) {
      const ThetaValues v = compute_theta(s, z, c.numerics);
      const CaptureProbabilities p = capture_probability(v);
      std::vector<double> row(z.begin(), z.end());
      row.insert(row.end(), {v.theta[0], v.theta[1], v.theta[2], p.p1, p.p2, v.quad_error});
      grid.add(std::move(row));
    }
    a.push_back({"theta_grid.csv", to_csv(grid)});
  }
  return a;
}

inline std::vector<Artifact> run_averaged(const RunConfig& c, const AveragedConfig& a) {
  const ThetaContext ctx = make_context(c);
  const std::size_t dim = ctx.system().dim_z;
  const AveragedSolution sol = integrate_averaged(ctx, AveragedInitial{a.nu, a.h0, a.z0}, a.tau_max);
  CsvTable t;
  t.header = {"tau", "nu", "H"};
  for (const auto& k : z_header(dim)) t.header.push_back(k);
  t.header.push_back("J");
  auto emit = [&](const AveragedBranch& b) {
    for (const AveragedSample& x : b.samples) {
      std::vector<double> row{x.tau, double(x.nu), x.h};
      row.insert(row.end(), x.z.begin(), x.z.end());
      row.push_back(x.j);
      t.add(std::move(row));
    }
  };
  emit(sol.pre);
  for (const AveragedBranch& b : sol.post) emit(b);
  json out = header_json(c);
  out["h0"] = a.h0;
  out["z0"] = vec(a.z0);
  out["tau_end"] = sol.tau_end;
  if (sol.crossing) {
    const CrossingRecord& r = *sol.crossing;
    json j{{"tau_star", r.tau_star},
           {"tau_error", r.tau_error},
           {"z_star", vec(r.z_star)},
           {"theta", {r.theta[0], r.theta[1], r.theta[2]}},
           {"P1", r.p1},
           {"P2", r.p2}};
    json anchor = json::array();
    for (int nu = 1; nu <= 2; ++nu) {
      const AveragedBranch& b = sol.post[static_cast<std::size_t>(nu - 1)];
      if (b.samples.empty()) continue;
      const SeparatrixData d = ctx.at(r.z_star);
      anchor.push_back({{"nu", nu},
                        {"J", num(b.samples.front().j)},
                        {"S_over_2pi", d.area[static_cast<std::size_t>(nu - 1)] / (2.0 * std::numbers::pi)}});
    }
    j["post_anchor"] = anchor;
    if (a.eps) j["t_star"] = r.tau_star / *a.eps;
    out["crossing"] = j;
  } else {
    out["crossing"] = nullptr;
  }
  return {{"averaged.csv", to_csv(t)}, {"crossing.json", dump(out)}};
}

inline json capture_json(const CaptureRecord& r) {
  return json{{"complete", r.complete},    {"destination", r.destination}, {"t_minus", num(r.t_minus)},
              {"t_plus", num(r.t_plus)},   {"h_prime", num(r.h_prime)},    {"t_prime", num(r.t_prime)},
              {"z_prime", vec(r.z_prime)}, {"predicted", r.predicted},     {"agree", r.agree},
              {"in_margin", r.in_margin}};
}

inline std::vector<Artifact> run_simulate(const RunConfig& c, const SimulateConfig& sc) {
  const ThetaContext ctx = make_context(c);
  const SlowFastSystem& s = ctx.system();
  FullControl ctl;
  ctl.stop_after_capture = sc.stop_after_capture;
  const Trajectory tr = integrate_full(s, FullState{sc.p0, sc.q0, sc.z0}, sc.eps, sc.t_end, c.numerics, ctl);
  CsvTable t;
  t.header = {"t", "p", "q"};
  for (const auto& k : z_header(s.dim_z)) t.header.push_back(k);
  t.header.push_back("h");
  t.header.push_back("nu");
  for (std::size_t i = 0; i < tr.size(); i += sc.stride) {
    std::vector<double> row{tr.t[i], tr.p(i), tr.q(i)};
    const SlowVector z = tr.z(i);
    row.insert(row.end(), z.begin(), z.end());
    row.push_back(tr.h[i]);
    row.push_back(double(tr.nu[i]));
    t.add(std::move(row));
  }
  const CaptureRecord rec = classify_capture(tr, sc.eps > 0.0 ? &ctx : nullptr);
  json out = header_json(c);
  out["eps"] = sc.eps;
  out["capture"] = capture_json(rec);
  out["events"] = tr.events.size();
  json trans = json::array();
  for (const RegionChange& r : tr.transitions) trans.push_back({{"t", r.t}, {"from", r.from}, {"to", r.to}});
  out["transitions"] = trans;
  out["t_final"] = tr.t_final;
  out["h_initial"] = tr.h_initial;
  out["h_final"] = tr.h_final;
  out["work_final"] = tr.work_final;
  out["accepted_steps"] = tr.accepted_steps;
  out["rejected_steps"] = tr.rejected_steps;
  return {{"trajectory.csv", to_csv(t)}, {"capture.json", dump(out)}};
}

inline CsvTable summary_table() {
  CsvTable t;
  t.header = {"eps", "id", "destination", "t_minus", "t_plus", "h_prime", "predicted", "in_margin", "pre_err",
              "post_err"};
  return t;
}

inline void add_summary(CsvTable& t, const TrajectorySummary& x) {
  t.add({x.eps, double(x.id), double(x.destination), x.capture.t_minus, x.capture.t_plus, x.capture.h_prime,
         double(x.capture.predicted), x.capture.in_margin ? 1.0 : 0.0, x.pre_err, x.post_err});
}

inline json spec_json(const EnsembleSpec& sp) {
  return json{{"base_point", {{"p", sp.base.p}, {"q", sp.base.q}, {"z", vec(sp.base.z)}}},
              {"delta", sp.delta},
              {"eps", sp.eps},
              {"N", sp.n},
              {"seed", sp.seed},
              {"t_span", sp.t_span}};
}

inline std::vector<Artifact> run_ensemble(const RunConfig& c, const EnsembleConfig& e) {
  const ThetaContext ctx = make_context(c);
  const EnsembleReport rep = run_capture_experiment(ctx, e.spec);
  json out = header_json(c);
  out.update(spec_json(e.spec));
  out["base"] = {{"action", rep.base.action}, {"angle", rep.base.angle}, {"h", rep.base.h}};
  out["tau_star"] = rep.tau_star;
  out["z_star"] = vec(rep.z_star);
  out["P"] = {rep.p1, rep.p2};
  CsvTable t = summary_table();
  json results = json::array();
  for (const EpsilonResult& r : rep.results) {
    json cells = json::array();
    for (const CellCounts& cc : r.cells) cells.push_back({cc.n1, cc.n2, cc.incomplete});
    json errors = json::array();
    for (const TrajectorySummary& x : r.trajectories) {
      add_summary(t, x);
      if (!x.error.empty()) errors.push_back({{"id", x.id}, {"message", x.error}});
    }
    results.push_back({{"eps", r.eps},
                       {"n1", r.n1},
                       {"n2", r.n2},
                       {"incomplete", r.incomplete},
                       {"fractions", {r.f1, r.f2}},
                       {"binomial_se", r.se1},
                       {"budget_shape", r.budget_shape},
                       {"K4_fit", r.k4},
                       {"predictor", {{"evaluated", r.predictor_evaluated},
                                      {"agree", r.predictor_agree},
                                      {"excluded", r.predictor_excluded},
                                      {"agreement", num(r.agreement)}}},
                       {"cells", cells},
                       {"errors", errors}});
  }
  out["results"] = results;
  return {{"ensemble.json", dump(out)}, {"trajectories.csv", to_csv(t)}};
}

inline std::vector<Artifact> run_sweep(const RunConfig& c, const SweepConfig& sw) {
  const ThetaContext ctx = make_context(c);
  json out = header_json(c);
  out["mode"] = sw.mode;
  CsvTable t = summary_table();
  if (sw.mode == "anosov") {
    const AnosovReport r =
        anosov_sweep(ctx, sw.spec.base, sw.eps0, sw.m, sw.spec.seed, sw.spec.t_span, sw.spec.threads);
    for (const TrajectorySummary& x : r.trajectories) add_summary(t, x);
    out.update(json{{"base_point", {{"p", sw.spec.base.p}, {"q", sw.spec.base.q}, {"z", vec(sw.spec.base.z)}}},
                    {"eps0", r.eps0},
                    {"M", r.m},
                    {"seed", sw.spec.seed},
                    {"n1", r.n1},
                    {"n2", r.n2},
                    {"incomplete", r.incomplete},
                    {"fractions", {r.f1, r.f2}},
                    {"binomial_se", r.se1},
                    {"P", {r.p1, r.p2}},
                    {"z_star", vec(r.z_star)},
                    {"diagnostic", true}});
  } else {
    const ScalingReport r = error_scaling_sweep(ctx, sw.spec);
    out.update(spec_json(sw.spec));
    json rows = json::array();
    for (const ScalingRow& row : r.rows) {
      for (const TrajectorySummary& x : row.trajectories) add_summary(t, x);
      rows.push_back({{"eps", row.eps},
                      {"used", row.used},
                      {"pre", row.pre},
                      {"post_weighted", row.post_weighted},
                      {"post_ratio", row.post_ratio}});
    }
    out["rows"] = rows;
    out["fit"] = {{"pre_slope", r.pre_slope},
                  {"pre_slope_residual", r.pre_slope_residual},
                  {"pre_constant", r.pre_constant},
                  {"post_constant", r.post_constant},
                  {"post_ratio_spread", r.post_ratio_spread}};
  }
  return {{"sweep.json", dump(out)}, {"trajectories.csv", to_csv(t)}};
}

}  // namespace detail

/// Runs one validated configuration and returns its artifacts.
inline std::vector<Artifact> execute(const RunConfig& c) {
  return std::visit(
      [&](const auto& body) -> std::vector<Artifact> {
        using T = std::decay_t<decltype(body)>;
        if constexpr (std::is_same_v<T, GeometryConfig>) return detail::run_geometry(c, body);
        if constexpr (std::is_same_v<T, ThetaConfig>) return detail::run_theta(c, body);
        if constexpr (std::is_same_v<T, AveragedConfig>) return detail::run_averaged(c, body);
        if constexpr (std::is_same_v<T, SimulateConfig>) return detail::run_simulate(c, body);
        if constexpr (std::is_same_v<T, EnsembleConfig>) return detail::run_ensemble(c, body);
        if constexpr (std::is_same_v<T, SweepConfig>) return detail::run_sweep(c, body);
      },
      c.body);
}

inline std::vector<std::filesystem::path> write_artifacts(const std::filesystem::path& dir,
                                                          const std::vector<Artifact>& files) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
  std::vector<std::filesystem::path> out;
  for (const Artifact& a : files) {
    out.push_back(dir / a.name);
    write_text(out.back(), a.content);
  }
  return out;
}

enum ExitCode : int { kExitOk = 0, kExitModel = 1, kExitConfig = 2 };

/// One JSON line on `err` describing a failure.
inline void diagnose(std::ostream& err, const char* kind, const std::string& message) {
  err << json{{"error", kind}, {"message", message}}.dump() << "\n";
}

/// Config-to-artifact driver with the CLI's exit-code contract.
inline int run(const RunConfig& c, const std::filesystem::path& out_dir, std::ostream& err = std::cerr) {
  try {
    const std::vector<Artifact> files = execute(c);
    write_artifacts(out_dir, files);
    return kExitOk;
  } catch (const ConfigError& e) {
    diagnose(err, "config", e.what());
    return kExitConfig;
  } catch (const Error& e) {
    diagnose(err, "model", e.what());
    return kExitModel;
  }
}

}  // namespace sepcross::io
