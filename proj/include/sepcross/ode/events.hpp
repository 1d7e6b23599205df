#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <boost/math/tools/toms748_solve.hpp>

namespace sepcross::ode {

/// Absolute time tolerance used when refining event times.
inline constexpr double kEventTimeTolerance = 1e-12;

/// Finds the root of `g(t, y(t))` inside the last accepted step of `stepper`
/// given the values at the step ends (which must bracket a sign change).
/// The state is evaluated by dense output. Returns the event time; the state
/// at that time is written to `y_out`.
template <class Stepper, class G>
double refine_event(Stepper& stepper, G&& g, double g_prev, double g_now, std::span<double> y_out,
                    double tol = kEventTimeTolerance) {
  double a = stepper.t_prev();
  double b = stepper.t();
  if (a > b) {
    std::swap(a, b);
    std::swap(g_prev, g_now);
  }
  auto f = [&](double t) {
    stepper.dense(t, y_out);
    return g(t, std::span<const double>(y_out.data(), y_out.size()));
  };
  double root = 0.0;
  if (g_prev == 0.0) {
    root = a;
  } else if (g_now == 0.0) {
    root = b;
  } else {
    std::uintmax_t max_iter = 200;
    auto tolerance = [tol](double lo, double hi) { return std::abs(hi - lo) <= tol; };
    const auto bracket = boost::math::tools::toms748_solve(f, a, b, g_prev, g_now, tolerance, max_iter);
    root = 0.5 * (bracket.first + bracket.second);
  }
  stepper.dense(root, y_out);
  return root;
}

}  // namespace sepcross::ode
