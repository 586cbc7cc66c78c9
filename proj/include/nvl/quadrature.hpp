#pragma once

#include <functional>
#include <span>

namespace nvl {

struct QuadratureParams {
  double rel_tol = 1e-8;
  double abs_tol = 1e-14;
  long max_points = 1L << 24;  // total evaluations of the finest tensor grid
  int initial_points = 17;     // per dimension
};

struct QuadratureResult {
  double value = 0.0;
  double error = 0.0;  // Richardson estimate
  long points = 0;
  bool converged = false;
};

// Composite trapezoid on the box prod [lo_i, hi_i], refined by doubling until
// successive levels agree; returns the Richardson-extrapolated value.
// Periodic integrands use the rectangle rule on the half-open box instead.
QuadratureResult tensor_trapezoid(std::span<const double> lo, std::span<const double> hi,
                                  const std::function<double(std::span<const double>)>& f,
                                  const QuadratureParams& params = {}, bool periodic = false);

}  // namespace nvl
