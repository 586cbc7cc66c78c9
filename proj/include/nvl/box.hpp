#pragma once

#include <cmath>

#include "nvl/errors.hpp"
#include "nvl/vec.hpp"

namespace nvl {

// The periodic cube (-lambda, lambda]^d.
class BoxGeometry {
 public:
  BoxGeometry(int dim, double half_side) : dim_(dim), half_(half_side) {
    if (dim < 1 || dim > kMaxDim) throw Error(ErrorKind::InvalidArgument, "dimension must be 1..3");
    if (!(half_side > 0.0)) throw Error(ErrorKind::InvalidArgument, "half side must be positive");
  }

  int dim() const { return dim_; }
  double half_side() const { return half_; }
  double side() const { return 2.0 * half_; }
  double volume() const { return std::pow(side(), dim_); }

  static double wrap_coord(double x, double half) {
    const double L = 2.0 * half;
    double y = x - L * std::floor((x + half) / L);  // y in [-half, half)
    if (y <= -half) y += L;                          // move -half to +half
    if (y > half) y -= L;                            // guard against rounding
    return y;
  }

  double wrap_coord(double x) const { return wrap_coord(x, half_); }

  Vec wrap(Vec x) const {
    for (int i = 0; i < dim_; ++i) x[i] = wrap_coord(x[i]);
    return x;
  }

  // Unique representative of x - y in (-lambda, lambda]^d.
  Vec min_image_delta(const Vec& x, const Vec& y) const { return wrap(x - y); }

  bool contains(const Vec& x) const {
    for (int i = 0; i < dim_; ++i)
      if (!(x[i] > -half_ && x[i] <= half_)) return false;
    return true;
  }

 private:
  int dim_;
  double half_;
};

}  // namespace nvl
