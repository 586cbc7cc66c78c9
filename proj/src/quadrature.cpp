#include "nvl/quadrature.hpp"

#include <cmath>
#include <vector>

#include "nvl/errors.hpp"

namespace nvl {

namespace {

double grid_sum(std::span<const double> lo, std::span<const double> hi, long n,
                const std::function<double(std::span<const double>)>& f, bool periodic) {
  const std::size_t D = lo.size();
  std::vector<double> h(D), x(D);
  for (std::size_t k = 0; k < D; ++k) h[k] = (hi[k] - lo[k]) / static_cast<double>(periodic ? n : n - 1);
  long total = 1;
  for (std::size_t k = 0; k < D; ++k) total *= n;
  double s = 0.0;
  for (long c = 0; c < total; ++c) {
    long t = c;
    double w = 1.0;
    for (std::size_t k = 0; k < D; ++k) {
      const long i = t % n;
      t /= n;
      x[k] = lo[k] + h[k] * static_cast<double>(i);
      if (!periodic && (i == 0 || i == n - 1)) w *= 0.5;
    }
    const double v = f(x);
    if (v != 0.0) s += w * v;
  }
  for (std::size_t k = 0; k < D; ++k) s *= h[k];
  return s;
}

}  // namespace

QuadratureResult tensor_trapezoid(std::span<const double> lo, std::span<const double> hi,
                                  const std::function<double(std::span<const double>)>& f,
                                  const QuadratureParams& params, bool periodic) {
  if (lo.size() != hi.size() || lo.empty())
    throw Error(ErrorKind::InvalidArgument, "quadrature bounds mismatch");
  const std::size_t D = lo.size();
  auto pts = [D](long n) {
    double t = 1.0;
    for (std::size_t k = 0; k < D; ++k) t *= static_cast<double>(n);
    return t;
  };
  long n = std::max(params.initial_points, 3);
  QuadratureResult res;
  // Romberg table over grid doublings; the rectangle rule on periodic
  // integrands is already spectrally accurate and is used as is.
  std::vector<double> row{grid_sum(lo, hi, n, f, periodic)};
  res.points = static_cast<long>(pts(n));
  res.value = row[0];
  res.error = std::abs(row[0]);
  while (true) {
    const long n2 = periodic ? 2 * n : 2 * n - 1;
    if (pts(n2) > static_cast<double>(params.max_points)) break;
    std::vector<double> next{grid_sum(lo, hi, n2, f, periodic)};
    if (!periodic) {
      double factor = 4.0;
      for (std::size_t j = 0; j < row.size(); ++j, factor *= 4.0)
        next.push_back(next[j] + (next[j] - row[j]) / (factor - 1.0));
    }
    res.points = static_cast<long>(pts(n2));
    const double est = next.back();
    res.error = std::abs(est - row.back());
    res.value = est;
    row = std::move(next);
    n = n2;
    if (res.error <= params.rel_tol * std::abs(est) + params.abs_tol) {
      res.converged = true;
      return res;
    }
  }
  return res;
}

}  // namespace nvl
