#include "nvl/configspace.hpp"

#include <algorithm>
#include <cmath>

#include "nvl/errors.hpp"

namespace nvl {

double bump1(double u) {
  const double u2 = u * u;
  if (u2 >= 1.0) return 0.0;
  return std::exp(-u2 / (1.0 - u2));
}

double bump1_deriv(double u) {
  const double u2 = u * u;
  if (u2 >= 1.0) return 0.0;
  const double w = 1.0 - u2;
  return -2.0 * u / (w * w) * std::exp(-u2 / w);
}

double bump1_deriv2(double u) {
  const double u2 = u * u;
  if (u2 >= 1.0) return 0.0;
  const double w = 1.0 - u2;
  const double q1 = 2.0 * u / (w * w);
  const double q2 = (2.0 + 6.0 * u2) / (w * w * w);
  return (q1 * q1 - q2) * std::exp(-u2 / w);
}

double smooth_step(double t) {
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  const double a = std::exp(-1.0 / t), b = std::exp(-1.0 / (1.0 - t));
  return a / (a + b);
}

double smooth_step_deriv(double t) {
  if (t <= 0.0 || t >= 1.0) return 0.0;
  const double a = std::exp(-1.0 / t), b = std::exp(-1.0 / (1.0 - t));
  const double s = a + b;
  return a * b * (1.0 / (t * t) + 1.0 / ((1.0 - t) * (1.0 - t))) / (s * s);
}

double BumpFamilyMember::spatial(const Vec& x, int dim) const {
  double f = 1.0;
  for (int i = 0; i < dim && f != 0.0; ++i) f *= bump1((x[i] - x_center[i]) / x_width);
  return f;
}

double BumpFamilyMember::value(const Vec& x, const Vec& v, int dim) const {
  double f = spatial(x, dim);
  if (!marked) return f;
  for (int i = 0; i < dim && f != 0.0; ++i) f *= bump1((v[i] - v_center[i]) / v_width);
  return f;
}

double MetricParams::I(int k, const Vec& x) const {
  double s = 1.0;
  for (int i = 0; i < dim && s != 0.0; ++i) s *= smooth_step(static_cast<double>(k) + 1.0 - std::abs(x[i]));
  return s;
}

double MetricParams::truncation_tail() const {
  double rmax = 1.0, qmax = 1.0;
  for (double x : r) rmax = std::max(rmax, x);
  for (double x : q) qmax = std::max(qmax, x);
  return std::ldexp(2.0 + rmax + qmax, -k_max);
}

double default_h(const Vec& x, int dim) { return std::pow(1.0 + dot(x, x), -static_cast<double>(dim)); }

double default_a(double s) { return s * s / (1.0 + s); }

namespace {

double radical_inverse(unsigned k, unsigned base) {
  double inv = 1.0 / base, f = inv, r = 0.0;
  while (k > 0) {
    r += f * static_cast<double>(k % base);
    k /= base;
    f *= inv;
  }
  return r;
}

}  // namespace

MetricParams default_metric_params(int dim, int k_max, double x_window, double v_window) {
  MetricParams p;
  p.dim = dim;
  p.k_max = k_max;
  const unsigned xb[3] = {2, 3, 5}, vb[3] = {7, 11, 13};
  for (int k = 1; k <= k_max; ++k) {
    const int level = static_cast<int>(std::floor(std::log2(static_cast<double>(k))));
    const double shrink = std::pow(2.0, -static_cast<double>(level) / dim);
    BumpFamilyMember m;
    for (int i = 0; i < dim; ++i) {
      m.x_center[i] = x_window * (2.0 * radical_inverse(static_cast<unsigned>(k), xb[i]) - 1.0);
      m.v_center[i] = v_window * (2.0 * radical_inverse(static_cast<unsigned>(k), vb[i]) - 1.0);
    }
    m.x_width = x_window * shrink;
    m.v_width = v_window * shrink;
    m.marked = true;
    p.f.push_back(m);
    m.marked = false;
    p.g.push_back(m);
  }
  p.h = [dim](const Vec& x) { return default_h(x, dim); };
  p.a = default_a;
  p.r.assign(k_max, 1.0);
  p.q.assign(k_max, 1.0);
  return p;
}

double pairing(const std::function<double(const Vec&, const Vec&)>& f, const MarkedConfiguration& g) {
  double s = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) s += f(g.x[i], g.v[i]);
  return s;
}

namespace {

double squash(double t) {
  t = std::abs(t);
  return std::isinf(t) ? 1.0 : t / (1.0 + t);
}

int terms(const MetricParams& p, std::size_t available) {
  return static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(p.k_max), available));
}

}  // namespace

double dist_vague_marked(const MarkedConfiguration& g1, const MarkedConfiguration& g2, const MetricParams& p) {
  double d = 0.0;
  const int K = terms(p, p.f.size());
  for (int k = 0; k < K; ++k) {
    const auto& f = p.f[k];
    double a = 0.0, b = 0.0;
    for (std::size_t i = 0; i < g1.size(); ++i) a += f.value(g1.x[i], g1.v[i], p.dim);
    for (std::size_t i = 0; i < g2.size(); ++i) b += f.value(g2.x[i], g2.v[i], p.dim);
    d += std::ldexp(squash(a - b), -(k + 1));
  }
  return d;
}

double dist_vague(std::span<const Vec> x1, std::span<const Vec> x2, const MetricParams& p) {
  double d = 0.0;
  const int K = terms(p, p.g.size());
  for (int k = 0; k < K; ++k) {
    double a = 0.0, b = 0.0;
    for (const auto& x : x1) a += p.g[k].spatial(x, p.dim);
    for (const auto& x : x2) b += p.g[k].spatial(x, p.dim);
    d += std::ldexp(squash(a - b), -(k + 1));
  }
  return d;
}

double dist_star(const MarkedConfiguration& g1, const MarkedConfiguration& g2, const MetricParams& p) {
  return dist_vague_marked(g1, g2, p) + dist_vague(g1.x, g2.x, p);
}

double S_pair(std::span<const Vec> pts, const std::function<double(double)>& Phi,
              const std::function<double(const Vec&)>& f) {
  std::vector<double> w(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) w[i] = f(pts[i]);
  double s = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (w[i] == 0.0) continue;
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      if (w[j] == 0.0) continue;
      s += std::exp(Phi(norm_max(pts[i] - pts[j]))) * w[i] * w[j];
    }
  }
  return s;
}

double S_compact(const MarkedConfiguration& g, const MetricParams& p) {
  double s = S_pair(g.x, p.Phi, p.h);
  for (std::size_t i = 0; i < g.size(); ++i) s += p.a(norm2(g.v[i])) * p.h(g.x[i]);
  return s;
}

namespace {

// S^{Phi, h I_k} for k = 1..K in one pass: the all-pairs part factorises and
// only pairs inside the range of Phi need the exponential correction.
std::vector<double> S_series(std::span<const Vec> pts, const MetricParams& p, int K) {
  const std::size_t n = pts.size();
  std::vector<double> hv(n);
  for (std::size_t i = 0; i < n; ++i) hv[i] = p.h(pts[i]);
  std::vector<std::pair<std::size_t, std::size_t>> close;
  std::vector<double> boost;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double t = norm_max(pts[i] - pts[j]);
      if (p.Phi_range > 0.0 && t >= p.Phi_range) continue;
      const double e = std::expm1(p.Phi(t));
      if (e != 0.0) {
        close.emplace_back(i, j);
        boost.push_back(e);
      }
    }
  std::vector<double> out(K, 0.0), u(n);
  for (int k = 0; k < K; ++k) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      u[i] = hv[i] * p.I(k + 1, pts[i]);
      sum += u[i];
      sq += u[i] * u[i];
    }
    double s = 0.5 * (sum * sum - sq);
    for (std::size_t c = 0; c < close.size(); ++c) s += boost[c] * u[close[c].first] * u[close[c].second];
    out[k] = s;
  }
  return out;
}

}  // namespace

double dist_phi_h(std::span<const Vec> x1, std::span<const Vec> x2, const MetricParams& p) {
  double d = dist_vague(x1, x2, p);
  const int K = p.k_max;
  const auto s1 = S_series(x1, p, K), s2 = S_series(x2, p, K);
  for (int k = 0; k < K; ++k) {
    const double rk = k < static_cast<int>(p.r.size()) ? p.r[k] : 1.0;
    d += std::ldexp(rk * squash(s1[k] - s2[k]), -(k + 1));
  }
  return d;
}

double dist_full(const MarkedConfiguration& g1, const MarkedConfiguration& g2, const MetricParams& p) {
  double d = dist_vague_marked(g1, g2, p) + dist_phi_h(g1.x, g2.x, p);
  std::vector<double> hv1(g1.size()), hv2(g2.size());
  for (std::size_t i = 0; i < g1.size(); ++i) hv1[i] = p.a(norm2(g1.v[i])) * p.h(g1.x[i]);
  for (std::size_t i = 0; i < g2.size(); ++i) hv2[i] = p.a(norm2(g2.v[i])) * p.h(g2.x[i]);
  for (int k = 0; k < p.k_max; ++k) {
    double a = 0.0, b = 0.0;
    for (std::size_t i = 0; i < g1.size(); ++i) a += hv1[i] * p.I(k + 1, g1.x[i]);
    for (std::size_t i = 0; i < g2.size(); ++i) b += hv2[i] * p.I(k + 1, g2.x[i]);
    const double qk = k < static_cast<int>(p.q.size()) ? p.q[k] : 1.0;
    d += std::ldexp(qk * squash(a - b), -(k + 1));
  }
  return d;
}

SublevelBounds sublevel_bounds(double K, double half, const MetricParams& p) {
  if (!(K >= 0.0) || !(half > 0.0)) throw Error(ErrorKind::InvalidArgument, "sublevel bound needs K >= 0, half > 0");
  // h is minimised over the window at a corner for the radial default, but
  // sample the faces to stay honest for user-supplied weights.
  double hmin = 1.0;
  const int n = 41;
  const int total = static_cast<int>(std::pow(n, p.dim));
  for (int c = 0; c < total; ++c) {
    int t = c;
    Vec x{};
    for (int i = 0; i < p.dim; ++i) {
      x[i] = -half + 2.0 * half * (t % n) / (n - 1);
      t /= n;
    }
    hmin = std::min(hmin, p.h(x));
  }
  SublevelBounds b;
  // Each pair costs at least hmin^2 (Phi >= 0) and each point a(|v|) hmin.
  b.max_count = static_cast<long>(std::floor(0.5 + std::sqrt(0.25 + 2.0 * K / (hmin * hmin))));
  const double amax = K / hmin;
  double lo = 0.0, hi = 1.0;
  while (p.a(hi) <= amax && hi < 1e12) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (p.a(mid) <= amax ? lo : hi) = mid;
  }
  b.max_speed = hi;
  return b;
}

}  // namespace nvl
