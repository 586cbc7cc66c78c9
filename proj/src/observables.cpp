#include "nvl/observables.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "nvl/errors.hpp"
#include "nvl/stats.hpp"

namespace nvl {

bool TestFunction::in_support(const Vec& x) const {
  for (int i = 0; i < dim; ++i)
    if (x[i] <= support_lo[i] || x[i] >= support_hi[i]) return false;
  return true;
}

namespace {

struct Profile1d {
  SpatialProfile kind;
  double width, plateau;

  double half_extent() const { return kind == SpatialProfile::Bump ? width : plateau + width; }
  double value(double u) const {
    if (kind == SpatialProfile::Bump) return bump1(u / width);
    return smooth_step((plateau + width - std::abs(u)) / width);
  }
  double deriv(double u) const {
    if (kind == SpatialProfile::Bump) return bump1_deriv(u / width) / width;
    const double s = u > 0 ? 1.0 : (u < 0 ? -1.0 : 0.0);
    return -s * smooth_step_deriv((plateau + width - std::abs(u)) / width) / width;
  }
};

}  // namespace

TestFunction make_test_function(int dim, const TestFunctionSpec& s) {
  if (!(s.width > 0.0) || s.plateau < 0.0) throw Error(ErrorKind::InvalidArgument, "test function width must be > 0");
  if (s.component < 0 || s.component >= dim) throw Error(ErrorKind::InvalidArgument, "velocity component out of range");
  const Profile1d prof{s.profile, s.width, s.plateau};
  const Vec c = s.center;
  const int comp = s.component;
  const double p0 = s.p0, p1 = s.p1, p2 = s.p2, vs = s.v_scale, amp = s.amplitude;

  auto spatial = [=](const Vec& x) {
    double v = amp;
    for (int i = 0; i < dim && v != 0.0; ++i) v *= prof.value(x[i] - c[i]);
    return v;
  };
  auto spatial_grad = [=](const Vec& x) {
    Vec g{};
    double vals[kMaxDim] = {1, 1, 1};
    for (int i = 0; i < dim; ++i) vals[i] = prof.value(x[i] - c[i]);
    for (int i = 0; i < dim; ++i) {
      double t = amp * prof.deriv(x[i] - c[i]);
      for (int j = 0; j < dim; ++j)
        if (j != i) t *= vals[j];
      g[i] = t;
    }
    return g;
  };
  auto speed2 = [=](const Vec& v) {
    double q = 0.0;
    for (int j = 0; j < dim; ++j) q += v[j] * v[j];
    return q;
  };
  auto gauss = [=](const Vec& v) { return vs > 0.0 ? std::exp(-0.5 * speed2(v) / (vs * vs)) : 1.0; };
  auto poly = [=](double u) { return p0 + p1 * u + p2 * u * u; };
  auto dpoly = [=](double u) { return p1 + 2.0 * p2 * u; };
  auto vel = [=](const Vec& v) { return poly(v[comp]) * gauss(v); };
  auto vel_grad = [=](const Vec& v) {
    const double G = gauss(v), P = poly(v[comp]);
    Vec g{};
    if (vs > 0.0)
      for (int j = 0; j < dim; ++j) g[j] = -P * v[j] / (vs * vs) * G;
    g[comp] += dpoly(v[comp]) * G;
    return g;
  };
  auto vel_lap = [=](const Vec& v) {
    const double G = gauss(v), P = poly(v[comp]), dP = dpoly(v[comp]);
    double l = 2.0 * p2 * G;
    if (vs > 0.0) {
      const double s2 = vs * vs;
      l += -2.0 * dP * v[comp] / s2 * G + P * (speed2(v) / (s2 * s2) - dim / s2) * G;
    }
    return l;
  };

  TestFunction tf;
  tf.dim = dim;
  tf.f = [=](const Vec& x, const Vec& v) {
    const double a = spatial(x);
    return a == 0.0 ? 0.0 : a * vel(v);
  };
  tf.grad_x = [=](const Vec& x, const Vec& v) { return spatial_grad(x) * vel(v); };
  tf.grad_v = [=](const Vec& x, const Vec& v) {
    const double a = spatial(x);
    return a == 0.0 ? Vec{} : vel_grad(v) * a;
  };
  tf.lap_v = [=](const Vec& x, const Vec& v) {
    const double a = spatial(x);
    return a == 0.0 ? 0.0 : a * vel_lap(v);
  };
  for (int i = 0; i < dim; ++i) {
    tf.support_lo[i] = c[i] - prof.half_extent();
    tf.support_hi[i] = c[i] + prof.half_extent();
  }
  tf.velocity_free = (p1 == 0.0 && p2 == 0.0 && vs <= 0.0);
  tf.description = std::string(s.profile == SpatialProfile::Bump ? "bump" : "plateau");

  // Probe points inside the support.
  const double he = prof.half_extent();
  double worst = 0.0, scale = std::abs(amp) * (1.0 + std::abs(p0) + std::abs(p1) + std::abs(p2));
  for (double fx : {0.0, 0.31, -0.57, 0.83}) {
    Vec x = c;
    for (int i = 0; i < dim; ++i) x[i] += fx * he * (i % 2 == 0 ? 1.0 : -0.7);
    const Vec v = make_vec(0.37 - fx, -0.52 + 0.2 * fx, 0.71);
    worst = std::max(worst, derivative_fd_error(tf, x, v, 1e-4 * std::min(1.0, he)));
  }
  const double tol = 1e-4 * scale / std::pow(std::min(1.0, s.width), 3) + 1e-9;
  if (!(worst <= tol)) throw Error(ErrorKind::InvalidArgument, "test function derivatives disagree with differences");
  return tf;
}

double derivative_fd_error(const TestFunction& tf, const Vec& x, const Vec& v, double h) {
  double worst = 0.0;
  const Vec gx = tf.grad_x(x, v), gv = tf.grad_v(x, v);
  double lap = 0.0;
  for (int i = 0; i < tf.dim; ++i) {
    Vec e{};
    e[i] = h;
    const double fxp = tf.f(x + e, v), fxm = tf.f(x - e, v);
    const double fvp = tf.f(x, v + e), fvm = tf.f(x, v - e), f0 = tf.f(x, v);
    worst = std::max(worst, std::abs((fxp - fxm) / (2 * h) - gx[i]));
    worst = std::max(worst, std::abs((fvp - fvm) / (2 * h) - gv[i]));
    lap += (fvp - 2 * f0 + fvm) / (h * h);
  }
  const double lap_tol_scale = 1e-2;  // second differences lose more digits
  worst = std::max(worst, lap_tol_scale * std::abs(lap - tf.lap_v(x, v)));
  return worst;
}

OuterFunction OuterFunction::constant(double c) {
  OuterFunction o;
  o.value = [c](std::span<const double>) { return c; };
  o.gradient = [](std::span<const double>, std::span<double> g) { std::fill(g.begin(), g.end(), 0.0); };
  o.hessian = [](std::span<const double>, std::span<double> H) { std::fill(H.begin(), H.end(), 0.0); };
  o.bound = std::abs(c);
  o.description = "constant";
  return o;
}

OuterFunction OuterFunction::linear(std::vector<double> c) {
  OuterFunction o;
  o.value = [c](std::span<const double> y) {
    double s = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) s += c[i] * y[i];
    return s;
  };
  o.gradient = [c](std::span<const double>, std::span<double> g) { std::copy(c.begin(), c.end(), g.begin()); };
  o.hessian = [](std::span<const double>, std::span<double> H) { std::fill(H.begin(), H.end(), 0.0); };
  o.description = "linear";
  return o;
}

OuterFunction OuterFunction::sine(std::vector<double> c, double offset) {
  OuterFunction o;
  auto arg = [c, offset](std::span<const double> y) {
    double s = offset;
    for (std::size_t i = 0; i < c.size(); ++i) s += c[i] * y[i];
    return s;
  };
  o.value = [arg](std::span<const double> y) { return std::sin(arg(y)); };
  o.gradient = [c, arg](std::span<const double> y, std::span<double> g) {
    const double t = std::cos(arg(y));
    for (std::size_t i = 0; i < c.size(); ++i) g[i] = c[i] * t;
  };
  o.hessian = [c, arg](std::span<const double> y, std::span<double> H) {
    const double t = -std::sin(arg(y));
    const std::size_t K = c.size();
    for (std::size_t i = 0; i < K; ++i)
      for (std::size_t j = 0; j < K; ++j) H[i * K + j] = c[i] * c[j] * t;
  };
  o.bound = 1.0;
  o.description = "sine";
  return o;
}

OuterFunction OuterFunction::gaussian(std::vector<double> c) {
  OuterFunction o;
  auto arg = [c](std::span<const double> y) {
    double s = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) s += c[i] * y[i];
    return s;
  };
  o.value = [arg](std::span<const double> y) {
    const double z = arg(y);
    return std::exp(-0.5 * z * z);
  };
  o.gradient = [c, arg](std::span<const double> y, std::span<double> g) {
    const double z = arg(y), e = std::exp(-0.5 * z * z);
    for (std::size_t i = 0; i < c.size(); ++i) g[i] = -z * e * c[i];
  };
  o.hessian = [c, arg](std::span<const double> y, std::span<double> H) {
    const double z = arg(y), e = std::exp(-0.5 * z * z);
    const std::size_t K = c.size();
    for (std::size_t i = 0; i < K; ++i)
      for (std::size_t j = 0; j < K; ++j) H[i * K + j] = (z * z - 1.0) * e * c[i] * c[j];
  };
  o.bound = 1.0;
  o.description = "gaussian";
  return o;
}

std::vector<double> CylinderObservable::pairings(const MarkedConfiguration& g) const {
  std::vector<double> y(inner.size(), 0.0);
  for (std::size_t l = 0; l < inner.size(); ++l)
    for (std::size_t i = 0; i < g.size(); ++i)
      if (inner[l].in_support(g.x[i])) y[l] += inner[l].f(g.x[i], g.v[i]);
  return y;
}

double CylinderObservable::operator()(const MarkedConfiguration& g) const { return outer.value(pairings(g)); }

double k_transform(const MPointFunction& f, int m, const MarkedConfiguration& g) {
  if (m < 1 || m > 3) throw Error(ErrorKind::InvalidArgument, "k_transform supports m = 1..3");
  if (g.size() > 10000) throw Error(ErrorKind::InvalidArgument, "k_transform limited to 10^4 points");
  const std::size_t n = g.size();
  Vec xs[3], vs[3];
  double s = 0.0;
  auto call = [&](int count) { return f(std::span<const Vec>(xs, count), std::span<const Vec>(vs, count)); };
  for (std::size_t i = 0; i < n; ++i) {
    xs[0] = g.x[i];
    vs[0] = g.v[i];
    if (m == 1) {
      s += call(1);
      continue;
    }
    for (std::size_t j = i + 1; j < n; ++j) {
      xs[1] = g.x[j];
      vs[1] = g.v[j];
      if (m == 2) {
        s += call(2);
        continue;
      }
      for (std::size_t k = j + 1; k < n; ++k) {
        xs[2] = g.x[k];
        vs[2] = g.v[k];
        s += call(3);
      }
    }
  }
  return s;
}

std::vector<Vec> grad_v_K(const TestFunction& f, const MarkedConfiguration& g) {
  std::vector<Vec> out(g.size());
  for (std::size_t i = 0; i < g.size(); ++i)
    if (f.in_support(g.x[i])) out[i] = f.grad_v(g.x[i], g.v[i]);
  return out;
}

namespace {

// Velocity gradients per (l, i) and the single-particle transport sums.
struct InnerData {
  std::size_t K = 0;
  std::vector<std::vector<Vec>> gv;  // [l][i]
  std::vector<double> transport;     // [l]
  std::vector<char> active;          // particle touches some support
};

InnerData collect(const CylinderObservable& F, const MarkedConfiguration& g, double kappa, double beta) {
  InnerData d;
  d.K = F.inner.size();
  d.gv.assign(d.K, std::vector<Vec>(g.size()));
  d.transport.assign(d.K, 0.0);
  d.active.assign(g.size(), 0);
  for (std::size_t l = 0; l < d.K; ++l) {
    const auto& f = F.inner[l];
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!f.in_support(g.x[i])) continue;
      const Vec& x = g.x[i];
      const Vec& v = g.v[i];
      const Vec gv = f.grad_v(x, v);
      d.gv[l][i] = gv;
      d.active[i] = 1;
      d.transport[l] += (kappa / beta) * f.lap_v(x, v) - kappa * dot(v, gv) + dot(v, f.grad_x(x, v));
    }
  }
  return d;
}

GeneratorTerms assemble(const CylinderObservable& F, const MarkedConfiguration& g, const InnerData& d,
                        std::span<const Vec> forces, double kappa, double beta) {
  GeneratorTerms t;
  if (d.K == 0) return t;
  const auto y = F.pairings(g);
  std::vector<double> G1(d.K), G2(d.K * d.K);
  F.outer.gradient(y, G1);
  F.outer.hessian(y, G2);
  for (std::size_t l = 0; l < d.K; ++l)
    for (std::size_t m = 0; m < d.K; ++m) {
      if (G2[l * d.K + m] == 0.0) continue;
      double s = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i)
        if (d.active[i]) s += dot(d.gv[l][i], d.gv[m][i]);
      t.diffusion += (kappa / beta) * G2[l * d.K + m] * s;
    }
  for (std::size_t l = 0; l < d.K; ++l) {
    t.transport += G1[l] * d.transport[l];
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (d.active[i]) s += dot(d.gv[l][i], forces[i]);
    t.interaction += G1[l] * s;
  }
  return t;
}

}  // namespace

GeneratorTerms generator_with_forces(const CylinderObservable& F, const MarkedConfiguration& g,
                                     std::span<const Vec> forces, double kappa, double beta) {
  return assemble(F, g, collect(F, g, kappa, beta), forces, kappa, beta);
}

GeneratorTerms eval_L_terms(const CylinderObservable& F, const MarkedConfiguration& g, const PotentialSpec& pot,
                            double kappa, double beta) {
  const InnerData d = collect(F, g, kappa, beta);
  std::vector<Vec> forces(g.size());
  if (!pot.identically_zero)
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!d.active[i]) continue;
      for (std::size_t j = 0; j < g.size(); ++j)
        if (j != i) forces[i] -= pot.grad_phi(g.x[i] - g.x[j]);
    }
  return assemble(F, g, d, forces, kappa, beta);
}

double eval_L(const CylinderObservable& F, const MarkedConfiguration& g, const PotentialSpec& pot, double kappa,
              double beta) {
  return eval_L_terms(F, g, pot, kappa, beta).total();
}

void check_supports_in_box(const CylinderObservable& F, const BoxGeometry& box) {
  for (const auto& f : F.inner)
    for (int i = 0; i < box.dim(); ++i)
      if (f.support_lo[i] < -box.half_side() || f.support_hi[i] > box.half_side())
        throw Error(ErrorKind::SupportTooLarge, "test function support leaves the open box");
}

GeneratorTerms eval_L_periodic_terms(const CylinderObservable& F, const MarkedConfiguration& g,
                                     const PeriodicPotential& pp, double kappa, double beta) {
  check_supports_in_box(F, pp.box());
  const InnerData d = collect(F, g, kappa, beta);
  std::vector<Vec> forces(g.size());
  if (!pp.spec().identically_zero)
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!d.active[i]) continue;
      for (std::size_t j = 0; j < g.size(); ++j)
        if (j != i) forces[i] -= pp.grad_hat_phi_lambda(pp.box().min_image_delta(g.x[i], g.x[j]));
    }
  return assemble(F, g, d, forces, kappa, beta);
}

double eval_L_periodic(const CylinderObservable& F, const MarkedConfiguration& g, const PeriodicPotential& pp,
                       double kappa, double beta) {
  return eval_L_periodic_terms(F, g, pp, kappa, beta).total();
}

double Region::volume() const {
  double v = 1.0;
  for (int i = 0; i < dim; ++i) v *= hi[i] - lo[i];
  return v;
}

Region Region::cube(int dim, double half) {
  Region r;
  r.dim = dim;
  for (int i = 0; i < dim; ++i) {
    r.lo[i] = -half;
    r.hi[i] = half;
  }
  return r;
}

QuadratureResult lp_integral(const MPointFunction& f, int m, const Intensity& intensity, const Region& domain,
                             const QuadratureParams& params) {
  if (m < 1 || m > 3) throw Error(ErrorKind::InvalidArgument, "lp_integral supports m = 1..3");
  const int d = domain.dim;
  const int D = m * d * (intensity.gaussian_velocity ? 2 : 1);
  if (D > 3 * d) throw Error(ErrorKind::InvalidArgument, "integration dimension exceeds 3d");
  std::vector<double> lo, hi;
  for (int p = 0; p < m; ++p)
    for (int i = 0; i < d; ++i) {
      lo.push_back(domain.lo[i]);
      hi.push_back(domain.hi[i]);
    }
  const double vmax = 10.0 / std::sqrt(intensity.beta);
  if (intensity.gaussian_velocity)
    for (int k = 0; k < m * d; ++k) {
      lo.push_back(-vmax);
      hi.push_back(vmax);
    }
  const double beta = intensity.beta;
  const double norm = std::pow(beta / (2.0 * std::numbers::pi), 0.5 * d);
  const bool marked = intensity.gaussian_velocity;
  auto integrand = [&](std::span<const double> z) {
    Vec xs[3]{}, vs[3]{};
    double w = 1.0;
    for (int p = 0; p < m; ++p)
      for (int i = 0; i < d; ++i) {
        xs[p][i] = z[p * d + i];
        if (marked) vs[p][i] = z[m * d + p * d + i];
      }
    if (marked)
      for (int p = 0; p < m; ++p) w *= norm * std::exp(-0.5 * beta * dot(vs[p], vs[p]));
    return w * f(std::span<const Vec>(xs, m), std::span<const Vec>(vs, m));
  };
  QuadratureResult r = tensor_trapezoid(lo, hi, integrand, params);
  const double fact = m == 1 ? 1.0 : (m == 2 ? 2.0 : 6.0);
  r.value /= fact;
  r.error /= fact;
  if (!r.converged) throw Error(ErrorKind::QuadratureNotConverged, "Lebesgue-Poisson integral did not converge");
  return r;
}

std::vector<std::vector<int>> index_classes(int m, int M, int K) {
  const int len = m * K;
  double count = std::pow(static_cast<double>(M), len);
  if (count > 5e7) throw Error(ErrorKind::InvalidArgument, "index class enumeration too large");
  std::vector<std::vector<int>> out;
  std::vector<int> a(len, 0);
  const long total = static_cast<long>(count);
  for (long c = 0; c < total; ++c) {
    long t = c;
    for (int i = 0; i < len; ++i) {
      a[i] = static_cast<int>(t % M);
      t /= M;
    }
    bool ok = true;
    for (int b = 0; b < K && ok; ++b)
      for (int i = 0; i < m && ok; ++i)
        for (int j = i + 1; j < m && ok; ++j) ok = a[b * m + i] != a[b * m + j];
    if (!ok) continue;
    std::vector<char> used(M, 0);
    for (int v : a) used[v] = 1;
    if (std::all_of(used.begin(), used.end(), [](char u) { return u != 0; })) out.push_back(a);
  }
  return out;
}

MomentReport moment_expand_check(const MPointFunction& f, int m, int K_power,
                                 std::span<const MarkedConfiguration> samples, const CorrelationOracle& rho,
                                 const Region& domain, const QuadratureParams& params) {
  if (m < 1 || m > 3 || K_power < 1 || K_power > 3)
    throw Error(ErrorKind::InvalidArgument, "moment expansion capped at m, K <= 3");
  if (m * K_power > 3) throw Error(ErrorKind::InvalidArgument, "expansion needs m K <= 3 for quadrature");
  MomentReport rep;
  rep.m = m;
  rep.K_power = K_power;
  const int d = domain.dim;
  double mfact = 1.0;
  for (int i = 2; i <= m; ++i) mfact *= i;
  for (int M = m; M <= m * K_power; ++M) {
    const auto Y = index_classes(m, M, K_power);
    if (Y.empty()) continue;
    std::vector<double> lo, hi;
    for (int p = 0; p < M; ++p)
      for (int i = 0; i < d; ++i) {
        lo.push_back(domain.lo[i]);
        hi.push_back(domain.hi[i]);
      }
    auto integrand = [&](std::span<const double> z) {
      Vec xs[9]{}, vs[9]{};
      for (int p = 0; p < M; ++p)
        for (int i = 0; i < d; ++i) xs[p][i] = z[p * d + i];
      double sum = 0.0;
      for (const auto& a : Y) {
        double prod = 1.0;
        for (int b = 0; b < K_power && prod != 0.0; ++b) {
          Vec bx[3], bv[3];
          for (int i = 0; i < m; ++i) {
            bx[i] = xs[a[b * m + i]];
            bv[i] = vs[a[b * m + i]];
          }
          prod *= f(std::span<const Vec>(bx, m), std::span<const Vec>(bv, m));
        }
        sum += prod;
      }
      if (sum == 0.0) return 0.0;
      return sum * rho(std::span<const Vec>(xs, M));
    };
    const auto r = tensor_trapezoid(lo, hi, integrand, params);
    if (!r.converged) throw Error(ErrorKind::QuadratureNotConverged, "moment expansion integral did not converge");
    double Mfact = 1.0;
    for (int i = 2; i <= M; ++i) Mfact *= i;
    const double scale = 1.0 / (std::pow(mfact, K_power) * Mfact);
    rep.expansion += scale * r.value;
    rep.expansion_error += scale * r.error;
  }
  std::vector<double> vals;
  vals.reserve(samples.size());
  for (const auto& g : samples) vals.push_back(std::pow(k_transform(f, m, g), K_power));
  const Estimate e = batch_means(vals, 32);
  rep.empirical = e.mean;
  rep.empirical_se = e.se;
  rep.discrepancy_se = e.se > 0 ? std::abs(rep.expansion - rep.empirical) / e.se : kInf;
  return rep;
}

}  // namespace nvl
