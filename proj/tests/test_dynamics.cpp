#include <cmath>

#include "doctest.h"
#include "nvl/dynamics.hpp"
#include "nvl/errors.hpp"
#include "nvl/rng.hpp"

using namespace nvl;

namespace {

ForceModel harmonic(double omega2) {
  ForceModel m;
  m.name = "harmonic";
  m.forces = [omega2](std::span<const Vec> x, std::span<Vec> out) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * (-omega2);
  };
  m.energy = [omega2](std::span<const Vec> x) {
    double e = 0.0;
    for (const auto& p : x) e += 0.5 * omega2 * dot(p, p);
    return e;
  };
  return m;
}

ForceModel free_particles() {
  ForceModel m;
  m.name = "free";
  m.forces = [](std::span<const Vec>, std::span<Vec> out) { std::fill(out.begin(), out.end(), Vec{}); };
  m.energy = [](std::span<const Vec>) { return 0.0; };
  return m;
}

// Stationary (x, v) covariance of the linear recursion one BAOAB cycle
// induces on a 1D oscillator, by iterating S <- A S A^T + b b^T.
struct Cov2 {
  double xx, xv, vv;
};

Cov2 baoab_harmonic_covariance(double omega2, double kappa, double beta, double dt) {
  const double h = 0.5 * dt, c = std::exp(-kappa * dt), s = std::sqrt((1 - c * c) / beta);
  auto map = [&](double x, double v, double xi) {
    v -= h * omega2 * x;
    x += h * v;
    v = c * v + s * xi;
    x += h * v;
    v -= h * omega2 * x;
    return std::pair{x, v};
  };
  const auto [a00, a10] = map(1, 0, 0);
  const auto [a01, a11] = map(0, 1, 0);
  const auto [b0, b1] = map(0, 0, 1);
  Cov2 S{0, 0, 0};
  for (int it = 0; it < 200000; ++it) {
    const double xx = a00 * a00 * S.xx + 2 * a00 * a01 * S.xv + a01 * a01 * S.vv + b0 * b0;
    const double xv = a00 * a10 * S.xx + (a00 * a11 + a01 * a10) * S.xv + a01 * a11 * S.vv + b0 * b1;
    const double vv = a10 * a10 * S.xx + 2 * a10 * a11 * S.xv + a11 * a11 * S.vv + b1 * b1;
    const bool done = std::abs(vv - S.vv) < 1e-15 && std::abs(xx - S.xx) < 1e-15;
    S = {xx, xv, vv};
    if (done) break;
  }
  return S;
}

GibbsEnsemble gaussian_ensemble(int dim, double lam, std::size_t samples, double x_sd, std::uint64_t seed) {
  GibbsEnsemble ens;
  ens.spec.N = 1;
  ens.spec.box = BoxGeometry(dim, lam);
  ens.spec.pot = make_ideal_gas(dim);
  CounterRng rng(seed, 0);
  for (std::size_t i = 0; i < samples; ++i) {
    MarkedConfiguration g;
    g.dim = dim;
    Vec x{}, v{};
    for (int k = 0; k < dim; ++k) {
      x[k] = x_sd > 0 ? x_sd * rng.normal() : rng.uniform(-lam, lam);
      v[k] = rng.normal();
    }
    g.add(x, v);
    ens.samples.push_back(g);
  }
  return ens;
}

}  // namespace

TEST_CASE("OU step is the exact transition: means and variances compose") {
  const double kappa = 1.3, beta = 2.0;
  const double zero[3] = {0, 0, 0}, one[3] = {1, 1, 1};
  const Vec v = make_vec(0.7, -1.1);
  const Vec m = ou_step(v, 2, kappa, beta, 0.4, zero);
  CHECK(m[0] == doctest::Approx(0.7 * std::exp(-0.52)).epsilon(1e-15));
  CHECK(m[2] == 0.0);
  const double s = ou_step(Vec{}, 1, kappa, beta, 0.4, one)[0];
  CHECK(s * s == doctest::Approx((1 - std::exp(-2 * kappa * 0.4)) / beta).epsilon(1e-14));
  // Two steps of 0.15 and 0.25 equal one of 0.4 in law.
  const double c1 = ou_step(make_vec(1.0), 1, kappa, beta, 0.15, zero)[0];
  const double c2 = ou_step(make_vec(1.0), 1, kappa, beta, 0.25, zero)[0];
  const double s1 = ou_step(Vec{}, 1, kappa, beta, 0.15, one)[0];
  const double s2 = ou_step(Vec{}, 1, kappa, beta, 0.25, one)[0];
  CHECK(c1 * c2 == doctest::Approx(std::exp(-kappa * 0.4)).epsilon(1e-14));
  CHECK(s1 * s1 * c2 * c2 + s2 * s2 == doctest::Approx(s * s).epsilon(1e-13));
}

TEST_CASE("free-particle velocities: stationary variance and exponential autocovariance") {
  DynamicsParams p;
  p.kappa = 0.8;
  p.beta = 2.0;
  p.dt = 0.05;
  p.seed = 99;
  const BoxGeometry box(1, 3.0);
  const auto model = free_particles();
  const std::size_t S = 20000;
  const auto ens = gaussian_ensemble(1, 3.0, S, 0.0, 5);
  double c0 = 0, c1 = 0, v_end = 0;
  const long steps = 20;  // t = 1
  for (std::size_t i = 0; i < S; ++i) {
    auto g = ens.samples[i];
    g.v[0][0] /= std::sqrt(p.beta);
    DynamicsState st = make_state(g, model, box);
    const double v0 = st.g.v[0][0];
    evolve(st, model, box, p, static_cast<std::uint32_t>(i), steps, nullptr);
    c0 += v0 * v0;
    c1 += v0 * st.g.v[0][0];
    v_end += st.g.v[0][0] * st.g.v[0][0];
  }
  c0 /= S;
  c1 /= S;
  v_end /= S;
  // SE of a variance estimate from 2e4 normals is about 1%.
  CHECK(v_end * p.beta == doctest::Approx(1.0).epsilon(0.04));
  CHECK(c1 * p.beta == doctest::Approx(std::exp(-p.kappa * 1.0)).epsilon(0.05));
  CHECK(c0 * p.beta == doctest::Approx(1.0).epsilon(0.04));
}

TEST_CASE("BAOAB is reproducible, keyed by chain and wraps into the box") {
  DynamicsParams p;
  p.dt = 0.1;
  p.t_end = 5.0;
  p.seed = 3;
  const BoxGeometry box(2, 1.0);
  MarkedConfiguration g;
  g.dim = 2;
  g.add(make_vec(0.2, 0.9), make_vec(7.0, -5.0));
  g.add(make_vec(-0.5, 0.1), make_vec(0.0, 3.0));
  const auto model = free_particles();
  const double times[] = {0.0, 1.0, 2.03, 5.0};
  const auto a = run_trajectory(g, model, box, p, times);
  const auto b = run_trajectory(g, model, box, p, times);
  const auto c = run_trajectory(g, model, box, p, times, 1);
  REQUIRE(a.states.size() == 4);
  CHECK(a.states == b.states);
  CHECK(a.states.back() != c.states.back());
  CHECK(a.states.front() == g);
  CHECK(a.max_snap_error == doctest::Approx(0.03).epsilon(1e-9));
  for (const auto& st : a.states)
    for (const auto& x : st.x)
      for (int k = 0; k < 2; ++k) {
        CHECK(x[k] > -1.0);
        CHECK(x[k] <= 1.0);
      }
}

TEST_CASE("force blow-up is reported instead of integrated") {
  ForceModel m;
  m.forces = [](std::span<const Vec>, std::span<Vec> out) { std::fill(out.begin(), out.end(), make_vec(1e6)); };
  m.energy = [](std::span<const Vec>) { return 0.0; };
  DynamicsParams p;
  p.dt = 0.01;
  MarkedConfiguration g;
  g.add(make_vec(0.0), make_vec(0.0));
  try {
    run_trajectory(g, m, BoxGeometry(1, 2.0), p, {});
    FAIL("expected ForceBlowup");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ForceBlowup);
  }
  p.dt = -1.0;
  CHECK_THROWS_AS(p.validate(), Error);
  p.dt = 0.2;
  CHECK_FALSE(p.stability_advisory_ok());
}

TEST_CASE("harmonic oscillator: positions exact, kinetic bias matches the linear-recursion oracle") {
  const double omega2 = 1.0;
  for (double dt : {0.4, 0.7}) {
    const auto S = baoab_harmonic_covariance(omega2, 1.0, 1.0, dt);
    // BAOAB leaves the configurational variance exact on a harmonic well.
    CHECK(S.xx == doctest::Approx(1.0).epsilon(1e-10));
    DynamicsParams p;
    p.dt = dt;
    p.seed = 12;
    const auto ens = gaussian_ensemble(1, 1e3, 256, 1.0, 8);
    const auto bias = kinetic_bias(ens, harmonic(omega2), p, 200, 4000);
    CHECK(std::abs(bias.mean - (S.vv - 1.0)) < 4.0 * bias.se);
    CHECK(std::abs(S.vv - 1.0) > 4.0 * bias.se);
  }
}

TEST_CASE("coupled weak-error increments match the oscillator oracle") {
  const double dt = 0.4;
  const double want = baoab_harmonic_covariance(1.0, 1.0, 1.0, dt).vv -
                      baoab_harmonic_covariance(1.0, 1.0, 1.0, 0.5 * dt).vv;
  DynamicsParams p;
  p.dt = dt;
  p.seed = 21;
  // Over a long horizon the time average approaches the stationary gap; the
  // initial transient costs about one relaxation time out of 2000 steps.
  const auto inc = kinetic_bias_increment(gaussian_ensemble(1, 1e3, 64, 1.0, 4), harmonic(1.0), p, 2000);
  CHECK(std::abs(inc.mean - want) < 4.0 * inc.se + 0.02 * std::abs(want));
  CHECK(inc.se < 0.1 * std::abs(want));
  CHECK_THROWS_AS(kinetic_bias_increment(gaussian_ensemble(1, 1e3, 4, 1.0, 4), harmonic(1.0), p, 0), Error);
}

TEST_CASE("bias slope accepts second order and rejects sign changes") {
  const std::vector<double> dts = {0.1, 0.05, 0.025};
  std::vector<Estimate> quad, first, flip;
  for (double h : dts) {
    quad.push_back({0.3 * h * h, 1e-6});
    first.push_back({0.3 * h, 1e-6});
  }
  flip = quad;
  flip[2].mean = -flip[2].mean;
  const auto a = bias_slope(dts, quad);
  CHECK(a.slope == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(a.pass);
  CHECK_FALSE(bias_slope(dts, first).pass);
  CHECK_FALSE(bias_slope(dts, flip).pass);
  CHECK_THROWS_AS(bias_slope({0.1}, {quad[0]}), Error);
}

TEST_CASE("periodic lift collects every image inside the window") {
  const BoxGeometry box(1, 1.0);
  MarkedConfiguration g;
  g.add(make_vec(0.5), make_vec(0.3));
  Region w;
  w.lo = make_vec(-3.0);
  w.hi = make_vec(3.0);
  const auto lifted = lift_per(g, box, w);
  REQUIRE(lifted.size() == 3);
  std::vector<double> xs;
  for (const auto& x : lifted.x) xs.push_back(x[0]);
  std::sort(xs.begin(), xs.end());
  CHECK(xs[0] == doctest::Approx(-1.5));
  CHECK(xs[2] == doctest::Approx(2.5));
  CHECK(lifted.v[1][0] == 0.3);
  // Half-open windows: a point on the upper edge belongs, the lower edge does not.
  w.lo = make_vec(-1.5);
  w.hi = make_vec(2.5);
  CHECK(lift_per(g, box, w).size() == 2);
}

TEST_CASE("stationary ideal gas passes the invariance, martingale and quadratic-variation checks") {
  EnsembleSpec spec;
  spec.N = 2;
  spec.box = BoxGeometry(1, 2.0);
  spec.pot = make_ideal_gas(1);
  McmcParams mp;
  mp.burn_in_sweeps = 100;
  mp.samples = 1024;
  mp.chains = 2;
  const auto ens = sample_canonical(spec, mp, 41);
  const PeriodicPotential pp(spec.pot, spec.box);
  const auto model = periodic_force_model(pp);
  DynamicsParams p;
  p.dt = 0.02;
  p.seed = 5;
  TestFunctionSpec ts;
  ts.width = 1.0;
  ts.p1 = 1.0;
  ts.v_scale = 2.0;
  const TestFunction f = make_test_function(1, ts);
  const CylinderObservable F{OuterFunction::sine({1.0}), {f}};
  const CylinderObservable obs[] = {F};
  const auto inv = check_invariance(ens, model, p, 0.5, obs);
  CHECK(inv.pass);
  CHECK(inv.comparisons.size() == 3);
  const auto mart = check_martingale(ens, F, model, p, 0.2, 0.5);
  CHECK(mart.pass);
  CHECK(mart.tested_names.size() == 3);
  const CylinderObservable one{OuterFunction::constant(2.0), {f}};
  CHECK(check_martingale(ens, one, model, p, 0.0, 0.2).max_abs_M < 1e-12);
  CHECK_THROWS_AS(check_martingale(ens, F, model, p, 0.5, 0.2), Error);
  const auto qv = check_quadratic_variation(ens, f, model, p, 0.5);
  CHECK(qv.pass);
  CHECK(qv.ratio == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("interacting LJ chain keeps the Gibbs law and its martingale") {
  EnsembleSpec spec;
  spec.N = 2;
  spec.box = BoxGeometry(1, 2.0);
  spec.pot = make_smoothed_lj(1);
  McmcParams mp;
  mp.burn_in_sweeps = 300;
  mp.samples = 1024;
  mp.chains = 2;
  // The KS critical value assumes independent draws; thin well past the energy autocorrelation.
  mp.thin_sweeps = 10;
  const auto ens = sample_canonical(spec, mp, 43);
  const auto model = periodic_force_model(PeriodicPotential(spec.pot, spec.box));
  DynamicsParams p;
  p.dt = 0.005;
  p.seed = 8;
  TestFunctionSpec ts;
  ts.center = make_vec(0.3);
  ts.width = 1.2;
  const TestFunction f = make_test_function(1, ts);
  const CylinderObservable F{OuterFunction::linear({1.0}), {f}};
  const CylinderObservable obs[] = {F};
  CHECK(check_invariance(ens, model, p, 0.5, obs).pass);
  CHECK(check_martingale(ens, F, model, p, 0.1, 0.4).pass);
}

TEST_CASE("tightness moment grows like lag^{3/2} for the ideal gas") {
  EnsembleSpec spec;
  spec.N = 4;
  spec.box = BoxGeometry(1, 2.0);
  spec.pot = make_ideal_gas(1);
  McmcParams mp;
  mp.burn_in_sweeps = 50;
  mp.samples = 1024;
  mp.chains = 1;
  const auto ens = sample_canonical(spec, mp, 2);
  DynamicsParams p;
  p.dt = 0.005;
  Region w;
  w.lo = make_vec(-2.0);
  w.hi = make_vec(2.0);
  const double lags[] = {0.02, 0.04, 0.08};
  const auto rep = tightness_moment(ens, periodic_force_model(PeriodicPotential(spec.pot, spec.box)), p,
                                    default_metric_params(1), w, 0.0, lags);
  CHECK(rep.moments.size() == 3);
  CHECK(rep.moments[0].mean < rep.moments[2].mean);
  CHECK(rep.slope >= 1.4);
  CHECK(rep.pass);
  CHECK(rep.C > 0.0);
  CHECK_THROWS_AS(tightness_moment(ens, periodic_force_model(PeriodicPotential(spec.pot, spec.box)), p,
                                   default_metric_params(1), w, 0.0, {}),
                  Error);
}
