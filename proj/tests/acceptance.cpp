// Desk-scale acceptance run: one PASS/FAIL line per criterion, details after
// the verdict. Exit status is 0 once every criterion has been evaluated;
// --strict turns any FAIL into exit status 1.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "nvl/config.hpp"
#include "nvl/errors.hpp"
#include "nvl/harness.hpp"
#include "nvl/rng.hpp"

using namespace nvl;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

EnsembleSpec lj(int dim, double lam, int N) {
  EnsembleSpec s;
  s.N = N;
  s.box = BoxGeometry(dim, lam);
  s.pot = make_smoothed_lj(dim);
  return s;
}

EnsembleSpec ideal(int dim, double lam, int N) {
  EnsembleSpec s = lj(dim, lam, N);
  s.pot = make_ideal_gas(dim);
  return s;
}

McmcParams mcmc(long samples, int chains, long thin = 1, long burn = 1000) {
  McmcParams p;
  p.burn_in_sweeps = burn;
  p.samples = samples;
  p.chains = chains;
  p.thin_sweeps = thin;
  return p;
}

const OracleParams kOracle{64, 1 << 16, 1024, 1e-9};

// ---------------------------------------------------------------------------

Verdict ideal_gas_exactness() {
  double z_err = 0.0, k_err = 0.0;
  for (int d = 1; d <= 2; ++d)
    for (double lam : {1.5, 2.0})
      for (int N = 1; N <= 3; ++N) {
        const QuadratureOracle o(ideal(d, lam, N), kOracle);
        const double V = std::pow(2 * lam, d);
        z_err = std::max(z_err, std::abs(o.Z() / std::pow(V, N) - 1.0));
        CounterRng rng(static_cast<std::uint64_t>(100 * d + N), 0);
        for (int trial = 0; trial < 8; ++trial) {
          Vec pts[3];
          for (auto& p : pts)
            for (int k = 0; k < d; ++k) p[k] = rng.uniform(-lam, lam);
          double want = 1.0;
          for (int n = 1; n <= N; ++n) {
            want *= (N - n + 1) / V;
            k_err = std::max(k_err, std::abs(o.k(std::span<const Vec>(pts, n)) / want - 1.0));
          }
        }
      }
  const auto spec = ideal(1, 2.0, 3);
  const auto ens = sample_canonical(spec, mcmc(20000, 2, 1, 200), 1);
  const auto k1 = estimate_correlation(ens, 1, 16);
  double worst_z = 0.0;
  for (std::size_t b = 0; b < k1.bins(); ++b) worst_z = std::max(worst_z, std::abs(k1.values[b] - 0.75) / k1.se[b]);
  double ratio_err = 0.0;
  for (int N = 0; N <= 2; ++N) {
    auto s = ideal(1, 2.0, N);
    ratio_err = std::max(ratio_err, std::abs(partition_ratio_quadrature(s, kOracle).ratio - 1.0));
  }
  const auto ins = partition_ratio_insertion(ens, 4, 3);
  ratio_err = std::max(ratio_err, std::abs(ins.ratio - 1.0));
  return {z_err <= 1e-8 && k_err <= 1e-8 && worst_z < 3.0 && ratio_err <= 1e-8,
          fmt("Z rel err %.1e, k rel err %.1e, density max |z| %.2f over 16 bins, ratio err %.1e", z_err, k_err,
              worst_z, ratio_err)};
}

Verdict decomposition_identity() {
  struct Cell {
    int d;
    double lam;
    std::vector<int> counts;
  };
  const Cell matrix[] = {{1, 2.0, {2, 5, 10}}, {1, 4.0, {2, 5, 10}}, {1, 8.0, {2, 5, 10}},
                         {2, 2.0, {2, 8, 32}}, {2, 4.0, {2, 8, 32}}};
  double worst = 0.0;
  long checked = 0;
  for (const auto& c : matrix) {
    const BoxGeometry box(c.d, c.lam);
    for (const auto& pot : {make_smoothed_lj(c.d), make_soft_core(c.d)}) {
      const PeriodicPotential pp(pot, box);
      const double tol = pp.policy().target_abs_error;
      CounterRng rng(static_cast<std::uint64_t>(c.d * 1000 + c.lam * 10), pot.name == "soft_core");
      for (int i = 0; i < 1000; ++i) {
        Positions Z(c.counts[i % c.counts.size()]);
        for (auto& x : Z)
          for (int k = 0; k < c.d; ++k) x[k] = box.wrap_coord(rng.uniform(-c.lam, c.lam));
        const double u = periodic_energy(Z, pp);
        const auto dec = decompose_energy(Z, pp);
        // Absolute tolerance, scaled by |U| where the energy itself exceeds one unit.
        worst = std::max(worst, std::abs(u - (dec.W_term + dec.U_term)) / (10 * tol * std::max(1.0, std::abs(u))));
        ++checked;
      }
    }
  }
  return {worst <= 1.0, fmt("%ld configurations, worst |dU| / (10 tol max(1,|U|)) = %.2e", checked, worst)};
}

Verdict partition_ratio_bound() {
  // Sweep ceiling below close packing of the sigma = 1 core; at (N+1)/V = 1 the
  // ratio grows without bound in N and is reported, not tested.
  const double rho_sweep = 0.75, ceiling = 1e3;
  std::vector<PartitionRatioReport> pts;
  double worst_z = 0.0, packed = 0.0;
  int agreements = 0;
  for (int d = 1; d <= 2; ++d)
    for (double lam : {1.0, 1.5, 2.0, 3.0, 4.0})
      for (int N = 0; N <= 2; ++N) {
        auto s = lj(d, lam, N);
        const double rho_next = (N + 1) / s.box.volume();
        if (rho_next > 1.0) continue;
        const auto q = partition_ratio_quadrature(s, kOracle);
        if (rho_next > rho_sweep) {
          packed = std::max(packed, q.ratio);
          continue;
        }
        pts.push_back(q);
        if (N >= 1 && lam >= 2.0) {
          const auto ens = sample_canonical(s, mcmc(4000, 2, 2), 17 + N + 10 * d);
          const auto m = partition_ratio_insertion(ens, 16, 5);
          pts.push_back(m);
          worst_z = std::max(worst_z, std::abs(q.ratio - m.ratio) / std::hypot(m.ratio_se, q.ratio_se));
          ++agreements;
        }
      }
  // Larger N only by insertion.
  for (double lam : {4.0, 8.0})
    for (int N = 3; (N + 1) / (2 * lam) <= rho_sweep; N += lam > 4.0 ? 4 : 1) {
      const auto ens = sample_canonical(lj(1, lam, N), mcmc(4000, 2, 2), 40 + N);
      pts.push_back(partition_ratio_insertion(ens, 16, 6));
    }
  int largest_N = 0;
  for (const auto& p : pts) largest_N = std::max(largest_N, p.N);
  const auto rep = summarize_ratio_sweep(pts, ceiling);
  return {rep.pass && worst_z < 3.0,
          fmt("%zu points to rho %.2f, N <= %d, k_hat %.4g (ceiling %.0f), insertion vs quadrature max z %.2f over "
              "%d pairs; close-packed rho 1 quadrature max %.4g",
              pts.size(), rho_sweep, largest_N, rep.k_hat, ceiling, worst_z, agreements, packed)};
}

Verdict ruelle_constants() {
  const double rho = 0.5;
  const double lambdas[] = {2.0, 4.0, 8.0};
  const auto counts = counts_for_density(rho, 1, lambdas);
  std::vector<RuellePoint> pts;
  std::string methods;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto spec = lj(1, lambdas[i], counts[i]);
    if (counts[i] <= 3) {
      pts.push_back(ruelle_point(QuadratureOracle(spec, {64, 1 << 16, 1024, 1e-7}), 64));
      methods += "Q";
    } else {
      const auto ens = sample_canonical(spec, mcmc(8000, 2, 1, 500), 70 + i);
      pts.push_back(ruelle_point(lambdas[i], counts[i], estimate_correlation(ens, 1, 16),
                                 estimate_correlation(ens, 2, 64), 50));
      methods += "M";
    }
  }
  const auto rep = check_ruelle(pts, 0.2);
  // Near-core behaviour straight from the oracle grid.
  const QuadratureOracle o(lj(1, 2.0, 3), kOracle);
  double sup_ratio = 0.0;
  bool finite = true;
  for (int i = 1; i <= 400; ++i) {
    const double r = o.k2_boltzmann_ratio(make_vec(-2.0 + 4.0 * i / 400.0));
    finite = finite && std::isfinite(r);
    sup_ratio = std::max(sup_ratio, r);
  }
  return {rep.pass && finite,
          fmt("N = %d,%d,%d (%s), xi var %.3f, zeta var %.3f (limit 0.2), sup k2 e^{beta phi} %.4g", counts[0],
              counts[1], counts[2], methods.c_str(), rep.xi_variation, rep.zeta_variation, sup_ratio)};
}

Verdict oracle_structure() {
  double worst = 0.0, sym = 0.0, trans = 0.0;
  bool k0 = true;
  // The integrand of a k^{(N-1)} marginal is itself the oracle's grid sum, so
  // the outer rule is asked for no more than the oracle resolves.
  QuadratureParams qp;
  qp.rel_tol = 1e-8;
  qp.max_points = 1L << 19;
  for (int d = 1; d <= 2; ++d)
    for (int N = 2; N <= 3; ++N) {
      const double lam = 2.0;
      const QuadratureOracle o(lj(d, lam, N), kOracle);
      k0 = k0 && o.k(std::span<const Vec>{}) == 1.0;
      CounterRng rng(static_cast<std::uint64_t>(10 * d + N), 1);
      for (int trial = 0; trial < 3; ++trial) {
        Vec pts[3];
        for (auto& p : pts)
          for (int k = 0; k < d; ++k) p[k] = rng.uniform(-lam, lam);
        for (int n = 0; n < N; ++n) {
          // In 2D each k^{(N-1)} value is itself a sum over the oracle grid; only the
          // closed-form top order is integrated there.
          if (d == 2 && n + 1 == N - 1) continue;
          std::vector<double> lo(d, -lam), hi(d, lam);
          const auto res = tensor_trapezoid(
              lo, hi,
              [&](std::span<const double> y) {
                Vec q[3] = {pts[0], pts[1], pts[2]};
                for (int k = 0; k < d; ++k) q[n][k] = y[k];
                return o.k(std::span<const Vec>(q, n + 1));
              },
              qp, true);
          const double want = (N - n) * o.k(std::span<const Vec>(pts, n));
          worst = std::max(worst, std::abs(res.value - want) / want);
        }
        Vec perm[3];
        std::reverse_copy(pts, pts + N, perm);
        sym = std::max(sym, std::abs(o.k(std::span<const Vec>(perm, N)) / o.k(std::span<const Vec>(pts, N)) - 1));
        Vec shifted[3];
        const Vec a = d == 1 ? make_vec(0.77) : make_vec(0.77, -0.31);
        for (int i = 0; i < 3; ++i) shifted[i] = o.spec().box.wrap(pts[i] + a);
        trans = std::max(trans,
                         std::abs(o.k(std::span<const Vec>(shifted, N)) / o.k(std::span<const Vec>(pts, N)) - 1));
      }
    }
  const double tol = 1e-6;
  return {worst <= tol && sym <= tol && trans <= tol && k0,
          fmt("marginal rel err %.1e, permutation %.1e, translation %.1e (tol %.0e), k0 == 1: %s", worst, sym, trans,
              tol, k0 ? "yes" : "no")};
}

TestFunction random_test_function(CounterRng& rng, double lam) {
  TestFunctionSpec s;
  s.center = make_vec(rng.uniform(-0.6 * lam, 0.6 * lam));
  s.width = rng.uniform(0.3, 0.35 * lam);
  s.p0 = rng.uniform(0.2, 1.0);
  s.p1 = rng.uniform(-1.0, 1.0);
  s.p2 = rng.uniform(-0.5, 0.5);
  s.v_scale = rng.uniform(1.0, 3.0);
  return make_test_function(1, s);
}

Verdict k_transform_identity() {
  const int N = 3;
  const double lam = 2.0;
  int passed = 0, total = 0;
  double worst = 0.0;
  // Four orders below the Monte Carlo error.
  QuadratureParams qp;
  qp.rel_tol = 1e-7;
  for (const auto& spec : {ideal(1, lam, N), lj(1, lam, N)}) {
    const QuadratureOracle o(spec, kOracle);
    const auto ens = sample_canonical(spec, mcmc(8000, 2, 2), 61);
    CounterRng rng(5, 0);
    for (int j = 0; j < 20; ++j) {
      const TestFunction f = random_test_function(rng, lam);
      const Vec origin{};
      const double k1 = o.k(std::span<const Vec>(&origin, 1));
      const MPointFunction fx = [&](std::span<const Vec> x, std::span<const Vec> v) { return f(x[0], v[0]) * k1; };
      // f vanishes off its support, so the integral runs over the support alone.
      Region support = Region::cube(1, lam);
      support.lo[0] = std::max(support.lo[0], f.support_lo[0]);
      support.hi[0] = std::min(support.hi[0], f.support_hi[0]);
      const double exact = lp_integral(fx, 1, Intensity::gaussian(spec.beta), support, qp).value;
      const MPointFunction f1 = [&](std::span<const Vec> x, std::span<const Vec> v) { return f(x[0], v[0]); };
      std::vector<double> vals;
      for (const auto& g : ens.samples) vals.push_back(k_transform(f1, 1, g));
      const Estimate e = batch_means(vals, 32);
      const double z = std::abs(e.mean - exact) / e.se;
      worst = std::max(worst, z);
      passed += z <= 3.0;
      ++total;
    }
  }
  // Second moment of Kf at N = 3 from the LJ oracle.
  const auto spec = lj(1, lam, N);
  const QuadratureOracle o(spec, {64, 1 << 16, 1024, 1e-7});
  const auto ens = sample_canonical(spec, mcmc(8000, 2, 2), 62);
  const MPointFunction g = [](std::span<const Vec> x, std::span<const Vec>) {
    return 1.0 + std::cos(0.5 * std::numbers::pi * x[0][0]) * bump1(x[0][0] / 1.8);
  };
  const auto m = moment_expand_check(g, 1, 2, ens.samples, [&](std::span<const Vec> x) { return o.k(x); },
                                     Region::cube(1, lam), qp);
  return {passed == total && m.discrepancy_se <= 3.0,
          fmt("%d/%d within 3 SE (max z %.2f); E|Kf|^2 expansion %.5f vs %.5f +- %.5f (%.2f SE)", passed, total,
              worst, m.expansion, m.empirical, m.empirical_se, m.discrepancy_se)};
}

std::vector<CylinderObservable> cylinder_battery(int count, const BoxGeometry& box, std::uint64_t seed) {
  std::vector<CylinderObservable> out;
  const double lam = box.half_side();
  for (int k = 0; k < count; ++k) {
    CounterRng rng(seed, static_cast<std::uint32_t>(k));
    TestFunctionSpec s;
    s.center = make_vec(rng.uniform(-0.5 * lam, 0.5 * lam));
    s.width = lam / 3.0;
    s.p1 = rng.uniform(-1.0, 1.0);
    s.v_scale = 2.0;
    TestFunctionSpec t = s;
    t.center = make_vec(rng.uniform(-0.5 * lam, 0.5 * lam));
    t.p1 = 0.0;
    t.v_scale = 0.0;
    const auto f = make_test_function(box.dim(), s), g = make_test_function(box.dim(), t);
    if (k % 3 == 0) out.push_back({OuterFunction::sine({1.0}, rng.uniform(-1.0, 1.0)), {f}});
    if (k % 3 == 1) out.push_back({OuterFunction::gaussian({0.7, -0.4}), {f, g}});
    if (k % 3 == 2) out.push_back({OuterFunction::linear({1.0, 0.5}), {f, g}});
  }
  return out;
}

Verdict integrator_invariance() {
  const auto spec = lj(1, 4.0, 2);
  // Thinned so the KS critical value, which assumes independent draws, applies.
  const auto ens = sample_canonical(spec, mcmc(5120, 2, 10), 71);
  const auto model = periodic_force_model(PeriodicPotential(spec.pot, spec.box));
  DynamicsParams p;
  p.dt = 0.005;
  p.seed = 72;
  const auto obs = cylinder_battery(3, spec.box, 73);
  const auto inv = check_invariance(ens, model, p, 0.5, obs);
  double worst_ks = 0.0, worst_z = 0.0;
  for (const auto& c : inv.comparisons) {
    worst_ks = std::max(worst_ks, c.ks / c.ks_critical);
    worst_z = std::max(worst_z, c.mean_z);
  }
  // Weak-error increments e(h) - e(h/2) at dt-halving, from coupled paths.
  const auto dense = lj(1, 4.0, 4);
  const auto starts = sample_canonical(dense, mcmc(16384, 1, 5), 74);
  const auto dmodel = periodic_force_model(PeriodicPotential(dense.pot, dense.box));
  std::vector<double> dts = {0.02, 0.01, 0.005};
  std::vector<Estimate> inc;
  for (double dt : dts) {
    DynamicsParams q;
    q.dt = dt;
    q.seed = 75;
    inc.push_back(kinetic_bias_increment(starts, dmodel, q, std::lround(1.0 / dt)));
  }
  const auto slope = bias_slope(dts, inc);
  return {inv.pass && inv.samples >= 10000 && slope.pass,
          fmt("%zu samples, max KS/critical %.3f, max mean z %.2f; bias slope %.3f +- %.3f (increments %.2e %.2e "
              "%.2e)",
              inv.samples, worst_ks, worst_z, slope.slope, slope.slope_se, inc[0].mean, inc[1].mean, inc[2].mean)};
}

Verdict martingale_problem() {
  const auto spec = lj(1, 4.0, 4);
  const auto ens = sample_canonical(spec, mcmc(4096, 2, 5), 81);
  const auto model = periodic_force_model(PeriodicPotential(spec.pot, spec.box));
  DynamicsParams p;
  p.dt = 0.005;
  p.seed = 82;
  const auto battery = cylinder_battery(3, spec.box, 83);
  double worst_z = 0.0, worst_qv = 0.0;
  bool pass = true;
  for (const auto& F : battery) {
    const auto m = check_martingale(ens, F, model, p, 0.25, 0.5);
    pass = pass && m.pass;
    worst_z = std::max(worst_z, m.increment_z);
    for (double z : m.tested_z) worst_z = std::max(worst_z, z);
    const auto q = check_quadratic_variation(ens, F.inner.front(), model, p, 0.5);
    pass = pass && q.pass;
    worst_qv = std::max(worst_qv, std::abs(q.ratio - 1.0) / (0.05 + 3.0 * q.ratio_se));
  }
  return {pass, fmt("%zu observables x 4 tests, max |z| %.2f; QV worst |ratio-1| / (0.05 + 3 SE) = %.3f",
                    battery.size(), worst_z, worst_qv)};
}

Verdict tightness() {
  const double rho = 0.5, window = 4.0;
  const double lambdas[] = {2.0, 4.0};
  const auto counts = counts_for_density(rho, 1, lambdas);
  std::vector<double> lags;
  DynamicsParams p;
  p.dt = 0.005;
  for (int j = 0; j <= 5; ++j) lags.push_back(p.dt * std::ldexp(1.0, j));
  double cmin = kInf, cmax = 0.0, smin = kInf;
  for (std::size_t i = 0; i < 2; ++i) {
    const auto spec = lj(1, lambdas[i], counts[i]);
    const auto ens = sample_canonical(spec, mcmc(4000, 2, 2), 910 + i);
    p.seed = 920 + i;
    MetricParams metric = default_metric_params(1, 32, 0.5 * window);
    metric.Phi = [Phi = spec.pot.repulsion_Phi, b = spec.beta](double t) { return b * Phi(t) / 6.0; };
    metric.Phi_range = *spec.pot.support_radius;
    const auto t = tightness_moment(ens, periodic_force_model(PeriodicPotential(spec.pot, spec.box)), p, metric,
                                    Region::cube(1, window), 0.0, lags);
    smin = std::min(smin, t.slope);
    cmin = std::min(cmin, t.C);
    cmax = std::max(cmax, t.C);
  }
  const double cvar = cmax / cmin - 1.0;
  return {smin >= 1.4 && cvar < 0.5,
          fmt("lags %.3g..%.3g (%.2f decades), min slope %.3f, C variation %.3f", lags.front(), lags.back(),
              std::log10(lags.back() / lags.front()), smin, cvar)};
}

NvSchedule nv_schedule(std::vector<double> lambdas) {
  NvSchedule s;
  s.dim = 1;
  s.rho = 0.3;
  s.lambdas = std::move(lambdas);
  s.counts = counts_for_density(s.rho, 1, s.lambdas);
  s.pot = make_smoothed_lj(1);
  s.mcmc = mcmc(4096, 1, 1, 300);
  s.dynamics.dt = 0.01;
  s.dynamics.t_end = 0.5;
  s.window_half = 1.5;
  s.bins = 8;
  return s;
}

std::string nv_summary(const NvReport& rep) {
  std::string out;
  for (const auto& b : rep.boxes) out += fmt("%sN=%d", out.empty() ? "" : ",", b.N);
  for (const auto& r : rep.rows)
    out += fmt("; %s %s (last %.4f vs 3SE %.4f)", r.quantity.c_str(), r.pass ? "ok" : "FAIL", r.delta.back(),
               3.0 * r.delta_se.back());
  return out;
}

Verdict nv_stabilization() {
  const auto rep = run_nv_limit(nv_schedule({2.0, 4.0, 8.0}), 3);
  return {rep.pass, nv_summary(rep)};
}

Verdict ou_analytics() {
  const double kappa = 1.0, beta = 2.0;
  auto spec = ideal(1, 2.0, 8);
  spec.beta = beta;
  const auto ens = sample_canonical(spec, mcmc(1000, 1, 1, 10), 101);
  const auto model = periodic_force_model(PeriodicPotential(spec.pot, spec.box));
  DynamicsParams p;
  p.kappa = kappa;
  p.beta = beta;
  p.dt = 0.01;
  p.seed = 102;
  const double lags[] = {0.0, 0.5, 1.0, 2.0};
  std::vector<std::vector<double>> prod(4), var;
  for (std::size_t i = 0; i < ens.samples.size(); ++i) {
    const auto tr = run_trajectory(ens.samples[i], model, spec.box, p, lags, static_cast<std::uint32_t>(i));
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t q = 0; q < tr.states[j].size(); ++q)
        prod[j].push_back(tr.states[0].v[q][0] * tr.states[j].v[q][0]);
  }
  double worst = 0.0;
  std::string detail;
  for (std::size_t j = 0; j < 4; ++j) {
    const Estimate e = iid_estimate(prod[j]);
    const double want = std::exp(-kappa * lags[j]) / beta;
    const double z = std::abs(e.mean - want) / e.se;
    worst = std::max(worst, z);
    detail += fmt("%st=%.1f: %.4f vs %.4f", j ? ", " : "", lags[j], e.mean, want);
  }
  // Stationary variance at the end of the horizon.
  std::vector<double> end;
  for (std::size_t i = 0; i < ens.samples.size(); ++i) {
    const auto tr = run_trajectory(ens.samples[i], model, spec.box, p, std::vector<double>{5.0},
                                   static_cast<std::uint32_t>(100000 + i));
    for (const auto& v : tr.states[0].v) end.push_back(v[0] * v[0]);
  }
  const Estimate s = iid_estimate(end);
  const double zs = std::abs(s.mean - 1.0 / beta) / s.se;
  return {worst < 3.0 && zs < 3.0, detail + fmt("; max z %.2f; stationary var %.4f vs %.4f (z %.2f)", worst, s.mean,
                                                1.0 / beta, zs)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream o;
  o << in.rdbuf();
  return o.str();
}

Verdict reproducibility() {
  const fs::path work = fs::temp_directory_path() / "nvl_acceptance_replay";
  fs::remove_all(work);
  const fs::path cfg = NVL_CONFIG_DIR;
  struct Run {
    const char* command;
    const char* config;
  };
  const Run runs[] = {{"sample-gibbs", "smoothed_lj.cfg"},      {"run-dynamics", "smoothed_lj.cfg"},
                      {"check-martingale", "ideal_gas.cfg"},    {"check-invariance", "soft_core.cfg"},
                      {"estimate-correlations", "soft_core.cfg"}, {"nv-limit", "nv_limit.cfg"}};
  long compared = 0, differing = 0;
  // The CLI's one-line verdicts would interleave with the criterion lines.
  std::ostringstream quiet;
  std::streambuf* const saved = std::cout.rdbuf(quiet.rdbuf());
  for (const auto& r : runs) {
    const fs::path a = work / (std::string(r.command) + "_a"), b = work / (std::string(r.command) + "_b");
    cli_dispatch({"nvlimit", "--threads", "2", r.command, "--config", (cfg / r.config).string(), "--out",
                  a.string()});
    cli_dispatch({"nvlimit", "replay", "--manifest", (a / "manifest.json").string(), "--out", b.string()});
    for (const auto& entry : fs::directory_iterator(a)) {
      const auto name = entry.path().filename();
      if (name == "manifest.json") continue;  // timestamps and thread count differ by design
      ++compared;
      differing += !fs::exists(b / name) || slurp(entry.path()) != slurp(b / name);
    }
  }
  std::cout.rdbuf(saved);
  fs::remove_all(work);
  return {compared > 0 && differing == 0,
          fmt("%ld artifacts from %zu commands, %ld differ after serial replay", compared, std::size(runs),
              differing)};
}

}  // namespace

// Usage: acceptance [--strict] [criterion numbers...]
int main(int argc, char** argv) {
  bool strict = false;
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--strict") == 0)
      strict = true;
    else
      only.push_back(std::atoi(argv[i]));
  }
  struct Criterion {
    const char* name;
    std::function<Verdict()> run;
  };
  const Criterion criteria[] = {
      {"ideal-gas exactness", ideal_gas_exactness},
      {"energy decomposition identity", decomposition_identity},
      {"partition-ratio bound", partition_ratio_bound},
      {"Ruelle constants stable across boxes", ruelle_constants},
      {"correlation-function structure", oracle_structure},
      {"K-transform identity and second moment", k_transform_identity},
      {"integrator invariance and dt^2 bias", integrator_invariance},
      {"martingale problem and quadratic variation", martingale_problem},
      {"tightness moment", tightness},
      {"N/V stabilization at rho = 0.3", nv_stabilization},
      {"OU velocity analytics", ou_analytics},
      {"manifest replay reproducibility", reproducibility},
  };
  int failures = 0, index = 0, ran = 0;
  for (const auto& c : criteria) {
    ++index;
    if (!only.empty() && std::find(only.begin(), only.end(), index) == only.end()) continue;
    ++ran;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !v.pass;
    std::printf("%s  %2d  %-44s %6.1fs  %s\n", v.pass ? "PASS" : "FAIL", index, c.name, secs, v.detail.c_str());
    std::fflush(stdout);
  }
  if (!only.empty()) {
    std::printf("%d of %d selected criteria pass\n", ran - failures, ran);
    return strict && failures > 0 ? 1 : 0;
  }
  // Same N/V machinery on boxes where rho (2 lambda) is an integer, so every box sits at rho exactly.
  try {
    const auto rep = run_nv_limit(nv_schedule({5.0 / 3, 10.0 / 3, 20.0 / 3, 40.0 / 3}), 3);
    std::printf("info      N/V control at commensurate boxes: %s  %s\n", rep.pass ? "pass" : "fail",
                nv_summary(rep).c_str());
  } catch (const std::exception& e) {
    std::printf("info      N/V control failed to run: %s\n", e.what());
  }
  std::printf("%d of %zu criteria pass\n", static_cast<int>(std::size(criteria)) - failures, std::size(criteria));
  return strict && failures > 0 ? 1 : 0;
}
