#include "nvl/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "nvl/errors.hpp"
#include "nvl/parallel.hpp"

namespace nvl {

void DynamicsParams::validate() const {
  if (!(kappa > 0.0) || !(beta > 0.0) || !(dt > 0.0) || t_end < 0.0)
    throw Error(ErrorKind::InvalidArgument, "dynamics needs kappa, beta, dt > 0 and t_end >= 0");
}

ForceModel periodic_force_model(const PeriodicPotential& pp) {
  ForceModel m;
  m.name = pp.spec().name;
  m.forces = [pp](std::span<const Vec> x, std::span<Vec> out) {
    if (pp.spec().identically_zero) {
      std::fill(out.begin(), out.end(), Vec{});
      return;
    }
    const Positions f = periodic_forces(x, pp);
    std::copy(f.begin(), f.end(), out.begin());
  };
  m.energy = [pp](std::span<const Vec> x) { return periodic_energy(x, pp); };
  return m;
}

Vec ou_step(const Vec& v, int dim, double kappa, double beta, double dt, std::span<const double> normals) {
  const double c = std::exp(-kappa * dt);
  const double s = std::sqrt(-std::expm1(-2.0 * kappa * dt) / beta);
  Vec out{};
  for (int i = 0; i < dim; ++i) out[i] = c * v[i] + s * normals[i];
  return out;
}

DynamicsState make_state(MarkedConfiguration g, const ForceModel& model, const BoxGeometry& box) {
  for (auto& x : g.x) x = box.wrap(x);
  if (g.v.size() != g.x.size()) g.v.resize(g.x.size());
  DynamicsState s{std::move(g), {}};
  s.forces.assign(s.g.size(), Vec{});
  model.forces(s.g.x, s.forces);
  return s;
}

void step_baoab(DynamicsState& s, const ForceModel& model, const BoxGeometry& box, const DynamicsParams& params,
                const KeyedNormal& noise, std::uint32_t chain, std::uint64_t step) {
  step_baoab(s, model, box, params,
             [&](std::size_t i) { return noise.normals(chain, step, static_cast<std::uint32_t>(i)); });
}

void step_baoab(DynamicsState& s, const ForceModel& model, const BoxGeometry& box, const DynamicsParams& params,
                const std::function<std::array<double, 4>(std::size_t)>& normals) {
  const int d = box.dim();
  const double h = 0.5 * params.dt;
  auto& x = s.g.x;
  auto& v = s.g.v;
  const std::size_t N = x.size();
  for (std::size_t i = 0; i < N; ++i) {
    v[i] += s.forces[i] * h;
    x[i] += v[i] * h;
    const auto z = normals(i);
    v[i] = ou_step(v[i], d, params.kappa, params.beta, params.dt, z);
    x[i] = box.wrap(x[i] + v[i] * h);
  }
  model.forces(x, s.forces);
  for (std::size_t i = 0; i < N; ++i) {
    if (!(norm_max(s.forces[i]) * params.dt <= params.max_kick))
      throw Error(ErrorKind::ForceBlowup, "force kick exceeds the guard; reduce dt");
    v[i] += s.forces[i] * h;
  }
}

void evolve(DynamicsState& s, const ForceModel& model, const BoxGeometry& box, const DynamicsParams& params,
            std::uint32_t chain, long n_steps, const std::function<void(long, const DynamicsState&)>& observe) {
  const KeyedNormal noise(params.seed);
  if (observe) observe(0, s);
  for (long k = 1; k <= n_steps; ++k) {
    step_baoab(s, model, box, params, noise, chain, static_cast<std::uint64_t>(k - 1));
    if (observe) observe(k, s);
  }
}

Trajectory run_trajectory(const MarkedConfiguration& initial, const ForceModel& model, const BoxGeometry& box,
                          const DynamicsParams& params, std::span<const double> observation_times,
                          std::uint32_t chain) {
  params.validate();
  std::vector<double> times(observation_times.begin(), observation_times.end());
  if (times.empty()) times = {0.0, params.t_end};
  std::sort(times.begin(), times.end());
  Trajectory tr;
  tr.box = box;
  tr.params = params;
  std::vector<long> idx;
  for (double t : times) {
    if (t < 0.0) throw Error(ErrorKind::InvalidArgument, "observation times must be >= 0");
    const long k = std::llround(t / params.dt);
    tr.max_snap_error = std::max(tr.max_snap_error, std::abs(k * params.dt - t));
    idx.push_back(k);
  }
  DynamicsState s = make_state(initial, model, box);
  std::size_t next = 0;
  evolve(s, model, box, params, chain, idx.back(), [&](long k, const DynamicsState& st) {
    while (next < idx.size() && idx[next] == k) {
      tr.times.push_back(k * params.dt);
      tr.states.push_back(st.g);
      ++next;
    }
  });
  return tr;
}

MarkedConfiguration lift_per(const MarkedConfiguration& g, const BoxGeometry& box, const Region& window) {
  const int d = box.dim();
  const double L = box.side();
  MarkedConfiguration out;
  out.dim = g.dim;
  for (std::size_t i = 0; i < g.size(); ++i) {
    int lo[kMaxDim] = {0, 0, 0}, hi[kMaxDim] = {0, 0, 0};
    for (int c = 0; c < d; ++c) {
      lo[c] = static_cast<int>(std::floor((window.lo[c] - g.x[i][c]) / L)) + 1;
      hi[c] = static_cast<int>(std::floor((window.hi[c] - g.x[i][c]) / L));
    }
    for (int a = lo[0]; a <= hi[0]; ++a)
      for (int b = lo[1]; b <= hi[1]; ++b)
        for (int c = lo[2]; c <= hi[2]; ++c) {
          const Vec y = g.x[i] + make_vec(a * L, b * L, c * L);
          bool inside = true;
          for (int k = 0; k < d; ++k) inside = inside && y[k] > window.lo[k] && y[k] <= window.hi[k];
          if (inside) out.add(y, g.v[i]);
        }
  }
  return out;
}

namespace {

double zscore(const Estimate& e) {
  if (e.se > 0.0) return std::abs(e.mean) / e.se;
  return e.mean == 0.0 ? 0.0 : kInf;
}

double kinetic(const MarkedConfiguration& g) {
  double s = 0.0;
  for (const auto& v : g.v) s += dot(v, v);
  return s;
}

}  // namespace

InvarianceReport check_invariance(const GibbsEnsemble& ens, const ForceModel& model, const DynamicsParams& params,
                                  double T, std::span<const CylinderObservable> observables) {
  params.validate();
  const auto& box = ens.spec.box;
  const std::size_t S = ens.samples.size();
  const std::size_t K = 2 + observables.size();
  const long steps = std::llround(T / params.dt);
  std::vector<std::vector<double>> at0(K, std::vector<double>(S)), atT(K, std::vector<double>(S));
  auto record = [&](std::vector<std::vector<double>>& dst, std::size_t i, const MarkedConfiguration& g) {
    dst[0][i] = model.energy(g.x);
    dst[1][i] = kinetic(g);
    for (std::size_t k = 0; k < observables.size(); ++k) dst[2 + k][i] = observables[k](g);
  };
  parallel_for(S, [&](std::size_t i) {
    DynamicsState s = make_state(ens.samples[i], model, box);
    record(at0, i, s.g);
    evolve(s, model, box, params, static_cast<std::uint32_t>(i), steps, nullptr);
    record(atT, i, s.g);
  });
  InvarianceReport rep;
  rep.T = T;
  rep.samples = S;
  rep.pass = S > 1;
  for (std::size_t k = 0; k < K; ++k) {
    DistributionComparison c;
    c.name = k == 0 ? "energy" : (k == 1 ? "kinetic" : "observable_" + std::to_string(k - 2));
    c.mean0 = mean(at0[k]);
    c.meanT = mean(atT[k]);
    std::vector<double> diff(S);
    for (std::size_t i = 0; i < S; ++i) diff[i] = atT[k][i] - at0[k][i];
    c.mean_z = zscore(batch_means(diff, 32));
    c.ks = ks_statistic(at0[k], atT[k]);
    c.ks_critical = ks_critical_value(S, S, 0.01);
    c.pass = c.ks < c.ks_critical && c.mean_z < 3.0;
    rep.pass = rep.pass && c.pass;
    rep.comparisons.push_back(std::move(c));
  }
  return rep;
}

MartingaleReport check_martingale(const GibbsEnsemble& ens, const CylinderObservable& F, const ForceModel& model,
                                  const DynamicsParams& params, double s, double t) {
  params.validate();
  if (!(s >= 0.0 && s < t)) throw Error(ErrorKind::InvalidArgument, "need 0 <= s < t");
  const auto& box = ens.spec.box;
  check_supports_in_box(F, box);
  const long ks = std::llround(s / params.dt), kt = std::llround(t / params.dt);
  const std::size_t S = ens.samples.size();
  const double lam = box.half_side();
  std::vector<double> inc(S), Mt(S), g1(S), g2(S), g3(S);
  parallel_for(S, [&](std::size_t i) {
    DynamicsState st = make_state(ens.samples[i], model, box);
    double F0 = 0.0, integral = 0.0, prevL = 0.0, Ms = 0.0;
    evolve(st, model, box, params, static_cast<std::uint32_t>(i), kt, [&](long k, const DynamicsState& cur) {
      const double Fk = F(cur.g);
      const double Lk = generator_with_forces(F, cur.g, cur.forces, params.kappa, params.beta).total();
      if (k == 0) {
        F0 = Fk;
      } else {
        integral += 0.5 * params.dt * (prevL + Lk);
      }
      prevL = Lk;
      const double M = Fk - F0 - integral;
      if (k == ks) {
        Ms = M;
        double sx = 0.0, sv = 0.0;
        for (std::size_t p = 0; p < cur.g.size(); ++p) {
          sx += cur.g.x[p][0];
          sv += cur.g.v[p][0];
        }
        g1[i] = std::cos(std::numbers::pi * sx / lam);
        g2[i] = std::tanh(sv);
        g3[i] = Fk / (1.0 + std::abs(Fk));
      }
      if (k == kt) {
        Mt[i] = M;
        inc[i] = M - Ms;
      }
    });
  });
  MartingaleReport rep;
  rep.s = s;
  rep.t = t;
  rep.increment = batch_means(inc, 32);
  rep.increment_z = zscore(rep.increment);
  for (double m : Mt) rep.max_abs_M = std::max(rep.max_abs_M, std::abs(m));
  const std::pair<const char*, const std::vector<double>*> tests[] = {
      {"cos_position", &g1}, {"tanh_velocity", &g2}, {"squashed_F", &g3}};
  rep.pass = rep.increment_z < 3.0;
  for (const auto& [name, g] : tests) {
    std::vector<double> prod(S);
    for (std::size_t i = 0; i < S; ++i) prod[i] = inc[i] * (*g)[i];
    const Estimate e = batch_means(prod, 32);
    rep.tested.push_back(e);
    rep.tested_z.push_back(zscore(e));
    rep.tested_names.emplace_back(name);
    rep.pass = rep.pass && rep.tested_z.back() < 3.0;
  }
  return rep;
}

QuadraticVariationReport check_quadratic_variation(const GibbsEnsemble& ens, const TestFunction& f,
                                                   const ForceModel& model, const DynamicsParams& params, double t) {
  params.validate();
  const auto& box = ens.spec.box;
  CylinderObservable F{OuterFunction::linear({1.0}), {f}};
  check_supports_in_box(F, box);
  const long kt = std::llround(t / params.dt);
  const std::size_t S = ens.samples.size();
  const double c = 2.0 * params.kappa / params.beta;
  std::vector<double> realized(S), predicted(S);
  parallel_for(S, [&](std::size_t i) {
    DynamicsState st = make_state(ens.samples[i], model, box);
    double prevF = 0.0, prevL = 0.0, prevQ = 0.0, r = 0.0, p = 0.0;
    evolve(st, model, box, params, static_cast<std::uint32_t>(i), kt, [&](long k, const DynamicsState& cur) {
      const double Fk = F(cur.g);
      const double Lk = generator_with_forces(F, cur.g, cur.forces, params.kappa, params.beta).total();
      double q = 0.0;
      for (const auto& gv : grad_v_K(f, cur.g)) q += dot(gv, gv);
      q *= c;
      if (k > 0) {
        const double dM = Fk - prevF - 0.5 * params.dt * (prevL + Lk);
        r += dM * dM;
        p += 0.5 * params.dt * (prevQ + q);
      }
      prevF = Fk;
      prevL = Lk;
      prevQ = q;
    });
    realized[i] = r;
    predicted[i] = p;
  });
  QuadraticVariationReport rep;
  rep.realized = batch_means(realized, 32);
  rep.predicted = batch_means(predicted, 32);
  if (rep.predicted.mean == 0.0) {
    rep.ratio = 0.0;
    rep.pass = rep.realized.mean <= 1e-8 * std::max(t, 1.0);
    return rep;
  }
  rep.ratio = rep.realized.mean / rep.predicted.mean;
  std::vector<double> resid(S);
  for (std::size_t i = 0; i < S; ++i) resid[i] = realized[i] - rep.ratio * predicted[i];
  rep.ratio_se = batch_means(resid, 32).se / rep.predicted.mean;
  rep.pass = std::abs(rep.ratio - 1.0) <= 0.05 + 3.0 * rep.ratio_se;
  return rep;
}

TightnessReport tightness_moment(const GibbsEnsemble& ens, const ForceModel& model, const DynamicsParams& params,
                                 const MetricParams& metric, const Region& window, double s0,
                                 std::span<const double> lags) {
  params.validate();
  if (lags.empty()) throw Error(ErrorKind::InvalidArgument, "need at least one lag");
  const auto& box = ens.spec.box;
  const long k0 = std::llround(s0 / params.dt);
  std::vector<long> kl;
  for (double l : lags) kl.push_back(k0 + std::max(1L, static_cast<long>(std::llround(l / params.dt))));
  const long kmax = *std::max_element(kl.begin(), kl.end());
  const std::size_t S = ens.samples.size();
  std::vector<std::vector<double>> cubes(lags.size(), std::vector<double>(S));
  parallel_for(S, [&](std::size_t i) {
    DynamicsState st = make_state(ens.samples[i], model, box);
    MarkedConfiguration base;
    evolve(st, model, box, params, static_cast<std::uint32_t>(i), kmax, [&](long k, const DynamicsState& cur) {
      if (k == k0) base = lift_per(cur.g, box, window);
      for (std::size_t j = 0; j < kl.size(); ++j)
        if (k == kl[j]) {
          const double dist = dist_full(base, lift_per(cur.g, box, window), metric);
          cubes[j][i] = dist * dist * dist;
        }
    });
  });
  TightnessReport rep;
  std::vector<double> lx, ly;
  double logC = 0.0;
  for (std::size_t j = 0; j < lags.size(); ++j) {
    const double lag = (kl[j] - k0) * params.dt;
    rep.lags.push_back(lag);
    rep.moments.push_back(iid_estimate(cubes[j]));
    lx.push_back(std::log(lag));
    ly.push_back(std::log(rep.moments.back().mean));
    logC += ly.back() - 1.5 * lx.back();
  }
  rep.C = std::exp(logC / static_cast<double>(lags.size()));
  if (lags.size() >= 2) {
    const LinearFit fit = linear_fit(lx, ly);
    rep.slope = fit.slope;
    rep.slope_se = fit.slope_se;
  }
  rep.pass = lags.size() >= 2 && std::isfinite(rep.slope) && rep.slope >= 1.4;
  return rep;
}

Estimate kinetic_bias(const GibbsEnsemble& ens, const ForceModel& model, const DynamicsParams& params,
                      long burn_steps, long measure_steps, int stride) {
  params.validate();
  if (measure_steps < 1 || stride < 1) throw Error(ErrorKind::InvalidArgument, "need measure_steps, stride >= 1");
  const auto& box = ens.spec.box;
  const std::size_t S = ens.samples.size();
  const double dofs = static_cast<double>(box.dim()) * ens.spec.N;
  std::vector<double> per_chain(S);
  parallel_for(S, [&](std::size_t i) {
    DynamicsState st = make_state(ens.samples[i], model, box);
    double acc = 0.0;
    long n = 0;
    evolve(st, model, box, params, static_cast<std::uint32_t>(i), burn_steps + measure_steps,
           [&](long k, const DynamicsState& cur) {
             if (k > burn_steps && (k - burn_steps) % stride == 0) {
               acc += kinetic(cur.g);
               ++n;
             }
           });
    per_chain[i] = acc / static_cast<double>(n) * params.beta / dofs - 1.0;
  });
  return iid_estimate(per_chain);
}

Estimate kinetic_bias_increment(const GibbsEnsemble& ens, const ForceModel& model, const DynamicsParams& params,
                                long horizon_steps) {
  params.validate();
  if (horizon_steps < 1) throw Error(ErrorKind::InvalidArgument, "need horizon_steps >= 1");
  const auto& box = ens.spec.box;
  const std::size_t S = ens.samples.size();
  const double dofs = static_cast<double>(box.dim()) * ens.spec.N;
  DynamicsParams fine = params;
  fine.dt = 0.5 * params.dt;
  const double c = std::exp(-params.kappa * fine.dt), norm = 1.0 / std::sqrt(1.0 + c * c);
  const KeyedNormal noise(params.seed);
  std::vector<double> per_path(S);
  parallel_for(S, [&](std::size_t i) {
    const auto chain = static_cast<std::uint32_t>(i);
    DynamicsState coarse = make_state(ens.samples[i], model, box), finer = coarse;
    double acc = 0.0;
    for (long k = 0; k < horizon_steps; ++k) {
      const auto first = static_cast<std::uint64_t>(2 * k), second = first + 1;
      step_baoab(finer, model, box, fine, noise, chain, first);
      step_baoab(finer, model, box, fine, noise, chain, second);
      step_baoab(coarse, model, box, params, [&](std::size_t p) {
        // (c z1 + z2) / sqrt(1 + c^2) is standard normal and tracks the fine pair.
        const auto z1 = noise.normals(chain, first, static_cast<std::uint32_t>(p));
        const auto z2 = noise.normals(chain, second, static_cast<std::uint32_t>(p));
        std::array<double, 4> out{};
        for (int q = 0; q < 4; ++q) out[q] = (c * z1[q] + z2[q]) * norm;
        return out;
      });
      acc += kinetic(coarse.g) - kinetic(finer.g);
    }
    per_path[i] = acc / static_cast<double>(horizon_steps) * params.beta / dofs;
  });
  return iid_estimate(per_path);
}

BiasSlopeReport bias_slope(std::vector<double> dts, std::vector<Estimate> biases) {
  if (dts.size() != biases.size() || dts.size() < 2)
    throw Error(ErrorKind::InvalidArgument, "need matching dt and bias lists of length >= 2");
  BiasSlopeReport rep;
  rep.dts = std::move(dts);
  rep.biases = std::move(biases);
  std::vector<double> lx, ly;
  // A bias that changes sign between steps is not in its asymptotic regime.
  bool same_sign = true;
  for (std::size_t i = 0; i < rep.dts.size(); ++i) {
    same_sign = same_sign && rep.biases[i].mean * rep.biases[0].mean > 0.0;
    lx.push_back(std::log(rep.dts[i]));
    ly.push_back(std::log(std::abs(rep.biases[i].mean)));
  }
  const LinearFit fit = linear_fit(lx, ly);
  rep.slope = fit.slope;
  rep.slope_se = fit.slope_se;
  rep.pass = same_sign && rep.slope >= 1.7 && rep.slope <= 2.3;
  return rep;
}

}  // namespace nvl
