#include "nvl/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "nvl/errors.hpp"
#include "nvl/parallel.hpp"
#include "nvl/rng.hpp"
#include "nvl/snapshot.hpp"

#ifndef NVL_CODE_VERSION
#define NVL_CODE_VERSION "0.1.0"
#endif

namespace nvl {

namespace fs = std::filesystem;
using nlohmann::json;

std::string code_version() { return NVL_CODE_VERSION; }

namespace {

json to_json(const Estimate& e) { return json{{"mean", e.mean}, {"se", e.se}}; }

json to_json(const std::vector<Estimate>& v) {
  json a = json::array();
  for (const auto& e : v) a.push_back(to_json(e));
  return a;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 finaliser, so neighbouring indices give unrelated streams
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::vector<TestFunction> window_functions(int dim, double w, int count) {
  std::vector<TestFunction> out;
  for (int l = 0; l < count; ++l) {
    TestFunctionSpec s;
    s.center[0] = -w + (2.0 * l + 1.0) * w / count;
    s.width = w / count;
    out.push_back(make_test_function(dim, s));
  }
  return out;
}

// Window histograms of positions and of separations, with batch-means SE.
void window_profiles(std::span<const MarkedConfiguration> states, const BoxGeometry& box, double w, int bins,
                     std::vector<Estimate>& k1, std::vector<Estimate>& k2) {
  const int d = box.dim();
  std::size_t nb = 1;
  for (int i = 0; i < d; ++i) nb *= static_cast<std::size_t>(bins);
  const double width = 2.0 * w / bins;
  const double vol = std::pow(width, d);
  const std::size_t S = states.size();
  std::vector<std::vector<double>> c1(nb, std::vector<double>(S, 0.0)), c2(nb, std::vector<double>(S, 0.0));
  auto index = [&](const Vec& p, std::size_t& flat) {
    flat = 0;
    std::size_t stride = 1;
    for (int i = 0; i < d; ++i) {
      if (!(p[i] > -w && p[i] <= w)) return false;
      const int k = std::clamp(static_cast<int>(std::floor((p[i] + w) / width)), 0, bins - 1);
      flat += stride * static_cast<std::size_t>(k);
      stride *= static_cast<std::size_t>(bins);
    }
    return true;
  };
  for (std::size_t s = 0; s < S; ++s) {
    const auto& x = states[s].x;
    std::size_t k = 0;
    for (const auto& p : x)
      if (index(p, k)) c1[k][s] += 1.0 / vol;
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t j = 0; j < x.size(); ++j)
        if (i != j && index(box.min_image_delta(x[j], x[i]), k)) c2[k][s] += 1.0 / (vol * box.volume());
  }
  k1.clear();
  k2.clear();
  for (std::size_t b = 0; b < nb; ++b) {
    k1.push_back(batch_means(c1[b], 32));
    k2.push_back(batch_means(c2[b], 32));
  }
}

}  // namespace

void NvSchedule::validate() const {
  if (lambdas.empty()) throw Error(ErrorKind::ConfigError, "schedule needs at least one box");
  if (counts.size() != lambdas.size()) throw Error(ErrorKind::ConfigError, "schedule counts and lambdas differ in length");
  for (std::size_t i = 1; i < lambdas.size(); ++i)
    if (!(lambdas[i] > lambdas[i - 1])) throw Error(ErrorKind::ConfigError, "schedule lambdas must increase strictly");
  if (!(rho > 0.0)) throw Error(ErrorKind::ConfigError, "schedule rho must be > 0");
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    const double dens = counts[i] / std::pow(2.0 * lambdas[i], dim);
    if (dens > rho_max) throw Error(ErrorKind::DensityExceedsRhoMax, "schedule density exceeds rho_max");
  }
  const double last = counts.back() / std::pow(2.0 * lambdas.back(), dim);
  if (std::abs(last - rho) > 0.05 * rho)
    throw Error(ErrorKind::ConfigError, "last box density deviates from rho by more than 5%");
  if (!(window_half > 0.0) || window_half >= lambdas.front())
    throw Error(ErrorKind::ConfigError, "window must lie inside the smallest box");
  if (window_functions < 1 || bins < 1) throw Error(ErrorKind::ConfigError, "window needs functions and bins");
}

std::vector<double> half_integer_lambdas(int count) {
  std::vector<double> out;
  for (int n = 1; n <= count; ++n) out.push_back(n + 0.5);
  return out;
}

std::vector<int> counts_for_density(double rho, int dim, std::span<const double> lambdas) {
  std::vector<int> out;
  for (double l : lambdas)
    out.push_back(std::max(1, static_cast<int>(std::lround(rho * std::pow(2.0 * l, dim)))));
  return out;
}

namespace {

// Every bump of the metric family sits inside the lift window, so a particle
// crossing the window edge moves the lifted configuration continuously.
// The pair weight is beta Phi / 6 for the potential's repulsion Phi.
MetricParams window_metric(const PotentialSpec& pot, double beta, double window_half, const MetricWeights& w) {
  MetricParams m = default_metric_params(pot.dim, w.k_max, 0.5 * window_half);
  m.r.assign(w.k_max, w.r);
  m.q.assign(w.k_max, w.q);
  if (pot.repulsion_Phi) {
    m.Phi = [Phi = pot.repulsion_Phi, beta](double t) { return beta * Phi(t) / 6.0; };
    m.Phi_range = pot.support_radius ? *pot.support_radius : 0.0;
  }
  return m;
}

MetricWeights metric_weights_from_config(const Config& c) {
  MetricWeights w;
  w.k_max = static_cast<int>(c.get_long("metric.k_max", w.k_max));
  w.r = c.get_double("metric.r", w.r);
  w.q = c.get_double("metric.q", w.q);
  if (w.k_max < 1 || !(w.r > 0.0) || !(w.q > 0.0))
    throw Error(ErrorKind::ConfigError, "metric.k_max must be >= 1 and metric.r, metric.q positive");
  return w;
}

json to_json(const MetricWeights& w) { return {{"k_max", w.k_max}, {"r", w.r}, {"q", w.q}}; }

std::vector<double> default_lags(double dt) {
  std::vector<double> out;
  for (int j = 0; j <= 5; ++j) out.push_back(dt * std::ldexp(1.0, j));  // 1.5 decades
  return out;
}

}  // namespace

NvSchedule schedule_from_config(const Config& c, std::uint64_t seed) {
  NvSchedule s;
  const EnsembleSpec base = ensemble_from_config(c);
  s.dim = base.box.dim();
  s.pot = base.pot;
  s.beta = base.beta;
  s.rho_max = base.rho_max;
  s.policy = base.policy;
  s.rho = c.get_double("schedule.rho", 0.3);
  const std::string preset = c.get_string("schedule.preset", "free");
  if (preset == "half_integer") {
    s.lambdas = half_integer_lambdas(static_cast<int>(c.get_long("schedule.preset_count", 3)));
  } else if (preset == "free") {
    s.lambdas = c.get_list("schedule.lambdas", {2.0, 4.0, 8.0});
  } else {
    throw Error(ErrorKind::ConfigError, "schedule.preset must be free or half_integer");
  }
  if (c.has("schedule.counts")) {
    for (double v : c.get_list("schedule.counts", {})) s.counts.push_back(static_cast<int>(v));
  } else {
    s.counts = counts_for_density(s.rho, s.dim, s.lambdas);
  }
  s.mcmc = mcmc_from_config(c);
  s.dynamics = dynamics_from_config(c, seed);
  s.window_half = c.get_double("window.half", 1.0);
  s.window_functions = static_cast<int>(c.get_long("window.functions", 3));
  s.bins = static_cast<int>(c.get_long("checks.bins", 16));
  s.tightness = c.get_bool("schedule.tightness", false);
  s.lags = c.get_list("checks.lags", default_lags(s.dynamics.dt));
  s.metric = metric_weights_from_config(c);
  s.validate();
  return s;
}

StabilizationRow stabilization_row(const std::string& name, const std::vector<std::vector<Estimate>>& per_box) {
  StabilizationRow row;
  row.quantity = name;
  for (std::size_t n = 1; n < per_box.size(); ++n) {
    double best = -1.0, best_se = 0.0;
    for (std::size_t b = 0; b < per_box[n].size(); ++b) {
      const double diff = std::abs(per_box[n][b].mean - per_box[n - 1][b].mean);
      if (diff > best) {
        best = diff;
        best_se = std::hypot(per_box[n][b].se, per_box[n - 1][b].se);
      }
    }
    row.delta.push_back(std::max(best, 0.0));
    row.delta_se.push_back(best_se);
  }
  if (row.delta.empty()) {
    // A single box has nothing to stabilise against.
    row.decreasing = row.final_within = row.pass = true;
    return row;
  }
  row.decreasing = true;
  const std::size_t first = row.delta.size() > 3 ? row.delta.size() - 3 : 0;
  for (std::size_t k = first + 1; k < row.delta.size(); ++k) {
    const double rise = row.delta[k] - row.delta[k - 1];
    if (rise > 3.0 * std::hypot(row.delta_se[k], row.delta_se[k - 1])) row.decreasing = false;
  }
  row.final_within = row.delta.back() <= 3.0 * row.delta_se.back();
  row.pass = row.decreasing && row.final_within;
  return row;
}

NvReport run_nv_limit(const NvSchedule& schedule, std::uint64_t seed) {
  schedule.validate();
  NvReport rep;
  const auto funcs = window_functions(schedule.dim, schedule.window_half, schedule.window_functions);
  for (std::size_t n = 0; n < schedule.lambdas.size(); ++n) {
    const std::uint64_t box_seed = derive_seed(seed, n);
    EnsembleSpec spec;
    spec.N = schedule.counts[n];
    spec.box = BoxGeometry(schedule.dim, schedule.lambdas[n]);
    spec.beta = schedule.beta;
    spec.pot = schedule.pot;
    spec.rho_max = schedule.rho_max;
    spec.policy = schedule.policy;
    const GibbsEnsemble ens = sample_canonical(spec, schedule.mcmc, box_seed);
    const PeriodicPotential pp(spec.pot, spec.box, spec.policy);
    const ForceModel model = periodic_force_model(pp);
    DynamicsParams dp = schedule.dynamics;
    dp.seed = box_seed;
    const long steps = std::llround(dp.t_end / dp.dt);
    std::vector<MarkedConfiguration> finals(ens.samples.size());
    parallel_for(finals.size(), [&](std::size_t i) {
      DynamicsState st = make_state(ens.samples[i], model, spec.box);
      evolve(st, model, spec.box, dp, static_cast<std::uint32_t>(i), steps, nullptr);
      finals[i] = st.g;
    });
    BoxResult box;
    box.lambda = spec.box.half_side();
    box.N = spec.N;
    box.density = spec.density();
    box.acceptance = ens.acceptance_rate;
    for (const auto& f : funcs) {
      std::vector<double> vals;
      vals.reserve(finals.size());
      for (const auto& g : finals) vals.push_back(pairing(f.f, g));
      box.window_observables.push_back(batch_means(vals, 32));
    }
    window_profiles(finals, spec.box, schedule.window_half, schedule.bins, box.k1_window, box.k2_window);
    const CylinderObservable F{OuterFunction::linear({1.0}), {funcs.front()}};
    if (steps >= 2) box.martingale_z = check_martingale(ens, F, model, dp, 0.5 * dp.t_end, dp.t_end).increment_z;
    if (schedule.tightness) {
      const double lift = 4.0 * schedule.window_half;
      box.tightness_slope = tightness_moment(ens, model, dp, window_metric(schedule.pot, schedule.beta, lift, schedule.metric),
                                             Region::cube(schedule.dim, lift), 0.0, schedule.lags)
                                .slope;
    }
    rep.boxes.push_back(std::move(box));
  }
  std::vector<std::vector<Estimate>> k1, k2;
  for (const auto& b : rep.boxes) {
    k1.push_back(b.k1_window);
    k2.push_back(b.k2_window);
  }
  for (int l = 0; l < schedule.window_functions; ++l) {
    std::vector<std::vector<Estimate>> obs;
    for (const auto& b : rep.boxes) obs.push_back({b.window_observables[l]});
    rep.rows.push_back(stabilization_row("window_f" + std::to_string(l), obs));
  }
  rep.rows.push_back(stabilization_row("k1_window", k1));
  rep.rows.push_back(stabilization_row("k2_window", k2));
  rep.pass = std::all_of(rep.rows.begin(), rep.rows.end(), [](const auto& r) { return r.pass; });
  return rep;
}

// ---------------------------------------------------------------------------
// Command line

namespace {

struct Context {
  std::string command;
  Config cfg;
  std::uint64_t seed = 1;
  fs::path out;
  std::vector<std::string> artifacts;

  fs::path artifact(const std::string& name) {
    artifacts.push_back(name);
    return out / name;
  }
};

struct CommandResult {
  bool pass = false;
  json report;
};

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::trunc);
  if (!f) throw Error(ErrorKind::ConfigError, "cannot write " + p.string());
  f << text;
}

std::string csv_number(double v) {
  std::ostringstream o;
  o << std::setprecision(17) << v;
  return o.str();
}

GibbsEnsemble ensemble_for(Context& ctx) {
  if (ctx.cfg.has("input.ensemble")) return load_ensemble(ctx.cfg.get_string("input.ensemble", ""));
  return sample_canonical(ensemble_from_config(ctx.cfg), mcmc_from_config(ctx.cfg), ctx.seed);
}

// Query-only oracle feasibility, matching the QuadratureOracle limits.
bool oracle_feasible(int N, int dim) { return N <= 3 && dim <= 2; }

CommandResult cmd_sample_gibbs(Context& ctx) {
  const GibbsEnsemble ens = ensemble_for(ctx);
  persist_snapshot(ctx.artifact("ensemble.snap"), ens);
  std::ostringstream csv;
  csv << "sample,energy\n";
  for (std::size_t i = 0; i < ens.energies.size(); ++i) csv << i << "," << csv_number(ens.energies[i]) << "\n";
  write_text(ctx.artifact("energies.csv"), csv.str());
  const double vz = velocity_variance_zscore(ens);
  CommandResult r;
  r.report = {{"samples", ens.samples.size()},
              {"acceptance_rate", ens.acceptance_rate},
              {"acceptance_in_advisory_band", ens.acceptance_rate >= 0.2 && ens.acceptance_rate <= 0.6},
              {"energy_autocorr_time", ens.energy_autocorr_time},
              {"step_sizes", ens.step_sizes},
              {"mean_energy", to_json(batch_means(ens.energies, 32))},
              {"velocity_variance_z", vz}};
  r.pass = vz < 4.0;
  return r;
}

CommandResult cmd_run_dynamics(Context& ctx) {
  const GibbsEnsemble ens = ensemble_for(ctx);
  const PeriodicPotential pp(ens.spec.pot, ens.spec.box, ens.spec.policy);
  const ForceModel model = periodic_force_model(pp);
  const DynamicsParams dp = dynamics_from_config(ctx.cfg, ctx.seed);
  std::vector<double> times;
  const int frames = 100;
  for (int k = 0; k <= frames; ++k) times.push_back(dp.t_end * k / frames);
  const Trajectory tr = run_trajectory(ens.samples.front(), model, ens.spec.box, dp, times);
  persist_snapshot(ctx.artifact("trajectory.snap"), tr);
  std::ostringstream csv;
  csv << "t,energy,kinetic\n";
  bool finite = true;
  for (std::size_t i = 0; i < tr.times.size(); ++i) {
    const double e = model.energy(tr.states[i].x);
    double k = 0.0;
    for (const auto& v : tr.states[i].v) k += dot(v, v);
    finite = finite && std::isfinite(e) && std::isfinite(k);
    csv << csv_number(tr.times[i]) << "," << csv_number(e) << "," << csv_number(k) << "\n";
  }
  write_text(ctx.artifact("trajectory.csv"), csv.str());
  CommandResult r;
  r.report = {{"frames", tr.times.size()},
              {"max_snap_error", tr.max_snap_error},
              {"stability_advisory_ok", dp.stability_advisory_ok()}};
  r.pass = finite;
  return r;
}

void write_profile(Context& ctx, const std::string& name, const CorrelationEstimate& e,
                   const CorrelationEstimate* oracle) {
  std::ostringstream csv;
  csv << "bin,center0,value,se,count" << (oracle ? ",oracle" : "") << "\n";
  for (std::size_t k = 0; k < e.bins(); ++k) {
    csv << k << "," << csv_number(e.center(k)[0]) << "," << csv_number(e.values[k]) << "," << csv_number(e.se[k])
        << "," << e.counts[k];
    if (oracle) csv << "," << csv_number(oracle->values[k]);
    csv << "\n";
  }
  write_text(ctx.artifact(name), csv.str());
}

CommandResult cmd_estimate_correlations(Context& ctx) {
  const GibbsEnsemble ens = ensemble_for(ctx);
  const int bins = static_cast<int>(ctx.cfg.get_long("checks.bins", 64));
  const long min_count = ctx.cfg.get_long("checks.min_count", 50);
  const auto k1 = estimate_correlation(ens, 1, bins);
  const auto k2 = estimate_correlation(ens, 2, bins);
  CommandResult r;
  r.report["k1_integral"] = k1.integral();
  r.report["k2_integral"] = k2.integral() * ens.spec.box.volume();
  r.pass = std::abs(k1.integral() - ens.spec.N) <= 1e-9 * std::max(1, ens.spec.N);
  if (oracle_feasible(ens.spec.N, ens.spec.box.dim()) && ens.spec.N >= 2) {
    const QuadratureOracle oracle(ens.spec, {64, 1 << 16, 1024, 1e-7});
    const auto o2 = oracle_correlation(oracle, 2, bins);
    // Populated bins must all sit within 4 SE, with mean squared z below 2.
    long used = 0;
    double z2 = 0.0, zmax = 0.0;
    for (std::size_t k = 0; k < k2.bins(); ++k) {
      if (k2.counts[k] < min_count || !(k2.se[k] > 0.0)) continue;
      ++used;
      const double z = std::abs(k2.values[k] - o2.values[k]) / k2.se[k];
      z2 += z * z;
      zmax = std::max(zmax, z);
    }
    const double mean_z2 = used > 0 ? z2 / static_cast<double>(used) : kInf;
    r.report["oracle_bins_compared"] = used;
    r.report["oracle_max_z"] = zmax;
    r.report["oracle_mean_z2"] = mean_z2;
    r.pass = r.pass && used > 0 && zmax < 4.0 && mean_z2 < 2.0;
    write_profile(ctx, "k1.csv", k1, nullptr);
    write_profile(ctx, "k2.csv", k2, &o2);
  } else {
    write_profile(ctx, "k1.csv", k1, nullptr);
    write_profile(ctx, "k2.csv", k2, nullptr);
  }
  return r;
}

CommandResult cmd_check_ruelle(Context& ctx) {
  const EnsembleSpec base = ensemble_from_config(ctx.cfg);
  const auto lambdas = ctx.cfg.get_list("checks.lambdas", {2.0, 4.0, 8.0});
  const double rho = ctx.cfg.get_double("checks.rho", base.density());
  const bool use_mcmc = ctx.cfg.get_bool("checks.use_mcmc", false);
  const int bins = static_cast<int>(ctx.cfg.get_long("checks.bins", 64));
  const long min_count = ctx.cfg.get_long("checks.min_count", 50);
  const int d = base.box.dim();
  const auto counts = counts_for_density(rho, d, lambdas);
  for (std::size_t i = 0; i < lambdas.size(); ++i)
    if (!oracle_feasible(counts[i], d) && !use_mcmc)
      throw Error(ErrorKind::ConfigError,
                  "N=" + std::to_string(counts[i]) + " at lambda=" + csv_number(lambdas[i]) +
                      " is beyond the quadrature oracle (N <= 3, d <= 2); set checks.use_mcmc=true to sample it");
  std::vector<RuellePoint> points;
  json boxes = json::array();
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    EnsembleSpec spec = base;
    spec.box = BoxGeometry(d, lambdas[i]);
    spec.N = counts[i];
    RuellePoint p;
    std::string method;
    if (oracle_feasible(spec.N, d)) {
      const QuadratureOracle oracle(spec, {64, 1 << 16, 1024, 1e-7});
      p = ruelle_point(oracle, bins);
      method = "quadrature";
    } else {
      const GibbsEnsemble ens = sample_canonical(spec, mcmc_from_config(ctx.cfg), derive_seed(ctx.seed, i));
      p = ruelle_point(lambdas[i], spec.N, estimate_correlation(ens, 1, std::max(1, bins / 4)),
                       estimate_correlation(ens, 2, bins), min_count);
      method = "mcmc";
    }
    points.push_back(p);
    boxes.push_back({{"lambda", p.lambda}, {"N", p.N}, {"xi_hat", p.xi_hat}, {"zeta_hat", p.zeta_hat},
                     {"method", method}});
  }
  const RuelleReport rep = check_ruelle(points, ctx.cfg.get_double("checks.tolerance", 0.2));
  CommandResult r;
  r.report = {{"boxes", boxes},
              {"xi_variation", rep.xi_variation},
              {"zeta_variation", rep.zeta_variation},
              {"finite", rep.finite},
              {"stable", rep.stable},
              {"criterion", "stability across the lambda sweep (operational choice)"}};
  r.pass = rep.pass;
  return r;
}

CommandResult cmd_check_partition_ratio(Context& ctx) {
  const EnsembleSpec base = ensemble_from_config(ctx.cfg);
  const bool use_mcmc = ctx.cfg.get_bool("checks.use_mcmc", true);
  const int insertions = static_cast<int>(ctx.cfg.get_long("checks.insertions", 16));
  const double ceiling = ctx.cfg.get_double("checks.ceiling", 1e6);
  const auto counts = ctx.cfg.get_list("checks.counts", {0.0, 1.0, 2.0});
  std::vector<PartitionRatioReport> points;
  json rows = json::array();
  bool agree = true;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    EnsembleSpec spec = base;
    spec.N = static_cast<int>(counts[i]);
    std::optional<PartitionRatioReport> q, m;
    if (oracle_feasible(spec.N + 1, spec.box.dim())) q = partition_ratio_quadrature(spec, {64, 1 << 16, 1024, 1e-7});
    if (use_mcmc && spec.N >= 1) {
      const GibbsEnsemble ens = sample_canonical(spec, mcmc_from_config(ctx.cfg), derive_seed(ctx.seed, i));
      m = partition_ratio_insertion(ens, insertions, derive_seed(ctx.seed, 1000 + i));
    }
    if (!q && !m)
      throw Error(ErrorKind::ConfigError, "N=" + std::to_string(spec.N) + " needs checks.use_mcmc=true");
    json row = {{"N", spec.N}, {"density", spec.density()}};
    if (q) {
      row["quadrature"] = {{"ratio", q->ratio}, {"error", q->ratio_se}};
      points.push_back(*q);
    }
    if (m) {
      row["insertion"] = {{"ratio", m->ratio}, {"se", m->ratio_se}};
      points.push_back(*m);
    }
    if (q && m) {
      const double z = std::abs(q->ratio - m->ratio) / std::max(std::hypot(m->ratio_se, q->ratio_se), 1e-300);
      row["agreement_z"] = z;
      agree = agree && z < 3.0;
    }
    rows.push_back(row);
  }
  const RatioSweepReport rep = summarize_ratio_sweep(points, ceiling);
  CommandResult r;
  r.report = {{"points", rows}, {"k_hat", rep.k_hat}, {"ceiling", ceiling}, {"methods_agree", agree}};
  r.pass = rep.pass && agree;
  return r;
}

TestFunction configured_test_function(const Config& c, int dim) {
  TestFunctionSpec s;
  s.width = c.get_double("test_function.width", 0.8);
  s.plateau = c.get_double("test_function.plateau", 0.0);
  if (s.plateau > 0.0) s.profile = SpatialProfile::Plateau;
  s.p1 = c.get_double("test_function.p1", 1.0);
  s.v_scale = c.get_double("test_function.v_scale", 0.0);
  return make_test_function(dim, s);
}

CommandResult cmd_check_martingale(Context& ctx) {
  const GibbsEnsemble ens = ensemble_for(ctx);
  const PeriodicPotential pp(ens.spec.pot, ens.spec.box, ens.spec.policy);
  const ForceModel model = periodic_force_model(pp);
  const DynamicsParams dp = dynamics_from_config(ctx.cfg, ctx.seed);
  const TestFunction f = configured_test_function(ctx.cfg, ens.spec.box.dim());
  const CylinderObservable F{OuterFunction::sine({1.0}, 0.3), {f}};
  const double s = ctx.cfg.get_double("checks.s", 0.5 * dp.t_end);
  const double t = ctx.cfg.get_double("checks.t", dp.t_end);
  const MartingaleReport m = check_martingale(ens, F, model, dp, s, t);
  const QuadraticVariationReport q = check_quadratic_variation(ens, f, model, dp, t);
  json tested = json::array();
  for (std::size_t k = 0; k < m.tested.size(); ++k)
    tested.push_back({{"name", m.tested_names[k]}, {"estimate", to_json(m.tested[k])}, {"z", m.tested_z[k]}});
  CommandResult r;
  r.report = {{"increment", to_json(m.increment)},
              {"increment_z", m.increment_z},
              {"tested", tested},
              {"qv_ratio", q.ratio},
              {"qv_ratio_se", q.ratio_se},
              {"qv_realized", to_json(q.realized)},
              {"qv_predicted", to_json(q.predicted)}};
  r.pass = m.pass && q.pass;
  return r;
}

std::vector<CylinderObservable> random_cylinders(int count, const BoxGeometry& box, std::uint64_t seed) {
  std::vector<CylinderObservable> out;
  const double lam = box.half_side();
  for (int k = 0; k < count; ++k) {
    CounterRng rng(seed, static_cast<std::uint32_t>(k), 77);
    TestFunctionSpec s;
    for (int i = 0; i < box.dim(); ++i) s.center[i] = rng.uniform(-0.5 * lam, 0.5 * lam);
    s.width = lam / 3.0;
    s.p1 = rng.uniform(-1.0, 1.0);
    s.v_scale = 2.0;
    const double c = rng.uniform(-1.0, 1.0);
    const double off = rng.uniform(0.0, std::numbers::pi);
    out.push_back({OuterFunction::sine({c}, off), {make_test_function(box.dim(), s)}});
  }
  return out;
}

CommandResult cmd_check_invariance(Context& ctx) {
  const GibbsEnsemble ens = ensemble_for(ctx);
  const PeriodicPotential pp(ens.spec.pot, ens.spec.box, ens.spec.policy);
  const ForceModel model = periodic_force_model(pp);
  const DynamicsParams dp = dynamics_from_config(ctx.cfg, ctx.seed);
  const auto obs = random_cylinders(static_cast<int>(ctx.cfg.get_long("checks.observables", 3)), ens.spec.box,
                                    derive_seed(ctx.seed, 77));
  const InvarianceReport rep = check_invariance(ens, model, dp, ctx.cfg.get_double("checks.T", dp.t_end), obs);
  json rows = json::array();
  for (const auto& c : rep.comparisons)
    rows.push_back({{"name", c.name}, {"mean0", c.mean0}, {"meanT", c.meanT}, {"mean_z", c.mean_z},
                    {"ks", c.ks}, {"ks_critical", c.ks_critical}, {"pass", c.pass}});
  CommandResult r;
  r.report = {{"T", rep.T}, {"samples", rep.samples}, {"comparisons", rows}};
  r.pass = rep.pass;
  return r;
}


CommandResult cmd_check_tightness(Context& ctx) {
  const EnsembleSpec base = ensemble_from_config(ctx.cfg);
  const auto lambdas = ctx.cfg.get_list("checks.lambdas", {2.0, 4.0});
  const double rho = ctx.cfg.get_double("checks.rho", base.density());
  const auto lags = ctx.cfg.get_list("checks.lags", default_lags(dynamics_from_config(ctx.cfg, 0).dt));
  const double s0 = ctx.cfg.get_double("checks.s0", 0.0);
  const double wh = ctx.cfg.get_double("checks.window", 4.0);
  const MetricWeights weights = metric_weights_from_config(ctx.cfg);
  const auto counts = counts_for_density(rho, base.box.dim(), lambdas);
  json boxes = json::array();
  bool slopes = true;
  double cmin = kInf, cmax = 0.0;
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    EnsembleSpec spec = base;
    spec.box = BoxGeometry(base.box.dim(), lambdas[i]);
    spec.N = counts[i];
    const std::uint64_t seed = derive_seed(ctx.seed, i);
    const GibbsEnsemble ens = sample_canonical(spec, mcmc_from_config(ctx.cfg), seed);
    const PeriodicPotential pp(spec.pot, spec.box, spec.policy);
    DynamicsParams dp = dynamics_from_config(ctx.cfg, seed);
    const TightnessReport t = tightness_moment(ens, periodic_force_model(pp), dp, window_metric(spec.pot, spec.beta, wh, weights),
                                               Region::cube(spec.box.dim(), wh), s0, lags);
    slopes = slopes && t.pass;
    cmin = std::min(cmin, t.C);
    cmax = std::max(cmax, t.C);
    boxes.push_back({{"lambda", lambdas[i]}, {"N", spec.N}, {"slope", t.slope}, {"slope_se", t.slope_se},
                     {"C", t.C}, {"lags", t.lags}, {"moments", to_json(t.moments)}});
  }
  const double cvar = cmax / cmin - 1.0;
  CommandResult r;
  r.report = {{"boxes", boxes},
              {"C_variation", cvar},
              {"metric", to_json(weights)},
              {"criterion", "slope >= 1.4 and C variation < 0.5 (operational)"}};
  r.pass = slopes && cvar < 0.5;
  return r;
}

CommandResult cmd_nv_limit(Context& ctx) {
  const NvSchedule sched = schedule_from_config(ctx.cfg, ctx.seed);
  const NvReport rep = run_nv_limit(sched, ctx.seed);
  json boxes = json::array();
  for (const auto& b : rep.boxes)
    boxes.push_back({{"lambda", b.lambda},
                     {"N", b.N},
                     {"density", b.density},
                     {"acceptance", b.acceptance},
                     {"window_observables", to_json(b.window_observables)},
                     {"k1_window", to_json(b.k1_window)},
                     {"k2_window", to_json(b.k2_window)},
                     {"martingale_z", b.martingale_z},
                     {"tightness_slope", b.tightness_slope}});
  json rows = json::array();
  std::ostringstream csv;
  csv << "quantity,n,delta,delta_se\n";
  for (const auto& row : rep.rows) {
    rows.push_back({{"quantity", row.quantity},
                    {"delta", row.delta},
                    {"delta_se", row.delta_se},
                    {"decreasing", row.decreasing},
                    {"final_within_3se", row.final_within},
                    {"pass", row.pass}});
    for (std::size_t k = 0; k < row.delta.size(); ++k)
      csv << row.quantity << "," << k + 2 << "," << csv_number(row.delta[k]) << "," << csv_number(row.delta_se[k])
          << "\n";
  }
  write_text(ctx.artifact("stabilization.csv"), csv.str());
  CommandResult r;
  r.report = {{"boxes", boxes},
              {"stabilization", rows},
              {"metric", to_json(sched.metric)},
              {"criterion", "engineering rule: Delta non-increasing within 3 SE over the last boxes, final Delta within 3 SE of 0"}};
  r.pass = rep.pass;
  return r;
}

CommandResult cmd_verify_potential(Context& ctx) {
  const EnsembleSpec base = ensemble_from_config(ctx.cfg);
  const auto lambdas = ctx.cfg.get_list("checks.lambdas", {2.0, 4.0, 8.0});
  BoundsSampleGrid grid;
  grid.beta = base.beta;
  grid.seed = ctx.seed;
  grid.points_per_dim = base.box.dim() == 1 ? 201 : 41;
  grid.random_configs = 50;
  const UniformBoundsReport rep = check_uniform_bounds(base.pot, lambdas, base.policy, grid);
  json boxes = json::array();
  for (const auto& b : rep.boxes)
    boxes.push_back({{"lambda", b.lambda},
                     {"inf_phi_lambda", b.inf_phi_lambda},
                     {"M_tilde", b.M_tilde},
                     {"lower_bound_ok", b.lower_bound_ok},
                     {"tail_ratio_sup", b.tail_ratio_sup},
                     {"G_tilde", b.G_tilde},
                     {"tail_ok", b.tail_ok},
                     {"stability_B", b.stability_B},
                     {"cell_quadratic_A", b.cell_quadratic_A},
                     {"grad_norm_p", {b.grad_norm_p[0], b.grad_norm_p[1], b.grad_norm_p[2]}}});
  CommandResult r;
  r.report = {{"boxes", boxes},
              {"lattice_zeta", rep.lattice_zeta},
              {"sup_grad_norm_p", {rep.sup_grad_norm_p[0], rep.sup_grad_norm_p[1], rep.sup_grad_norm_p[2]}}};
  r.pass = rep.all_ok;
  return r;
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream o;
  o << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return o.str();
}

using Handler = CommandResult (*)(Context&);

const std::vector<std::pair<std::string, Handler>>& handlers() {
  static const std::vector<std::pair<std::string, Handler>> h = {
      {"sample-gibbs", cmd_sample_gibbs},
      {"run-dynamics", cmd_run_dynamics},
      {"estimate-correlations", cmd_estimate_correlations},
      {"check-ruelle", cmd_check_ruelle},
      {"check-partition-ratio", cmd_check_partition_ratio},
      {"check-martingale", cmd_check_martingale},
      {"check-invariance", cmd_check_invariance},
      {"check-tightness", cmd_check_tightness},
      {"nv-limit", cmd_nv_limit},
      {"verify-potential", cmd_verify_potential},
  };
  return h;
}

int exit_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::ConfigError:
    case ErrorKind::InvalidArgument:
    case ErrorKind::DensityExceedsRhoMax:
    case ErrorKind::SupportTooLarge:
    case ErrorKind::NonSummableTail:
      return 1;
    default:
      return 2;
  }
}

int run_command(const std::string& name, Handler handler, Context& ctx, const std::vector<std::string>& overrides,
                int threads) {
  fs::create_directories(ctx.out);
  json manifest = {{"command", name},
                   {"config", ctx.cfg.to_ini()},
                   {"overrides", overrides},
                   {"seed", ctx.seed},
                   {"threads", threads},
                   {"code_version", code_version()},
                   {"started", timestamp()}};
  json report;
  int code = 0;
  try {
    CommandResult r = handler(ctx);
    report = std::move(r.report);
    report["pass"] = r.pass;
    code = r.pass ? 0 : 2;
    std::cout << name << ": " << (r.pass ? "PASS" : "FAIL") << "\n";
  } catch (const Error& e) {
    // Partial results stay on disk next to the failure marker.
    report = {{"status", "error"}, {"error", to_string(e.kind())}, {"message", e.what()}, {"pass", false}};
    code = exit_code_for(e.kind());
    std::cerr << name << ": " << e.what() << "\n";
    if (code == 1) std::cerr << config_schema_help();
  }
  write_text(ctx.artifact("report.json"), report.dump(2) + "\n");
  manifest["finished"] = timestamp();
  manifest["artifacts"] = ctx.artifacts;
  manifest["exit_code"] = code;
  write_text(ctx.out / "manifest.json", manifest.dump(2) + "\n");
  return code;
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args) {
  CLI::App app{"Finite-volume Gibbs and kinetic Langevin experiments"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  bool seed_given = false;
  int threads = 0;
  bool deterministic = false;
  app.add_option_function<std::uint64_t>(
      "--seed", [&](std::uint64_t s) { seed = s, seed_given = true; }, "master seed");
  app.add_option("--threads", threads, "worker threads (NVL_THREADS)");
  app.add_flag("--deterministic", deterministic, "serial execution");

  std::string config_path, out_dir, manifest_path;
  std::vector<std::string> overrides;
  std::string chosen;
  for (const auto& [name, handler] : handlers()) {
    auto* sub = app.add_subcommand(name, "run " + name);
    sub->add_option("--config", config_path, "INI config file")->required();
    sub->add_option("--set", overrides, "override section.key=value");
    sub->add_option("--out", out_dir, "output directory (default $NVL_OUT or ./out)");
    sub->add_option("--seed", seed, "master seed")->each([&](const std::string&) { seed_given = true; });
    sub->callback([&chosen, n = name] { chosen = n; });
  }
  auto* replay = app.add_subcommand("replay", "re-run a recorded manifest");
  replay->add_option("--manifest", manifest_path, "manifest.json")->required();
  replay->add_option("--out", out_dir, "output directory")->required();
  replay->callback([&chosen] { chosen = "replay"; });

  std::vector<std::string> argv_rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help() << config_schema_help();
    return 1;
  }

  if (deterministic) threads = 1;
  if (threads > 0) setenv("NVL_THREADS", std::to_string(threads).c_str(), 1);
  if (out_dir.empty()) {
    const char* env = std::getenv("NVL_OUT");
    out_dir = env ? env : "out";
  }

  try {
    if (chosen == "replay") {
      std::ifstream in(manifest_path);
      if (!in) throw Error(ErrorKind::ConfigError, "cannot read manifest " + manifest_path);
      const json m = json::parse(in);
      Context ctx;
      ctx.command = m.at("command").get<std::string>();
      ctx.cfg = Config::from_string(m.at("config").get<std::string>());
      ctx.seed = m.at("seed").get<std::uint64_t>();
      ctx.out = out_dir;
      for (const auto& [name, handler] : handlers())
        if (name == ctx.command) return run_command(name, handler, ctx, {}, 1);
      throw Error(ErrorKind::ConfigError, "manifest names an unknown command");
    }
    Context ctx;
    ctx.command = chosen;
    ctx.cfg = Config::from_file(config_path);
    for (const auto& o : overrides) ctx.cfg.apply_override(o);
    ctx.seed = seed_given ? seed : static_cast<std::uint64_t>(ctx.cfg.get_long("run.seed", 1));
    ctx.out = out_dir;
    for (const auto& [name, handler] : handlers())
      if (name == chosen) return run_command(name, handler, ctx, overrides, threads > 0 ? threads : thread_count());
  } catch (const Error& e) {
    std::cerr << e.what() << "\n" << config_schema_help();
    return exit_code_for(e.kind()) == 1 ? 1 : 2;
  } catch (const json::exception& e) {
    std::cerr << "manifest: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

int cli_dispatch(int argc, char** argv) { return cli_dispatch(std::vector<std::string>(argv, argv + argc)); }

}  // namespace nvl
