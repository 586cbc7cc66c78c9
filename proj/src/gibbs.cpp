#include "nvl/gibbs.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <mutex>
#include <numeric>

#include "nvl/errors.hpp"
#include "nvl/parallel.hpp"
#include "nvl/rng.hpp"

namespace nvl {

namespace {

enum Purpose : std::uint32_t { kJitter = 1, kMoves = 2, kMarks = 3, kInsert = 4 };

double factorial(int n) {
  double f = 1.0;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

}  // namespace

void EnsembleSpec::validate() const {
  if (N < 0) throw Error(ErrorKind::InvalidArgument, "particle count must be >= 0");
  if (!(beta > 0.0)) throw Error(ErrorKind::InvalidArgument, "beta must be > 0");
  if (pot.dim != box.dim()) throw Error(ErrorKind::InvalidArgument, "potential and box dimensions differ");
  if (density() > rho_max) throw Error(ErrorKind::DensityExceedsRhoMax, "density exceeds rho_max");
}

void repair_start(std::span<Vec> x, const EnsembleSpec& spec, const PeriodicPotential& pp, std::uint64_t seed,
                  std::uint32_t chain) {
  if (std::isfinite(periodic_energy(x, pp))) return;
  CounterRng rng(seed, chain, kJitter | 0x100u);
  const int d = spec.box.dim();
  const double spacing = spec.box.side() / std::ceil(std::pow(static_cast<double>(std::max(spec.N, 1)), 1.0 / d));
  double amp = 0.05 * spacing;
  for (int attempt = 0; attempt < 100; ++attempt) {
    for (auto& p : x) {
      for (int i = 0; i < d; ++i) p[i] += rng.uniform(-amp, amp);
      p = spec.box.wrap(p);
    }
    if (std::isfinite(periodic_energy(x, pp))) return;
    amp = std::min(amp * 1.5, spec.box.half_side());
  }
  throw Error(ErrorKind::SingularStart, "no finite-energy start found by jitter");
}

Positions initial_configuration(const EnsembleSpec& spec, std::uint64_t seed, std::uint32_t chain) {
  spec.validate();
  const int d = spec.box.dim();
  const int n_side = static_cast<int>(std::ceil(std::pow(static_cast<double>(std::max(spec.N, 1)), 1.0 / d) - 1e-9));
  const double spacing = spec.box.side() / n_side;
  CounterRng rng(seed, chain, kJitter);
  Positions x;
  x.reserve(spec.N);
  for (int k = 0; k < spec.N; ++k) {
    Vec p{};
    int t = k;
    for (int i = 0; i < d; ++i) {
      p[i] = -spec.box.half_side() + (t % n_side + 0.5) * spacing + rng.uniform(-0.1, 0.1) * spacing;
      t /= n_side;
    }
    x.push_back(spec.box.wrap(p));
  }
  PeriodicPotential pp(spec.pot, spec.box, spec.policy);
  repair_start(x, spec, pp, seed, chain);
  return x;
}

double mcmc_log_target(const EnsembleSpec& spec, const PeriodicPotential& pp, std::span<const Vec> x,
                       EnergyMode mode) {
  return -spec.beta * periodic_energy(x, pp, mode);
}

double mcmc_log_proposal(const EnsembleSpec& spec, double step, std::span<const Vec> from, std::span<const Vec> to) {
  if (from.size() != to.size() || from.empty()) throw Error(ErrorKind::InvalidArgument, "state sizes differ");
  const int d = spec.box.dim();
  const double L = spec.box.side();
  const int R = static_cast<int>(std::ceil(10.0 * step / L)) + 1;
  auto g = [step](double u) { return std::exp(-0.5 * (u * u) / (step * step)); };
  // Wrapped Gaussian density of the raw displacement; the +r/-r terms are
  // added in pairs so that negating u reproduces the same sum exactly.
  auto wrapped = [&](double u) {
    double s = g(u);
    for (int r = 1; r <= R; ++r) s += g(u + r * L) + g(u - r * L);
    return s / (std::sqrt(2.0 * std::numbers::pi) * step);
  };
  std::size_t moved = from.size();
  for (std::size_t i = 0; i < from.size(); ++i)
    if (!(from[i] == to[i])) {
      if (moved != from.size()) return -kInf;
      moved = i;
    }
  auto one = [&](std::size_t i) {
    double lp = 0.0;
    for (int c = 0; c < d; ++c) lp += std::log(wrapped(to[i][c] - from[i][c]));
    return lp;
  };
  const double logN = std::log(static_cast<double>(from.size()));
  if (moved != from.size()) return one(moved) - logN;
  double s = 0.0;
  for (std::size_t i = 0; i < from.size(); ++i) s += std::exp(one(i));
  return std::log(s) - logN;
}

double mcmc_log_acceptance(double log_target_from, double log_target_to) {
  return std::min(0.0, log_target_to - log_target_from);
}

double mcmc_log_flux(double log_target_from, double log_target_to, double log_proposal) {
  return std::min(log_target_from, log_target_to) + log_proposal;
}

namespace {

struct ChainResult {
  std::vector<MarkedConfiguration> samples;
  std::vector<double> energies;
  long accepted = 0;
  long proposed = 0;
  double step = 0.0;
};

ChainResult run_chain(const EnsembleSpec& spec, const PeriodicPotential& pp, const McmcParams& prm,
                      std::uint64_t seed, std::uint32_t chain) {
  ChainResult out;
  const int d = spec.box.dim();
  const std::size_t N = static_cast<std::size_t>(spec.N);
  Positions x = initial_configuration(spec, seed, chain);
  CounterRng rng(seed, chain, kMoves);
  CounterRng marks(seed, chain, kMarks);
  double step = std::min(prm.initial_step, spec.box.half_side());
  const double vsd = 1.0 / std::sqrt(spec.beta);

  auto move = [&]() -> bool {
    const std::size_t i = static_cast<std::size_t>(rng.below(N));
    Vec y = x[i];
    for (int c = 0; c < d; ++c) y[c] += step * rng.normal();
    y = spec.box.wrap(y);
    const double u = rng.uniform();
    const double dE = periodic_particle_energy(x, i, y, pp, prm.mode) - periodic_particle_energy(x, i, x[i], pp, prm.mode);
    if (dE <= 0.0 || std::log(u) < -spec.beta * dE) {
      x[i] = y;
      return true;
    }
    return false;
  };

  if (N > 0) {
    const long window = 20;
    long acc = 0, tried = 0;
    for (long s = 0; s < prm.burn_in_sweeps; ++s) {
      for (std::size_t k = 0; k < N; ++k) {
        acc += move();
        ++tried;
      }
      if ((s + 1) % window == 0) {
        const double rate = static_cast<double>(acc) / static_cast<double>(tried);
        step = std::clamp(step * std::exp(rate - prm.target_acceptance), 1e-6 * spec.box.half_side(),
                          spec.box.half_side());
        acc = tried = 0;
      }
    }
  }
  out.step = step;
  out.samples.reserve(prm.samples);
  out.energies.reserve(prm.samples);
  for (long s = 0; s < prm.samples; ++s) {
    if (N > 0)
      for (long t = 0; t < prm.thin_sweeps; ++t)
        for (std::size_t k = 0; k < N; ++k) {
          out.accepted += move();
          ++out.proposed;
        }
    MarkedConfiguration g;
    g.dim = d;
    g.x = x;
    g.v.assign(N, Vec{});
    if (prm.with_velocities)
      for (auto& v : g.v)
        for (int c = 0; c < d; ++c) v[c] = vsd * marks.normal();
    out.samples.push_back(std::move(g));
    out.energies.push_back(periodic_energy(x, pp, prm.mode));
  }
  return out;
}

}  // namespace

GibbsEnsemble sample_canonical(const EnsembleSpec& spec, const McmcParams& params, std::uint64_t seed) {
  spec.validate();
  if (params.chains < 1 || params.samples < 1 || params.burn_in_sweeps < 0 || params.thin_sweeps < 1 ||
      !(params.initial_step > 0.0))
    throw Error(ErrorKind::InvalidArgument, "invalid MCMC parameters");
  const PeriodicPotential pp(spec.pot, spec.box, spec.policy);
  std::vector<ChainResult> chains(static_cast<std::size_t>(params.chains));
  parallel_for(chains.size(), [&](std::size_t c) {
    chains[c] = run_chain(spec, pp, params, seed, static_cast<std::uint32_t>(c));
  });
  GibbsEnsemble ens;
  ens.spec = spec;
  ens.seed = seed;
  ens.burn_in_sweeps = params.burn_in_sweeps;
  ens.thin_sweeps = params.thin_sweeps;
  ens.chains = params.chains;
  long acc = 0, tried = 0;
  double tau = 0.0;
  for (auto& c : chains) {
    acc += c.accepted;
    tried += c.proposed;
    ens.step_sizes.push_back(c.step);
    tau = std::max(tau, integrated_autocorr_time(c.energies));
    ens.samples.insert(ens.samples.end(), std::make_move_iterator(c.samples.begin()),
                       std::make_move_iterator(c.samples.end()));
    ens.energies.insert(ens.energies.end(), c.energies.begin(), c.energies.end());
  }
  ens.acceptance_rate = tried > 0 ? static_cast<double>(acc) / static_cast<double>(tried) : 1.0;
  ens.energy_autocorr_time = tau;
  return ens;
}

double velocity_variance_zscore(const GibbsEnsemble& ens) {
  const int d = ens.spec.box.dim();
  double worst = 0.0;
  for (int c = 0; c < d; ++c) {
    std::vector<double> sq;
    for (const auto& g : ens.samples)
      for (const auto& v : g.v) sq.push_back(v[c] * v[c]);
    if (sq.size() < 2) continue;
    const Estimate e = iid_estimate(sq);
    worst = std::max(worst, std::abs(e.mean - 1.0 / ens.spec.beta) / e.se);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Quadrature oracle

namespace {

std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

// Circular autoconvolution of a real table of size M^d, d in {1, 2}.
std::vector<double> autoconvolve(const std::vector<double>& b, int M, int d) {
  const std::size_t n = b.size();
  const std::size_t nc = d == 1 ? static_cast<std::size_t>(M / 2 + 1) : static_cast<std::size_t>(M) * (M / 2 + 1);
  std::vector<double> in(b), out(n);
  std::vector<fftw_complex> spec(nc);
  fftw_plan fwd, bwd;
  {
    std::lock_guard lock(fftw_planner_mutex());
    if (d == 1) {
      fwd = fftw_plan_dft_r2c_1d(M, in.data(), spec.data(), FFTW_ESTIMATE);
      bwd = fftw_plan_dft_c2r_1d(M, spec.data(), out.data(), FFTW_ESTIMATE);
    } else {
      fwd = fftw_plan_dft_r2c_2d(M, M, in.data(), spec.data(), FFTW_ESTIMATE);
      bwd = fftw_plan_dft_c2r_2d(M, M, spec.data(), out.data(), FFTW_ESTIMATE);
    }
  }
  fftw_execute(fwd);
  for (auto& z : spec) {
    const std::complex<double> c(z[0], z[1]);
    const auto sq = c * c;
    z[0] = sq.real();
    z[1] = sq.imag();
  }
  fftw_execute(bwd);
  {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(bwd);
  }
  for (auto& v : out) v /= static_cast<double>(n);
  return out;
}

}  // namespace

QuadratureOracle::QuadratureOracle(EnsembleSpec spec, OracleParams params)
    : spec_(std::move(spec)), pp_(spec_.pot, spec_.box, spec_.policy), params_(params) {
  spec_.validate();
  const int d = spec_.box.dim();
  if (spec_.N > 3 || d > 2 || spec_.N * d > 6)
    throw Error(ErrorKind::InvalidArgument, "quadrature oracle limited to N <= 3, d <= 2");
  const int max_grid = d == 1 ? params_.max_grid_1d : params_.max_grid_2d;
  int M = std::max(params_.initial_grid, 4);
  double prev = compute_Z(M, nullptr);
  while (true) {
    const int M2 = 2 * M;
    if (M2 > max_grid) break;
    std::vector<double> table;
    const double cur = compute_Z(M2, &table);
    Z_err_ = std::abs(cur - prev);
    Z_ = cur;
    M_ = M2;
    table_ = std::move(table);
    if (Z_err_ <= params_.rel_tol * std::abs(cur)) {
      converged_ = true;
      break;
    }
    prev = cur;
    M = M2;
  }
  if (!converged_) throw Error(ErrorKind::QuadratureNotConverged, "partition function did not converge");
  h_ = spec_.box.side() / M_;
}

double QuadratureOracle::pair_weight(const Vec& delta) const {
  if (pp_.spec().identically_zero) return 1.0;
  return std::exp(-spec_.beta * pp_.lattice_sum(delta));
}

double QuadratureOracle::compute_Z(int M, std::vector<double>* table) const {
  const int d = spec_.box.dim();
  const int N = spec_.N;
  const double V = spec_.box.volume();
  const double h = spec_.box.side() / M;
  const std::size_t n = d == 1 ? static_cast<std::size_t>(M) : static_cast<std::size_t>(M) * M;
  std::vector<double> b(n);
  for (std::size_t k = 0; k < n; ++k) {
    Vec delta{};
    delta[0] = static_cast<double>(k % M) * h;
    if (d == 2) delta[1] = static_cast<double>(k / M) * h;
    b[k] = pair_weight(spec_.box.wrap(delta));
  }
  double Z = V;
  if (N == 2) {
    Z = V * std::pow(h, d) * std::accumulate(b.begin(), b.end(), 0.0);
  } else if (N == 3) {
    const auto c = autoconvolve(b, M, d);
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += b[k] * c[k];
    Z = V * std::pow(h, 2 * d) * s;
  } else if (N == 0) {
    Z = 1.0;
  }
  if (table) *table = std::move(b);
  return Z;
}

double QuadratureOracle::conv(const Vec& delta) const {
  const int d = spec_.box.dim();
  const int M = M_;
  const std::size_t n = table_.size();
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (table_[k] == 0.0) continue;
    Vec xi{};
    xi[0] = static_cast<double>(k % M) * h_;
    if (d == 2) xi[1] = static_cast<double>(k / M) * h_;
    s += table_[k] * pair_weight(delta - xi);
  }
  return s * std::pow(h_, d);
}

double QuadratureOracle::k(std::span<const Vec> x) const {
  const int n = static_cast<int>(x.size());
  const int N = spec_.N;
  const int d = spec_.box.dim();
  if (n > N) throw Error(ErrorKind::InvalidArgument, "correlation order exceeds N");
  if (n == 0) return 1.0;
  const double pref = factorial(N) / factorial(N - n) / Z_;
  double w = 1.0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) w *= pair_weight(x[i] - x[j]);
  if (n == N) return pref * w;
  if (n == N - 1) {
    if (w == 0.0) return 0.0;
    // Integrate the one free particle over the periodic grid.
    double s = 0.0;
    const std::size_t cells = table_.size();
    for (std::size_t k = 0; k < cells; ++k) {
      Vec xi{};
      xi[0] = -spec_.box.half_side() + static_cast<double>(k % M_) * h_;
      if (d == 2) xi[1] = -spec_.box.half_side() + static_cast<double>(k / M_) * h_;
      double p = 1.0;
      for (int i = 0; i < n && p != 0.0; ++i) p *= pair_weight(xi - x[i]);
      s += p;
    }
    return pref * w * s * std::pow(h_, d);
  }
  // n = 1 with N = 3: translation invariance.
  return N / spec_.box.volume();
}

double QuadratureOracle::k2_separation(const Vec& delta) const {
  const Vec pts[2] = {Vec{}, delta};
  return k(pts);
}

double QuadratureOracle::k2_boltzmann_ratio(const Vec& delta) const {
  const int N = spec_.N;
  if (N < 2) return 0.0;
  if (N == 2) return 2.0 / Z_;
  return 6.0 / Z_ * conv(delta);
}

PartitionRatioReport partition_ratio_quadrature(const EnsembleSpec& spec, const OracleParams& params) {
  EnsembleSpec next = spec;
  next.N = spec.N + 1;
  const QuadratureOracle a(spec, params), b(next, params);
  PartitionRatioReport r;
  r.N = spec.N;
  r.lambda = spec.box.half_side();
  r.density = spec.density();
  r.ratio = spec.box.volume() * a.Z() / b.Z();
  r.ratio_se = r.ratio * (a.Z_error() / a.Z() + b.Z_error() / b.Z());
  r.method = "quadrature";
  r.finite = std::isfinite(r.ratio) && r.ratio > 0.0;
  return r;
}

PartitionRatioReport partition_ratio_insertion(const GibbsEnsemble& ens, int insertions_per_sample,
                                               std::uint64_t seed) {
  if (insertions_per_sample < 1) throw Error(ErrorKind::InvalidArgument, "need at least one insertion");
  const auto& spec = ens.spec;
  const PeriodicPotential pp(spec.pot, spec.box, spec.policy);
  const int d = spec.box.dim();
  const double lam = spec.box.half_side();
  CounterRng rng(seed, 0, kInsert);
  std::vector<double> w;
  w.reserve(ens.samples.size());
  for (const auto& g : ens.samples) {
    double s = 0.0;
    for (int t = 0; t < insertions_per_sample; ++t) {
      Vec xi{};
      for (int c = 0; c < d; ++c) xi[c] = rng.uniform(-lam, lam);
      double e = 0.0;
      for (const auto& x : g.x) e += pp.lattice_sum(xi - x);
      s += std::exp(-spec.beta * e);
    }
    w.push_back(s / insertions_per_sample);
  }
  const Estimate e = batch_means(w, 32);
  PartitionRatioReport r;
  r.N = spec.N;
  r.lambda = lam;
  r.density = spec.density();
  r.ratio = 1.0 / e.mean;
  r.ratio_se = e.se / (e.mean * e.mean);
  r.method = "insertion";
  r.finite = std::isfinite(r.ratio) && r.ratio > 0.0;
  return r;
}

RatioSweepReport summarize_ratio_sweep(std::vector<PartitionRatioReport> points, double ceiling) {
  RatioSweepReport rep;
  rep.points = std::move(points);
  bool finite = !rep.points.empty();
  for (const auto& p : rep.points) {
    finite = finite && p.finite;
    rep.k_hat = std::max(rep.k_hat, p.ratio);
  }
  rep.pass = finite && rep.k_hat <= ceiling;
  return rep;
}

// ---------------------------------------------------------------------------
// Correlation estimates

Vec CorrelationEstimate::center(std::size_t flat) const {
  Vec c{};
  for (int i = 0; i < dim; ++i) {
    c[i] = lo + (static_cast<double>(flat % bins_per_dim) + 0.5) * width;
    flat /= bins_per_dim;
  }
  return c;
}

double CorrelationEstimate::bin_volume() const { return std::pow(width, dim); }

double CorrelationEstimate::integral() const {
  return std::accumulate(values.begin(), values.end(), 0.0) * bin_volume();
}

namespace {

std::size_t bin_index(const Vec& x, int dim, int B, double lo, double width) {
  std::size_t flat = 0, stride = 1;
  for (int i = 0; i < dim; ++i) {
    int k = static_cast<int>(std::floor((x[i] - lo) / width));
    k = std::clamp(k, 0, B - 1);
    flat += stride * static_cast<std::size_t>(k);
    stride *= static_cast<std::size_t>(B);
  }
  return flat;
}

// Accumulates per-batch sums so the SE is a batch-means estimate.
struct BatchedHistogram {
  std::size_t bins, batches;
  std::vector<double> sums;  // batch-major
  std::vector<long> per_batch;

  BatchedHistogram(std::size_t nb, std::size_t nbatch) : bins(nb), batches(nbatch), sums(nb * nbatch, 0.0), per_batch(nbatch, 0) {}

  void finish(double scale, std::vector<double>& value, std::vector<double>& se) const {
    value.assign(bins, 0.0);
    se.assign(bins, 0.0);
    long total = 0;
    for (auto c : per_batch) total += c;
    std::size_t used = 0;
    for (auto c : per_batch) used += c > 0;
    for (std::size_t k = 0; k < bins; ++k) {
      double s = 0.0;
      for (std::size_t b = 0; b < batches; ++b) s += sums[b * bins + k];
      value[k] = scale * s / static_cast<double>(total);
      if (used < 2) continue;
      double var = 0.0;
      for (std::size_t b = 0; b < batches; ++b) {
        if (per_batch[b] == 0) continue;
        const double m = scale * sums[b * bins + k] / static_cast<double>(per_batch[b]);
        var += (m - value[k]) * (m - value[k]);
      }
      var /= static_cast<double>(used - 1);
      se[k] = std::sqrt(var / static_cast<double>(used));
    }
  }
};

}  // namespace

CorrelationEstimate estimate_correlation(const GibbsEnsemble& ens, int order_n, int bins_per_dim) {
  if (order_n != 1 && order_n != 2) throw Error(ErrorKind::InvalidArgument, "order must be 1 or 2");
  if (bins_per_dim < 1) throw Error(ErrorKind::InvalidArgument, "need at least one bin");
  const auto& spec = ens.spec;
  const int d = spec.box.dim();
  CorrelationEstimate est;
  est.order_n = order_n;
  est.dim = d;
  est.bins_per_dim = bins_per_dim;
  est.lo = -spec.box.half_side();
  est.width = spec.box.side() / bins_per_dim;
  est.method = "mcmc";
  std::size_t nb = 1;
  for (int i = 0; i < d; ++i) nb *= static_cast<std::size_t>(bins_per_dim);
  const std::size_t S = ens.samples.size();
  const std::size_t batches = std::min<std::size_t>(32, std::max<std::size_t>(S, 1));
  BatchedHistogram hist(nb, batches), boltz(nb, batches);
  est.counts.assign(nb, 0);
  std::optional<PeriodicPotential> pp;
  if (order_n == 2) pp.emplace(spec.pot, spec.box, spec.policy);
  for (std::size_t s = 0; s < S; ++s) {
    const std::size_t b = s * batches / S;
    ++hist.per_batch[b];
    ++boltz.per_batch[b];
    const auto& x = ens.samples[s].x;
    if (order_n == 1) {
      for (const auto& p : x) {
        const auto k = bin_index(p, d, bins_per_dim, est.lo, est.width);
        hist.sums[b * nb + k] += 1.0;
        ++est.counts[k];
      }
      continue;
    }
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t j = 0; j < x.size(); ++j) {
        if (i == j) continue;
        const Vec delta = spec.box.min_image_delta(x[j], x[i]);
        const auto k = bin_index(delta, d, bins_per_dim, est.lo, est.width);
        hist.sums[b * nb + k] += 1.0;
        boltz.sums[b * nb + k] += std::exp(spec.beta * pp->lattice_sum(delta));
        ++est.counts[k];
      }
  }
  const double vol = est.bin_volume();
  const double scale = order_n == 1 ? 1.0 / vol : 1.0 / (vol * spec.box.volume());
  hist.finish(scale, est.values, est.se);
  if (order_n == 2) boltz.finish(scale, est.boltzmann_ratio, est.boltzmann_ratio_se);
  return est;
}

CorrelationEstimate oracle_correlation(const QuadratureOracle& oracle, int order_n, int bins_per_dim) {
  if (order_n != 1 && order_n != 2) throw Error(ErrorKind::InvalidArgument, "order must be 1 or 2");
  const auto& spec = oracle.spec();
  const int d = spec.box.dim();
  CorrelationEstimate est;
  est.order_n = order_n;
  est.dim = d;
  est.bins_per_dim = bins_per_dim;
  est.lo = -spec.box.half_side();
  est.width = spec.box.side() / bins_per_dim;
  est.method = "quadrature";
  std::size_t nb = 1;
  for (int i = 0; i < d; ++i) nb *= static_cast<std::size_t>(bins_per_dim);
  est.values.assign(nb, 0.0);
  est.se.assign(nb, 0.0);
  est.counts.assign(nb, 0);
  if (order_n == 2) {
    est.boltzmann_ratio.assign(nb, 0.0);
    est.boltzmann_ratio_se.assign(nb, 0.0);
  }
  // Bin averages by a midpoint sub-grid, matching what a histogram estimates.
  const int sub = d == 1 ? 8 : 2;
  int nsub = 1;
  for (int i = 0; i < d; ++i) nsub *= sub;
  for (std::size_t k = 0; k < nb; ++k) {
    const Vec c = est.center(k);
    double acc = 0.0, accb = 0.0;
    for (int q = 0; q < nsub; ++q) {
      Vec p = c;
      int t = q;
      for (int i = 0; i < d; ++i) {
        p[i] += ((t % sub + 0.5) / sub - 0.5) * est.width;
        t /= sub;
      }
      if (order_n == 1) {
        const Vec pts[1] = {p};
        acc += oracle.k(pts);
      } else {
        acc += oracle.k2_separation(p);
        accb += oracle.k2_boltzmann_ratio(p);
      }
    }
    est.values[k] = acc / nsub;
    if (order_n == 2) est.boltzmann_ratio[k] = accb / nsub;
  }
  return est;
}

RuellePoint ruelle_point(double lambda, int N, const CorrelationEstimate& k1, const CorrelationEstimate& k2,
                         long min_count) {
  RuellePoint p;
  p.lambda = lambda;
  p.N = N;
  double sup1 = 0.0, sup2 = 0.0, supb = 0.0;
  for (std::size_t k = 0; k < k1.bins(); ++k)
    if (k1.method != "mcmc" || k1.counts[k] >= min_count) sup1 = std::max(sup1, k1.values[k]);
  for (std::size_t k = 0; k < k2.bins(); ++k) {
    if (k2.method == "mcmc" && k2.counts[k] < min_count) continue;
    sup2 = std::max(sup2, k2.values[k]);
    if (!k2.boltzmann_ratio.empty()) supb = std::max(supb, k2.boltzmann_ratio[k]);
  }
  p.xi_hat = std::max(sup1, std::sqrt(sup2));
  p.zeta_hat = std::max(sup1, std::sqrt(supb));
  return p;
}

RuellePoint ruelle_point(const QuadratureOracle& oracle, int bins_per_dim) {
  const auto k1 = oracle_correlation(oracle, 1, 4);
  if (oracle.spec().N < 2) {
    RuellePoint p;
    p.lambda = oracle.spec().box.half_side();
    p.N = oracle.spec().N;
    for (double v : k1.values) p.xi_hat = p.zeta_hat = std::max(p.xi_hat, v);
    return p;
  }
  const auto k2 = oracle_correlation(oracle, 2, bins_per_dim);
  return ruelle_point(oracle.spec().box.half_side(), oracle.spec().N, k1, k2, 0);
}

double ideal_gas_xi(int N, int dim, double lambda) {
  const double V = std::pow(2.0 * lambda, dim);
  double best = 0.0, falling = 1.0;
  for (int n = 1; n <= N; ++n) {
    falling *= static_cast<double>(N - n + 1) / V;
    best = std::max(best, std::pow(falling, 1.0 / n));
  }
  return best;
}

RuelleReport check_ruelle(std::span<const RuellePoint> points, double tolerance) {
  RuelleReport rep;
  rep.points.assign(points.begin(), points.end());
  if (points.empty()) return rep;
  double xlo = kInf, xhi = 0.0, zlo = kInf, zhi = 0.0;
  rep.finite = true;
  for (const auto& p : points) {
    rep.finite = rep.finite && std::isfinite(p.xi_hat) && std::isfinite(p.zeta_hat) && p.xi_hat > 0.0 &&
                 p.zeta_hat > 0.0;
    xlo = std::min(xlo, p.xi_hat);
    xhi = std::max(xhi, p.xi_hat);
    zlo = std::min(zlo, p.zeta_hat);
    zhi = std::max(zhi, p.zeta_hat);
  }
  rep.xi_variation = xhi / xlo - 1.0;
  rep.zeta_variation = zhi / zlo - 1.0;
  rep.stable = rep.finite && rep.xi_variation < tolerance && rep.zeta_variation < tolerance;
  rep.pass = rep.stable;
  return rep;
}

// ---------------------------------------------------------------------------
// Case split

std::string to_string(CaseLabel c) {
  switch (c) {
    case CaseLabel::I: return "I";
    case CaseLabel::II: return "II";
    case CaseLabel::III: return "III";
    case CaseLabel::Unclassified: return "unclassified";
  }
  return "?";
}

CaseLabel classify_case(std::span<const Vec> Z, const PeriodicPotential& pp, double beta, const CaseParams& params) {
  if (params.psi.size() != params.l.size()) throw Error(ErrorKind::InvalidArgument, "psi and l lengths differ");
  const auto& box = pp.box();
  const int d = box.dim();
  const double lam = box.half_side();
  // Images of Z inside (-2 lambda, 2 lambda]^d, counted per unit cube.
  std::vector<Vec> images;
  for (const auto& x : Z) {
    const int lo = -1, hi = 1;
    for (int a = lo; a <= hi; ++a)
      for (int b = (d >= 2 ? lo : 0); b <= (d >= 2 ? hi : 0); ++b)
        for (int c = (d >= 3 ? lo : 0); c <= (d >= 3 ? hi : 0); ++c) {
          const Vec y = x + make_vec(2 * lam * a, 2 * lam * b, 2 * lam * c);
          bool keep = true;
          for (int i = 0; i < d; ++i) keep = keep && y[i] > -2 * lam && y[i] <= 2 * lam;
          if (keep) images.push_back(y);
        }
  }
  auto cube_sum = [&](int l) {
    std::map<std::array<int, kMaxDim>, long> counts;
    for (const auto& y : images) {
      std::array<int, kMaxDim> r{0, 0, 0};
      bool inside = true;
      for (int i = 0; i < d; ++i) {
        r[i] = static_cast<int>(std::floor(y[i] + 0.5));
        inside = inside && std::abs(r[i]) <= l;
      }
      if (inside) ++counts[r];
    }
    double s = 0.0;
    for (const auto& [r, c] : counts) s += static_cast<double>(c) * static_cast<double>(c);
    return s;
  };
  const int J = static_cast<int>(params.psi.size());
  auto V = [&](int j) { return std::pow(2.0 * params.l[j] + 1.0, d); };
  bool case1 = true;
  for (int j = params.P; j < J && case1; ++j) case1 = cube_sum(params.l[j]) <= params.psi[j] * V(j);
  if (case1) return CaseLabel::I;
  if (beta * periodic_energy(Z, pp) >= params.log_k * static_cast<double>(Z.size())) return CaseLabel::II;
  for (int q = J - 1; q >= params.P; --q) {
    if (cube_sum(params.l[q]) >= params.psi[q] * V(q)) {
      if (q + 1 < J && params.l[q + 1] + 0.5 < lam / 2) return CaseLabel::III;
      break;
    }
  }
  return CaseLabel::Unclassified;
}

}  // namespace nvl
