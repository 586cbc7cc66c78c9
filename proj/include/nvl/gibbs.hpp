#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nvl/box.hpp"
#include "nvl/configspace.hpp"
#include "nvl/potential.hpp"
#include "nvl/stats.hpp"

namespace nvl {

struct EnsembleSpec {
  int N = 1;
  BoxGeometry box{1, 1.0};
  double beta = 1.0;
  PotentialSpec pot;
  double rho_max = 10.0;
  LatticeSumPolicy policy{};

  double density() const { return N / box.volume(); }
  // Throws DensityExceedsRhoMax or InvalidArgument.
  void validate() const;
};

struct McmcParams {
  long burn_in_sweeps = 2000;  // one sweep = N single-particle proposals
  long samples = 4000;
  long thin_sweeps = 1;
  int chains = 1;
  double initial_step = 0.3;
  double target_acceptance = 0.4;
  bool with_velocities = true;
  EnergyMode mode = EnergyMode::Capped;
};

struct GibbsEnsemble {
  EnsembleSpec spec;
  std::vector<MarkedConfiguration> samples;  // chain-major
  std::vector<double> energies;              // per sample
  std::uint64_t seed = 0;
  long burn_in_sweeps = 0;
  long thin_sweeps = 0;
  int chains = 1;
  double acceptance_rate = 0.0;  // after burn-in, pooled over chains
  std::vector<double> step_sizes;  // frozen per chain
  double energy_autocorr_time = 0.0;
};

GibbsEnsemble sample_canonical(const EnsembleSpec& spec, const McmcParams& params, std::uint64_t seed);

// Lattice start with jitter, passed through repair_start.
Positions initial_configuration(const EnsembleSpec& spec, std::uint64_t seed, std::uint32_t chain = 0);
// Re-jitters a start of infinite exact energy; SingularStart when that fails.
void repair_start(std::span<Vec> x, const EnsembleSpec& spec, const PeriodicPotential& pp, std::uint64_t seed,
                  std::uint32_t chain = 0);

// Kernel pieces in log space, for balance checks. States differ in at most
// particle `moved`; proposals are wrapped Gaussians of width `step`.
double mcmc_log_target(const EnsembleSpec& spec, const PeriodicPotential& pp, std::span<const Vec> x,
                       EnergyMode mode = EnergyMode::Capped);
double mcmc_log_proposal(const EnsembleSpec& spec, double step, std::span<const Vec> from, std::span<const Vec> to);
double mcmc_log_acceptance(double log_target_from, double log_target_to);
// log pi(x) q(x->y) alpha(x->y); symmetric in (x, y) bit for bit.
double mcmc_log_flux(double log_target_from, double log_target_to, double log_proposal);

// Largest |sample variance - 1/beta| / SE over velocity components.
double velocity_variance_zscore(const GibbsEnsemble& ens);

struct OracleParams {
  int initial_grid = 64;
  int max_grid_1d = 1 << 16;
  int max_grid_2d = 1024;
  double rel_tol = 1e-8;
};

// Tensor-grid quadrature of canonical integrals for N <= 3, d <= 2, using
// translation invariance to fix one particle and an FFT for the three-body
// convolution.
class QuadratureOracle {
 public:
  QuadratureOracle(EnsembleSpec spec, OracleParams params = {});

  const EnsembleSpec& spec() const { return spec_; }
  double Z() const { return Z_; }
  double Z_error() const { return Z_err_; }
  int grid() const { return M_; }
  bool converged() const { return converged_; }

  // k^{(n,N)} at the given points, n = x.size() <= N.
  double k(std::span<const Vec> x) const;
  // k^{(2,N)}(0, delta), which by translation invariance is k^{(2,N)}(x, x + delta).
  double k2_separation(const Vec& delta) const;
  // k^{(2,N)}(0, delta) exp(beta hat phi(delta)), finite at the core.
  double k2_boltzmann_ratio(const Vec& delta) const;
  double pair_weight(const Vec& delta) const;  // exp(-beta phi-hat), exact energy

 private:
  double compute_Z(int M, std::vector<double>* table) const;
  double conv(const Vec& delta) const;  // h^d sum_xi b(xi) b(delta - xi)

  EnsembleSpec spec_;
  PeriodicPotential pp_;
  OracleParams params_;
  int M_ = 0;
  double h_ = 0.0;
  double Z_ = 0.0;
  double Z_err_ = 0.0;
  bool converged_ = false;
  std::vector<double> table_;  // b on the final grid
};

struct PartitionRatioReport {
  int N = 0;
  double lambda = 0.0;
  double density = 0.0;
  double ratio = 0.0;  // (2 lambda)^d Z^N / Z^{N+1}
  double ratio_se = 0.0;
  std::string method;
  bool finite = false;
};

PartitionRatioReport partition_ratio_quadrature(const EnsembleSpec& spec, const OracleParams& params = {});
// Insertion estimate from an ensemble of N-particle samples.
PartitionRatioReport partition_ratio_insertion(const GibbsEnsemble& ens, int insertions_per_sample,
                                               std::uint64_t seed);

struct RatioSweepReport {
  std::vector<PartitionRatioReport> points;
  double k_hat = 0.0;  // largest ratio over the sweep
  bool pass = false;   // all finite and k_hat bounded by the stated ceiling
};

RatioSweepReport summarize_ratio_sweep(std::vector<PartitionRatioReport> points, double ceiling);

struct CorrelationEstimate {
  int order_n = 1;
  int dim = 1;
  int bins_per_dim = 64;
  double lo = 0.0;     // lower edge in every coordinate
  double width = 0.0;  // bin width
  std::vector<double> values;
  std::vector<double> se;
  std::vector<long> counts;
  // For order 2: bin averages of k^{(2)} exp(beta hat phi) (empty otherwise).
  std::vector<double> boltzmann_ratio;
  std::vector<double> boltzmann_ratio_se;
  std::string method;

  std::size_t bins() const { return values.size(); }
  Vec center(std::size_t flat) const;
  double bin_volume() const;
  double integral() const;  // sum values * bin volume
};

// Order 1: position histogram on the box. Order 2: histogram of the wrapped
// separation x_i - x_j over ordered pairs, scaled so that values estimate
// k^{(2,N)}(x, x + delta).
CorrelationEstimate estimate_correlation(const GibbsEnsemble& ens, int order_n, int bins_per_dim = 64);
// The oracle evaluated at the same bin centres.
CorrelationEstimate oracle_correlation(const QuadratureOracle& oracle, int order_n, int bins_per_dim = 64);

struct RuellePoint {
  double lambda = 0.0;
  int N = 0;
  double xi_hat = 0.0;
  double zeta_hat = 0.0;
};

// xi = max_n (sup k^{(n)})^{1/n}; zeta from the Boltzmann-weighted ratios.
// Bins with fewer than min_count hits are ignored for the sampled estimates.
RuellePoint ruelle_point(double lambda, int N, const CorrelationEstimate& k1, const CorrelationEstimate& k2,
                         long min_count = 50);
RuellePoint ruelle_point(const QuadratureOracle& oracle, int bins_per_dim = 256);

// sup_n (N!/((N-n)! (2 lambda)^{dn}))^{1/n}.
double ideal_gas_xi(int N, int dim, double lambda);

struct RuelleReport {
  std::vector<RuellePoint> points;
  double xi_variation = 0.0;  // max/min - 1
  double zeta_variation = 0.0;
  bool finite = false;
  bool stable = false;
  bool pass = false;
};

RuelleReport check_ruelle(std::span<const RuellePoint> points, double tolerance = 0.2);

// Surrogate sequences for the three-way case split; psi[j] and l[j] index j = 0, 1, ...
struct CaseParams {
  std::vector<double> psi;
  std::vector<int> l;
  int P = 0;
  double log_k = 0.0;
};

enum class CaseLabel { I, II, III, Unclassified };
std::string to_string(CaseLabel c);

CaseLabel classify_case(std::span<const Vec> Z, const PeriodicPotential& pp, double beta, const CaseParams& params);

}  // namespace nvl
