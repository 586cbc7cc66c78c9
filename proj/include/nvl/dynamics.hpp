#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nvl/box.hpp"
#include "nvl/configspace.hpp"
#include "nvl/gibbs.hpp"
#include "nvl/observables.hpp"
#include "nvl/potential.hpp"
#include "nvl/rng.hpp"
#include "nvl/stats.hpp"

namespace nvl {

struct DynamicsParams {
  double kappa = 1.0;
  double beta = 1.0;
  double dt = 0.01;
  double t_end = 1.0;
  std::uint64_t seed = 1;
  double max_kick = 1e3;  // ForceBlowup when |F|_max dt exceeds this

  void validate() const;
  bool stability_advisory_ok() const { return dt < 1.0 / (10.0 * kappa); }
};

// Forces and energy of an N-particle periodic system. Built-in potentials go
// through periodic_force_model; tests may supply their own closures.
struct ForceModel {
  std::string name;
  std::function<void(std::span<const Vec> x, std::span<Vec> forces)> forces;
  std::function<double(std::span<const Vec> x)> energy;
};

ForceModel periodic_force_model(const PeriodicPotential& pp);

// Exact Ornstein-Uhlenbeck map for one velocity over time dt given standard normals.
Vec ou_step(const Vec& v, int dim, double kappa, double beta, double dt, std::span<const double> normals);

// Integrator state: the marked configuration plus forces at its positions.
struct DynamicsState {
  MarkedConfiguration g;
  std::vector<Vec> forces;
};

DynamicsState make_state(MarkedConfiguration g, const ForceModel& model, const BoxGeometry& box);

// One BAOAB cycle; noise keyed by (seed, chain, step, particle).
void step_baoab(DynamicsState& s, const ForceModel& model, const BoxGeometry& box, const DynamicsParams& params,
                const KeyedNormal& noise, std::uint32_t chain, std::uint64_t step);

// Same cycle with caller-supplied normals for particle i.
void step_baoab(DynamicsState& s, const ForceModel& model, const BoxGeometry& box, const DynamicsParams& params,
                const std::function<std::array<double, 4>(std::size_t)>& normals);

// Calls observe(step, state) for step = 0..n_steps, after each cycle.
void evolve(DynamicsState& s, const ForceModel& model, const BoxGeometry& box, const DynamicsParams& params,
            std::uint32_t chain, long n_steps, const std::function<void(long, const DynamicsState&)>& observe);

struct Trajectory {
  std::vector<double> times;  // snapped to the step grid
  std::vector<MarkedConfiguration> states;
  BoxGeometry box{1, 1.0};
  DynamicsParams params;
  double max_snap_error = 0.0;
};

Trajectory run_trajectory(const MarkedConfiguration& initial, const ForceModel& model, const BoxGeometry& box,
                          const DynamicsParams& params, std::span<const double> observation_times,
                          std::uint32_t chain = 0);

// Points of the periodic continuation of g lying in the window (lo, hi].
MarkedConfiguration lift_per(const MarkedConfiguration& g, const BoxGeometry& box, const Region& window);

struct DistributionComparison {
  std::string name;
  double mean0 = 0.0, meanT = 0.0;
  double mean_z = 0.0;  // |meanT - mean0| / SE
  double ks = 0.0;
  double ks_critical = 0.0;
  bool pass = false;
};

struct InvarianceReport {
  double T = 0.0;
  std::size_t samples = 0;
  std::vector<DistributionComparison> comparisons;  // energy, |v|^2, observables
  bool pass = false;
};

InvarianceReport check_invariance(const GibbsEnsemble& ens, const ForceModel& model, const DynamicsParams& params,
                                  double T, std::span<const CylinderObservable> observables);

struct MartingaleReport {
  double s = 0.0, t = 0.0;
  Estimate increment;            // E[M_t - M_s]
  double increment_z = 0.0;
  std::vector<Estimate> tested;  // E[(M_t - M_s) G_k(gamma_s)]
  std::vector<double> tested_z;
  std::vector<std::string> tested_names;
  double max_abs_M = 0.0;  // over paths, for the constant-F check
  bool pass = false;
};

MartingaleReport check_martingale(const GibbsEnsemble& ens, const CylinderObservable& F, const ForceModel& model,
                                  const DynamicsParams& params, double s, double t);

struct QuadraticVariationReport {
  Estimate realized;
  Estimate predicted;
  double ratio = 0.0;
  double ratio_se = 0.0;
  bool pass = false;  // ratio within [0.95, 1.05] allowing 3 SE
};

QuadraticVariationReport check_quadratic_variation(const GibbsEnsemble& ens, const TestFunction& f,
                                                   const ForceModel& model, const DynamicsParams& params, double t);

struct TightnessReport {
  std::vector<double> lags;
  std::vector<Estimate> moments;  // E[d^3]
  double slope = 0.0;
  double slope_se = 0.0;
  double C = 0.0;  // geometric mean of E[d^3] / lag^{3/2}
  bool pass = false;  // slope >= 1.4
};

// Distances between gamma_{s0} and gamma_{s0 + lag}, both lifted to the window.
TightnessReport tightness_moment(const GibbsEnsemble& ens, const ForceModel& model, const DynamicsParams& params,
                                 const MetricParams& metric, const Region& window, double s0,
                                 std::span<const double> lags);

// Relative kinetic-energy bias <|v|^2> beta / (d N) - 1 from independent
// stationary chains, the quantity whose dt-halving slope certifies second order.
Estimate kinetic_bias(const GibbsEnsemble& ens, const ForceModel& model, const DynamicsParams& params,
                      long burn_steps, long measure_steps, int stride = 1);

// Weak-error increment e(dt) - e(dt/2) of the relative kinetic energy,
// time-averaged over horizon_steps coarse steps started from the ensemble.
// Coarse and fine paths share coupled noise, so most of the sampling error
// cancels; an O(dt^2) weak error gives increments that scale as dt^2 too.
Estimate kinetic_bias_increment(const GibbsEnsemble& ens, const ForceModel& model, const DynamicsParams& params,
                                long horizon_steps);

struct BiasSlopeReport {
  std::vector<double> dts;
  std::vector<Estimate> biases;
  double slope = 0.0;
  double slope_se = 0.0;
  bool pass = false;  // slope in [1.7, 2.3]
};

BiasSlopeReport bias_slope(std::vector<double> dts, std::vector<Estimate> biases);

}  // namespace nvl
