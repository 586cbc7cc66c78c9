#pragma once

#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nvl/box.hpp"
#include "nvl/vec.hpp"

namespace nvl {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Exact mode returns +inf at a singular core; capped mode replaces values
// below r_min by core_cap so Metropolis arithmetic stays finite.
enum class EnergyMode { Exact, Capped };

// A radial pair potential phi(x) = value(|x|_2) together with the analytic
// constants used by the bounds and by the lattice-sum truncation.
struct PotentialSpec {
  std::string name;
  int dim = 1;
  std::map<std::string, double> params;

  std::function<double(double)> value;  // of the Euclidean distance r > 0
  std::function<double(double)> deriv;  // d value / dr
  bool singular_core = false;           // value(r) -> +inf as r -> 0
  bool identically_zero = false;

  double lower_bound_M = 0.0;
  double core_radius_R = 1.0;
  std::function<double(double)> repulsion_Phi;  // of the max norm

  // |phi(x)| <= tail_G |x|^{-d-tail_eps} for |x| >= R.
  std::optional<double> tail_G;
  std::optional<double> tail_eps;

  // |grad phi(x)| <= force_tail_theta(|x|) for |x| >= R3. When the envelope
  // is a power law G_f t^{-p} the constants are recorded for truncation.
  std::function<double(double)> force_tail_theta;
  double force_tail_R3 = 1.0;
  std::optional<double> force_tail_G;
  std::optional<double> force_tail_p;

  // phi and grad phi vanish for Euclidean |x| >= support_radius.
  std::optional<double> support_radius;

  double r_min = 0.0;
  double core_cap = 1e6;

  double phi(const Vec& y, EnergyMode mode = EnergyMode::Exact) const;
  Vec grad_phi(const Vec& y) const;  // zero at y = 0
};

struct SmoothedLjParams {
  double epsilon = 1.0;
  double sigma = 1.0;
  double r_switch = 1.6;
  double r_cut = 1.95;
  double r_min = 0.3;
  double core_cap = 1e6;
  double tail_eps = 1.0;
};

struct SoftCoreParams {
  double amplitude = 1.0;
  double sigma = 1.0;
  double exponent = 12.0;
  double r_min = 0.05;
  double core_cap = 1e6;
};

PotentialSpec make_ideal_gas(int dim);
PotentialSpec make_smoothed_lj(int dim, const SmoothedLjParams& p = {});
PotentialSpec make_soft_core(int dim, const SoftCoreParams& p = {});
// Named built-ins: ideal_gas, smoothed_lj, soft_core. Unknown keys are rejected.
PotentialSpec make_builtin_potential(const std::string& name, int dim,
                                     const std::map<std::string, double>& params);

struct LatticeSumPolicy {
  int truncation_radius_K = -1;  // negative: choose from the tail bound
  double target_abs_error = 1e-10;
};

// Sum over k > K of the shell count times G (lambda (2k-1))^{-q}, bounded by
// an integral; requires q > d.
double lattice_tail_bound(int dim, double G, double q, double lambda, int K);

// sum_{r != 0} |r|^{-q} with the max norm, q > d.
double lattice_zeta(int dim, double q);

// Lattice sums of a potential over the images 2 lambda Z^d.
class PeriodicPotential {
 public:
  PeriodicPotential(PotentialSpec spec, BoxGeometry box, LatticeSumPolicy policy = {});

  const PotentialSpec& spec() const { return spec_; }
  const BoxGeometry& box() const { return box_; }
  const LatticeSumPolicy& policy() const { return policy_; }
  int dim() const { return box_.dim(); }

  // Shell radius used for energies and forces (-1 when the support decides).
  int energy_shells() const { return energy_K_; }
  int force_shells() const { return force_K_; }
  double energy_tail_bound() const { return energy_tail_; }
  double force_tail_bound() const { return force_tail_; }
  bool nearest_image_only() const { return nearest_only_; }

  // sum_r phi(w + 2 lambda r) with w the wrapped argument.
  double lattice_sum(const Vec& y, EnergyMode mode = EnergyMode::Exact) const;
  // sum_r grad phi(w + 2 lambda r); zero when w = 0 (self images).
  Vec lattice_grad(const Vec& y) const;

  double phi_lambda(const Vec& y, EnergyMode mode = EnergyMode::Exact) const;
  double hat_phi_lambda(const Vec& y, EnergyMode mode = EnergyMode::Exact) const;
  Vec grad_hat_phi_lambda(const Vec& y) const;

 private:
  template <class F>
  void for_images(const Vec& w, int K, F&& f) const;

  PotentialSpec spec_;
  BoxGeometry box_;
  LatticeSumPolicy policy_;
  int energy_K_ = 0;
  int force_K_ = 0;
  double energy_tail_ = 0.0;
  double force_tail_ = 0.0;
  bool nearest_only_ = false;
};

using Positions = std::vector<Vec>;

double config_energy(std::span<const Vec> Z, const PotentialSpec& pot,
                     EnergyMode mode = EnergyMode::Exact);
double interaction_energy(std::span<const Vec> Z1, std::span<const Vec> Z2, const PotentialSpec& pot,
                          EnergyMode mode = EnergyMode::Exact);

double periodic_energy(std::span<const Vec> Z, const PeriodicPotential& pp,
                       EnergyMode mode = EnergyMode::Exact);
double periodic_energy_naive(std::span<const Vec> Z, const PeriodicPotential& pp,
                             EnergyMode mode = EnergyMode::Exact);
// sum_{j != i} hat phi_lambda(x_i - x_j).
double periodic_particle_energy(std::span<const Vec> Z, std::size_t i, const Vec& xi,
                                const PeriodicPotential& pp, EnergyMode mode = EnergyMode::Exact);

struct EnergyDecomposition {
  double W_term = 0.0;
  double U_term = 0.0;
};
EnergyDecomposition decompose_energy(std::span<const Vec> Z, const PeriodicPotential& pp);

// One representative of each antipodal pair {r, -r} with |r| = 1.
std::vector<std::array<int, kMaxDim>> antipodal_representatives(int dim);

Positions periodic_forces(std::span<const Vec> Z, const PeriodicPotential& pp);
Positions periodic_forces_naive(std::span<const Vec> Z, const PeriodicPotential& pp);

struct BoundsSampleGrid {
  int points_per_dim = 201;
  int random_configs = 200;
  int max_particles = 12;
  int quadrature_points = 400;
  double beta = 1.0;
  unsigned long long seed = 12345;
};

struct BoxBoundsReport {
  double lambda = 0.0;
  double inf_phi_lambda = 0.0;
  double M_tilde = 0.0;
  bool lower_bound_ok = false;
  double tail_ratio_sup = 0.0;
  double G_tilde = 0.0;
  bool tail_ok = false;
  double stability_B = 0.0;
  double cell_quadratic_A = 0.0;  // diagnostic fit
  double grad_norm_p[3] = {0.0, 0.0, 0.0};
};

struct UniformBoundsReport {
  std::vector<BoxBoundsReport> boxes;
  double sup_grad_norm_p[3] = {0.0, 0.0, 0.0};
  double lattice_zeta = 0.0;
  bool all_ok = false;
};

UniformBoundsReport check_uniform_bounds(const PotentialSpec& pot, std::span<const double> lambdas,
                                         const LatticeSumPolicy& policy, const BoundsSampleGrid& grid);

// Continuously differentiable minorant hat Phi <= Phi with hat Phi(t) t^d -> inf,
// assembled from the level sequence s_k and the interpolated envelope theta.
class HatPhi {
 public:
  double operator()(double t) const { return value(t); }
  double value(double t) const;
  double derivative(double t) const;
  double theta(double t) const;
  const std::vector<double>& levels() const { return s_; }
  int dim() const { return dim_; }
  double s1() const { return s_.empty() ? 0.0 : s_.front(); }

 private:
  friend HatPhi build_hat_Phi(const std::function<double(double)>& Phi, int dim, double t_min,
                              int grid_per_decade);
  int dim_ = 1;
  std::vector<double> s_;     // s_1 > s_2 > ...
  std::vector<double> cum_;   // hat Phi(s_k)
};

HatPhi build_hat_Phi(const std::function<double(double)>& Phi, int dim, double t_min = 1e-4,
                     int grid_per_decade = 400);

}  // namespace nvl
