#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nvl/configspace.hpp"
#include "nvl/potential.hpp"
#include "nvl/quadrature.hpp"

namespace nvl {

// f(x, v) with spatially bounded support and analytic derivatives.
struct TestFunction {
  int dim = 1;
  std::function<double(const Vec&, const Vec&)> f;
  std::function<Vec(const Vec&, const Vec&)> grad_x;
  std::function<Vec(const Vec&, const Vec&)> grad_v;
  std::function<double(const Vec&, const Vec&)> lap_v;
  Vec support_lo{};
  Vec support_hi{};
  bool velocity_free = false;  // grad_v f == 0
  std::string description;

  double operator()(const Vec& x, const Vec& v) const { return f(x, v); }
  bool in_support(const Vec& x) const;
};

enum class SpatialProfile { Bump, Plateau };

struct TestFunctionSpec {
  SpatialProfile profile = SpatialProfile::Bump;
  Vec center{};
  double width = 1.0;    // bump half-width, or ramp width of the plateau
  double plateau = 0.0;  // flat half-width of the plateau profile
  // Velocity factor (p0 + p1 v_c + p2 v_c^2) exp(-|v|^2 / (2 s^2)); s <= 0 drops the cutoff.
  int component = 0;
  double p0 = 1.0, p1 = 0.0, p2 = 0.0;
  double v_scale = 0.0;
  double amplitude = 1.0;
};

// Builds the family member and checks its derivatives against central
// differences on a probe grid (throws InvalidArgument on mismatch).
TestFunction make_test_function(int dim, const TestFunctionSpec& spec);

// Largest deviation between analytic and central-difference derivatives.
double derivative_fd_error(const TestFunction& tf, const Vec& x, const Vec& v, double h = 1e-4);

// g(y_1..y_K) with its gradient and Hessian (row-major K x K).
struct OuterFunction {
  std::function<double(std::span<const double>)> value;
  std::function<void(std::span<const double>, std::span<double>)> gradient;
  std::function<void(std::span<const double>, std::span<double>)> hessian;
  double bound = 0.0;  // sup |g| (0 when unbounded)
  std::string description;

  static OuterFunction constant(double c);
  static OuterFunction linear(std::vector<double> c);
  static OuterFunction sine(std::vector<double> c, double offset = 0.0);
  static OuterFunction gaussian(std::vector<double> c);
};

struct CylinderObservable {
  OuterFunction outer;
  std::vector<TestFunction> inner;

  std::vector<double> pairings(const MarkedConfiguration& g) const;
  double operator()(const MarkedConfiguration& g) const;
};

// Symmetric function of an m-point marked configuration.
using MPointFunction = std::function<double(std::span<const Vec> x, std::span<const Vec> v)>;

double k_transform(const MPointFunction& f, int m, const MarkedConfiguration& g);

std::vector<Vec> grad_v_K(const TestFunction& f, const MarkedConfiguration& g);

struct GeneratorTerms {
  double diffusion = 0.0;
  double transport = 0.0;  // (kappa/beta) Lap_v f - kappa v grad_v f + v grad_x f
  double interaction = 0.0;
  double total() const { return diffusion + transport + interaction; }
};

// L F on a finite configuration in free space.
GeneratorTerms eval_L_terms(const CylinderObservable& F, const MarkedConfiguration& g, const PotentialSpec& pot,
                            double kappa, double beta);
double eval_L(const CylinderObservable& F, const MarkedConfiguration& g, const PotentialSpec& pot, double kappa,
              double beta);

// L_(n) F with lattice-summed forces; supports must lie inside the open box.
GeneratorTerms eval_L_periodic_terms(const CylinderObservable& F, const MarkedConfiguration& g,
                                     const PeriodicPotential& pp, double kappa, double beta);
double eval_L_periodic(const CylinderObservable& F, const MarkedConfiguration& g, const PeriodicPotential& pp,
                       double kappa, double beta);

// L F assembled from per-particle forces supplied by the caller.
GeneratorTerms generator_with_forces(const CylinderObservable& F, const MarkedConfiguration& g,
                                     std::span<const Vec> forces, double kappa, double beta);

void check_supports_in_box(const CylinderObservable& F, const BoxGeometry& box);

struct Region {
  int dim = 1;
  Vec lo{};
  Vec hi{};
  double volume() const;
  static Region cube(int dim, double half);
};

struct Intensity {
  bool gaussian_velocity = false;
  double beta = 1.0;
  static Intensity lebesgue() { return {}; }
  static Intensity gaussian(double beta) { return {true, beta}; }
};

// (1/m!) int f over region^m, velocities integrated against the normalised
// Gaussian when the intensity is marked.
QuadratureResult lp_integral(const MPointFunction& f, int m, const Intensity& intensity, const Region& domain,
                             const QuadratureParams& params = {});

// Index classes: tuples over {0..M-1} of length m K in K blocks of m, each
// block with distinct entries, all M values used.
std::vector<std::vector<int>> index_classes(int m, int M, int K);

using CorrelationOracle = std::function<double(std::span<const Vec>)>;

struct MomentReport {
  int m = 1;
  int K_power = 1;
  double expansion = 0.0;
  double expansion_error = 0.0;
  double empirical = 0.0;
  double empirical_se = 0.0;
  double discrepancy_se = 0.0;  // |expansion - empirical| / se
};

// Unmarked m-point function checked against E[(Kf)^K] over position samples.
MomentReport moment_expand_check(const MPointFunction& f, int m, int K_power,
                                 std::span<const MarkedConfiguration> samples, const CorrelationOracle& rho,
                                 const Region& domain, const QuadratureParams& params = {});

}  // namespace nvl
