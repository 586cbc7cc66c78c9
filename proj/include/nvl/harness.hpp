#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nvl/config.hpp"
#include "nvl/dynamics.hpp"
#include "nvl/gibbs.hpp"
#include "nvl/stats.hpp"

namespace nvl {

std::string code_version();

// Metric weights r_k and q_k are free positive choices; one constant each.
struct MetricWeights {
  int k_max = 32;
  double r = 1.0;
  double q = 1.0;
};

struct NvSchedule {
  int dim = 1;
  double rho = 0.3;
  std::vector<double> lambdas;
  std::vector<int> counts;  // N per box
  PotentialSpec pot;
  double beta = 1.0;
  double rho_max = 10.0;
  LatticeSumPolicy policy{};
  McmcParams mcmc{};
  DynamicsParams dynamics{};
  double window_half = 1.0;
  int window_functions = 3;
  int bins = 16;
  bool tightness = false;
  std::vector<double> lags;
  MetricWeights metric{};

  // Strictly increasing boxes, densities within rho_max and the last density
  // within 5% of rho.
  void validate() const;
};

// lambda_n = n + 1/2 for n = 1..count.
std::vector<double> half_integer_lambdas(int count);
// N_n = round(rho (2 lambda_n)^d), at least 1.
std::vector<int> counts_for_density(double rho, int dim, std::span<const double> lambdas);

NvSchedule schedule_from_config(const Config& c, std::uint64_t seed);

struct BoxResult {
  double lambda = 0.0;
  int N = 0;
  double density = 0.0;
  std::vector<Estimate> window_observables;  // E <f_l, gamma_t>
  std::vector<Estimate> k1_window;           // density profile on the window bins
  std::vector<Estimate> k2_window;           // pair profile over separations in the window
  double martingale_z = 0.0;
  double tightness_slope = 0.0;
  double acceptance = 0.0;
};

struct StabilizationRow {
  std::string quantity;
  std::vector<double> delta;  // Delta_n for n = 2..
  std::vector<double> delta_se;
  bool decreasing = false;
  bool final_within = false;
  bool pass = false;
};

struct NvReport {
  std::vector<BoxResult> boxes;
  std::vector<StabilizationRow> rows;
  bool pass = false;
};

// Delta_n = sup_b |q_n[b] - q_{n-1}[b]|, SE taken at the maximising component.
// Consecutive Delta count as decreasing unless the rise exceeds 3 combined SE.
StabilizationRow stabilization_row(const std::string& name, const std::vector<std::vector<Estimate>>& per_box);

NvReport run_nv_limit(const NvSchedule& schedule, std::uint64_t seed);

// Exit codes: 0 all PASS, 2 numeric FAIL or runtime failure, 1 usage or config error.
int cli_dispatch(const std::vector<std::string>& args);
int cli_dispatch(int argc, char** argv);

}  // namespace nvl
