#pragma once

#include <functional>
#include <span>
#include <vector>

#include "nvl/vec.hpp"

namespace nvl {

// Finite velocity-marked configuration; x[i] and v[i] describe particle i.
struct MarkedConfiguration {
  int dim = 1;
  std::vector<Vec> x;
  std::vector<Vec> v;

  std::size_t size() const { return x.size(); }
  bool empty() const { return x.empty(); }
  void add(const Vec& pos, const Vec& vel) {
    x.push_back(pos);
    v.push_back(vel);
  }
  friend bool operator==(const MarkedConfiguration&, const MarkedConfiguration&) = default;
};

inline const std::vector<Vec>& pr_x(const MarkedConfiguration& g) { return g.x; }

// Smooth compactly supported bump with value 1 at u = 0: exp(-u^2/(1-u^2)).
double bump1(double u);
double bump1_deriv(double u);
double bump1_deriv2(double u);

// C^inf step rising from 0 at t <= 0 to 1 at t >= 1.
double smooth_step(double t);
double smooth_step_deriv(double t);

// Product of bumps in position (and optionally velocity) around given centres.
struct BumpFamilyMember {
  Vec x_center{};
  double x_width = 1.0;
  Vec v_center{};
  double v_width = 1.0;
  bool marked = true;

  double value(const Vec& x, const Vec& v, int dim) const;
  double spatial(const Vec& x, int dim) const;
};

struct MetricParams {
  int dim = 1;
  int k_max = 32;
  std::vector<BumpFamilyMember> f;  // for the marked vague metric
  std::vector<BumpFamilyMember> g;  // unmarked, for the projection
  std::function<double(double)> Phi = [](double) { return 0.0; };
  double Phi_range = 0.0;  // Phi vanishes for t >= Phi_range (0: everywhere)
  std::function<double(const Vec&)> h;
  std::function<double(double)> a;  // of |v|_2
  std::vector<double> r;            // r_k, k = 1..k_max
  std::vector<double> q;            // q_k

  double I(int k, const Vec& x) const;  // plateau cutoff between |x| <= k and |x| <= k+1
  double truncation_tail() const;
};

// Default family: bumps on a dyadic ladder of widths with centres from a
// Halton sequence over the position window [-x_window, x_window]^d and velocity
// window [-v_window, v_window]^d.
MetricParams default_metric_params(int dim, int k_max = 32, double x_window = 4.0, double v_window = 3.0);

double default_h(const Vec& x, int dim);
double default_a(double speed);

double pairing(const std::function<double(const Vec&, const Vec&)>& f, const MarkedConfiguration& g);

double dist_vague_marked(const MarkedConfiguration& g1, const MarkedConfiguration& g2, const MetricParams& p);
double dist_vague(std::span<const Vec> x1, std::span<const Vec> x2, const MetricParams& p);
double dist_star(const MarkedConfiguration& g1, const MarkedConfiguration& g2, const MetricParams& p);

double S_pair(std::span<const Vec> pts, const std::function<double(double)>& Phi,
              const std::function<double(const Vec&)>& f);
double S_compact(const MarkedConfiguration& g, const MetricParams& p);

// d^{Phi,h} on unmarked configurations and the full marked metric d^{Phi,a,h}.
double dist_phi_h(std::span<const Vec> x1, std::span<const Vec> x2, const MetricParams& p);
double dist_full(const MarkedConfiguration& g1, const MarkedConfiguration& g2, const MetricParams& p);

struct SublevelBounds {
  long max_count = 0;
  double max_speed = 0.0;
};
// For configurations inside [-half, half]^d with S_compact <= K.
SublevelBounds sublevel_bounds(double K, double half, const MetricParams& p);

}  // namespace nvl
