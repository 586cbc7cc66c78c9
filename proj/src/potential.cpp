#include "nvl/potential.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "nvl/errors.hpp"
#include "nvl/rng.hpp"

namespace nvl {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NonSummableTail: return "NonSummableTail";
    case ErrorKind::OverlappingConfigurations: return "OverlappingConfigurations";
    case ErrorKind::DistancesNotStrict: return "DistancesNotStrict";
    case ErrorKind::CoincidentParticles: return "CoincidentParticles";
    case ErrorKind::NotRepulsiveEnough: return "NotRepulsiveEnough";
    case ErrorKind::SupportTooLarge: return "SupportTooLarge";
    case ErrorKind::QuadratureNotConverged: return "QuadratureNotConverged";
    case ErrorKind::SingularStart: return "SingularStart";
    case ErrorKind::DensityExceedsRhoMax: return "DensityExceedsRhoMax";
    case ErrorKind::ForceBlowup: return "ForceBlowup";
    case ErrorKind::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorKind::VersionUnsupported: return "VersionUnsupported";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

double PotentialSpec::phi(const Vec& y, EnergyMode mode) const {
  if (identically_zero) return 0.0;
  const double r = norm2(y);
  if (support_radius && r >= *support_radius) return 0.0;
  if (mode == EnergyMode::Capped && r < r_min) return core_cap;
  if (r == 0.0 && singular_core) return kInf;
  return value(r);
}

Vec PotentialSpec::grad_phi(const Vec& y) const {
  if (identically_zero) return {};
  const double r = norm2(y);
  if (r == 0.0) return {};
  if (support_radius && r >= *support_radius) return {};
  return y * (deriv(r) / r);
}

namespace {

// Sup of |f(r)| r^q over [a, b] by dense sampling, with a small margin.
double sampled_sup(const std::function<double(double)>& f, double q, double a, double b, int n = 200000) {
  double m = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double r = a + (b - a) * i / n;
    m = std::max(m, std::abs(f(r)) * std::pow(r, q));
  }
  return m * (1.0 + 1e-6);
}

// Decreasing envelope t -> sup_{r >= t} |f(r)| tabulated on [a, b], zero past b.
std::function<double(double)> decreasing_envelope(const std::function<double(double)>& f, double a, double b,
                                                  int n = 20000) {
  std::vector<double> table(n + 1, 0.0);
  const int fine = 8;
  double run = 0.0;
  for (int i = n; i >= 0; --i) {
    for (int j = fine; j >= 0; --j) {
      const double r = a + (b - a) * (i + static_cast<double>(j) / fine) / n;
      if (r <= b) run = std::max(run, std::abs(f(r)));
    }
    table[i] = run * (1.0 + 1e-3);
  }
  return [table = std::move(table), a, b, n](double t) {
    if (t >= b) return 0.0;
    if (t <= a) return table.front();
    const auto i = static_cast<std::size_t>(std::floor((t - a) / (b - a) * n));
    return table[std::min<std::size_t>(i, table.size() - 1)];
  };
}

}  // namespace

PotentialSpec make_ideal_gas(int dim) {
  PotentialSpec p;
  p.name = "ideal_gas";
  p.dim = dim;
  p.identically_zero = true;
  p.value = [](double) { return 0.0; };
  p.deriv = [](double) { return 0.0; };
  p.repulsion_Phi = [](double) { return 0.0; };
  p.tail_G = 0.0;
  p.tail_eps = 1.0;
  p.force_tail_theta = [](double) { return 0.0; };
  p.force_tail_G = 0.0;
  p.force_tail_p = dim + 1.0;
  p.support_radius = 0.0;
  return p;
}

PotentialSpec make_smoothed_lj(int dim, const SmoothedLjParams& q) {
  if (!(q.sigma > 0 && q.epsilon > 0 && q.r_switch > q.sigma && q.r_cut > q.r_switch))
    throw Error(ErrorKind::InvalidArgument, "smoothed_lj needs 0 < sigma < r_switch < r_cut, epsilon > 0");
  PotentialSpec p;
  p.name = "smoothed_lj";
  p.dim = dim;
  p.params = {{"epsilon", q.epsilon}, {"sigma", q.sigma},   {"r_switch", q.r_switch}, {"r_cut", q.r_cut},
              {"r_min", q.r_min},     {"core_cap", q.core_cap}, {"tail_eps", q.tail_eps}};
  const double eps = q.epsilon, sig = q.sigma, rs = q.r_switch, rc = q.r_cut;
  auto lj = [eps, sig](double r) {
    const double s6 = std::pow(sig / r, 6);
    return 4.0 * eps * (s6 * s6 - s6);
  };
  auto dlj = [eps, sig](double r) {
    const double s6 = std::pow(sig / r, 6);
    return -24.0 * eps * (2.0 * s6 * s6 - s6) / r;
  };
  // Quintic switch: C2 at both ends of [r_switch, r_cut].
  auto sw = [rs, rc](double r, double& dsw) {
    const double w = rc - rs, t = (r - rs) / w;
    dsw = (-30.0 * t * t + 60.0 * t * t * t - 30.0 * t * t * t * t) / w;
    return 1.0 - 10.0 * t * t * t + 15.0 * t * t * t * t - 6.0 * t * t * t * t * t;
  };
  p.value = [=](double r) {
    if (r >= rc) return 0.0;
    if (r <= rs) return lj(r);
    double ds;
    return lj(r) * sw(r, ds);
  };
  p.deriv = [=](double r) {
    if (r >= rc) return 0.0;
    if (r <= rs) return dlj(r);
    double ds;
    const double s = sw(r, ds);
    return dlj(r) * s + lj(r) * ds;
  };
  p.singular_core = true;
  p.support_radius = rc;
  p.r_min = q.r_min;
  p.core_cap = q.core_cap;

  double vmin = 0.0;
  for (int i = 0; i <= 200000; ++i) vmin = std::min(vmin, p.value(0.5 * sig + (rc - 0.5 * sig) * i / 200000.0));
  p.lower_bound_M = -vmin * (1.0 + 1e-6);

  const double sd = std::sqrt(static_cast<double>(dim));
  p.core_radius_R = sig / sd;
  p.repulsion_Phi = [lj, sig, sd](double t) {
    const double r = sd * t;
    return r >= sig ? 0.0 : std::max(0.0, lj(r));
  };
  p.tail_eps = q.tail_eps;
  p.tail_G = sampled_sup(p.value, dim + q.tail_eps, p.core_radius_R, rc);
  p.force_tail_R3 = p.core_radius_R;
  p.force_tail_theta = decreasing_envelope(p.deriv, p.core_radius_R, rc);
  return p;
}

PotentialSpec make_soft_core(int dim, const SoftCoreParams& q) {
  if (!(q.exponent > dim)) throw Error(ErrorKind::InvalidArgument, "soft_core exponent must exceed d");
  if (!(q.amplitude > 0 && q.sigma > 0)) throw Error(ErrorKind::InvalidArgument, "soft_core needs A, sigma > 0");
  PotentialSpec p;
  p.name = "soft_core";
  p.dim = dim;
  p.params = {{"amplitude", q.amplitude}, {"sigma", q.sigma}, {"exponent", q.exponent},
              {"r_min", q.r_min},         {"core_cap", q.core_cap}};
  const double A = q.amplitude, sig = q.sigma, n = q.exponent;
  p.value = [=](double r) { return A * std::pow(sig / r, n); };
  p.deriv = [=](double r) { return -n * A * std::pow(sig / r, n) / r; };
  p.singular_core = true;
  p.r_min = q.r_min;
  p.core_cap = q.core_cap;
  p.lower_bound_M = 0.0;
  p.core_radius_R = sig;
  const double sd = std::sqrt(static_cast<double>(dim));
  p.repulsion_Phi = [=](double t) { return A * std::pow(sig / (sd * t), n); };
  p.tail_G = A * std::pow(sig, n);
  p.tail_eps = n - dim;
  p.force_tail_R3 = sig;
  p.force_tail_G = n * A * std::pow(sig, n);
  p.force_tail_p = n + 1.0;
  p.force_tail_theta = [G = *p.force_tail_G, n](double t) { return G * std::pow(t, -n - 1.0); };
  return p;
}

PotentialSpec make_builtin_potential(const std::string& name, int dim, const std::map<std::string, double>& params) {
  auto take = [&](const std::map<std::string, double*>& slots) {
    for (const auto& [k, v] : params) {
      auto it = slots.find(k);
      if (it == slots.end()) throw Error(ErrorKind::ConfigError, "unknown parameter '" + k + "' for " + name);
      *it->second = v;
    }
  };
  if (name == "ideal_gas") {
    take({});
    return make_ideal_gas(dim);
  }
  if (name == "smoothed_lj") {
    SmoothedLjParams q;
    take({{"epsilon", &q.epsilon}, {"sigma", &q.sigma}, {"r_switch", &q.r_switch}, {"r_cut", &q.r_cut},
          {"r_min", &q.r_min}, {"core_cap", &q.core_cap}, {"tail_eps", &q.tail_eps}});
    return make_smoothed_lj(dim, q);
  }
  if (name == "soft_core") {
    SoftCoreParams q;
    take({{"amplitude", &q.amplitude}, {"sigma", &q.sigma}, {"exponent", &q.exponent}, {"r_min", &q.r_min},
          {"core_cap", &q.core_cap}});
    return make_soft_core(dim, q);
  }
  throw Error(ErrorKind::ConfigError, "unknown potential '" + name + "'");
}

double lattice_tail_bound(int dim, double G, double q, double lambda, int K) {
  const double s = q - dim;
  if (!(s > 0)) throw Error(ErrorKind::NonSummableTail, "tail exponent must exceed the dimension");
  const double C = 2.0 * dim * std::pow(3.0, dim - 1) * G * std::pow(lambda, -q);
  if (K <= 0) return C * (1.0 + 1.0 / (2.0 * s));
  return C * std::pow(2.0 * K - 1.0, -s) / (2.0 * s);
}

double lattice_zeta(int dim, double q) {
  if (!(q > dim)) throw Error(ErrorKind::NonSummableTail, "lattice zeta needs q > d");
  // Exact shell sums up to kmax, then the integral bound for the remainder.
  const int kmax = 100000;
  double s = 0.0;
  for (int k = kmax; k >= 1; --k) {
    const double shells = std::pow(2.0 * k + 1, dim) - std::pow(2.0 * k - 1, dim);
    s += shells * std::pow(static_cast<double>(k), -q);
  }
  // shells <= 2d (3k)^{d-1} for k >= 1
  s += 2.0 * dim * std::pow(3.0, dim - 1) * std::pow(static_cast<double>(kmax), dim - q) / (q - dim);
  return s;
}

PeriodicPotential::PeriodicPotential(PotentialSpec spec, BoxGeometry box, LatticeSumPolicy policy)
    : spec_(std::move(spec)), box_(box), policy_(policy) {
  if (spec_.dim != box_.dim()) throw Error(ErrorKind::InvalidArgument, "potential and box dimensions differ");
  const double lam = box_.half_side();
  const int d = box_.dim();
  if (spec_.support_radius) {
    energy_K_ = force_K_ = -1;
    nearest_only_ = *spec_.support_radius <= lam;
    return;
  }
  auto choose = [&](double G, double q) {
    int K = std::max(policy_.truncation_radius_K, 0);
    if (policy_.truncation_radius_K < 0) {
      while (lattice_tail_bound(d, G, q, lam, K) > policy_.target_abs_error ||
             lam * (2.0 * K + 1.0) < spec_.core_radius_R)
        ++K;
    }
    return std::pair{K, lattice_tail_bound(d, G, q, lam, K)};
  };
  if (!spec_.tail_G || !spec_.tail_eps)
    throw Error(ErrorKind::NonSummableTail, "potential '" + spec_.name + "' lacks tail constants");
  std::tie(energy_K_, energy_tail_) = choose(*spec_.tail_G, d + *spec_.tail_eps);
  if (spec_.force_tail_G && spec_.force_tail_p) {
    std::tie(force_K_, force_tail_) = choose(*spec_.force_tail_G, *spec_.force_tail_p);
  } else {
    force_K_ = -2;
  }
}

template <class F>
void PeriodicPotential::for_images(const Vec& w, int K, F&& f) const {
  const int d = box_.dim();
  const double L = box_.side();
  int lo[kMaxDim] = {0, 0, 0}, hi[kMaxDim] = {0, 0, 0};
  for (int i = 0; i < d; ++i) {
    if (K == -1) {
      const double rc = *spec_.support_radius;
      lo[i] = static_cast<int>(std::ceil((-rc - w[i]) / L));
      hi[i] = static_cast<int>(std::floor((rc - w[i]) / L));
    } else {
      lo[i] = -K;
      hi[i] = K;
    }
  }
  for (int a = lo[0]; a <= hi[0]; ++a)
    for (int b = lo[1]; b <= hi[1]; ++b)
      for (int c = lo[2]; c <= hi[2]; ++c) f(w + make_vec(a * L, b * L, c * L));
}

double PeriodicPotential::lattice_sum(const Vec& y, EnergyMode mode) const {
  if (spec_.identically_zero) return 0.0;
  const Vec w = box_.wrap(y);
  if (nearest_only_) return spec_.phi(w, mode);
  double s = 0.0;
  for_images(w, energy_K_, [&](const Vec& z) { s += spec_.phi(z, mode); });
  return s;
}

Vec PeriodicPotential::lattice_grad(const Vec& y) const {
  if (spec_.identically_zero) return {};
  const Vec w = box_.wrap(y);
  if (w == Vec{}) return {};
  if (nearest_only_) return spec_.grad_phi(w);
  if (force_K_ == -2)
    throw Error(ErrorKind::NonSummableTail, "potential '" + spec_.name + "' lacks a power-law force envelope");
  Vec g{};
  for_images(w, force_K_, [&](const Vec& z) { g += spec_.grad_phi(z); });
  return g;
}

double PeriodicPotential::phi_lambda(const Vec& y, EnergyMode mode) const {
  for (int i = 0; i < box_.dim(); ++i)
    if (std::abs(y[i]) >= box_.half_side()) return 0.0;
  return lattice_sum(y, mode);
}

double PeriodicPotential::hat_phi_lambda(const Vec& y, EnergyMode mode) const {
  for (int i = 0; i < box_.dim(); ++i)
    if (std::abs(y[i]) >= box_.side()) return 0.0;
  return lattice_sum(y, mode);
}

Vec PeriodicPotential::grad_hat_phi_lambda(const Vec& y) const {
  for (int i = 0; i < box_.dim(); ++i)
    if (std::abs(y[i]) >= box_.side()) return {};
  return lattice_grad(y);
}

double config_energy(std::span<const Vec> Z, const PotentialSpec& pot, EnergyMode mode) {
  double u = 0.0;
  for (std::size_t i = 0; i < Z.size(); ++i)
    for (std::size_t j = i + 1; j < Z.size(); ++j) u += pot.phi(Z[i] - Z[j], mode);
  return u;
}

double interaction_energy(std::span<const Vec> Z1, std::span<const Vec> Z2, const PotentialSpec& pot,
                          EnergyMode mode) {
  for (const auto& x : Z1)
    for (const auto& y : Z2)
      if (x == y) throw Error(ErrorKind::OverlappingConfigurations, "configurations share a point");
  double w = 0.0;
  for (const auto& x : Z1)
    for (const auto& y : Z2) w += pot.phi(x - y, mode);
  return w;
}

namespace {

// Cell grid for potentials whose range fits in the half box.
class CellList {
 public:
  static int cells_per_dim(const PeriodicPotential& pp) {
    if (!pp.nearest_image_only() || !pp.spec().support_radius || *pp.spec().support_radius <= 0.0) return 0;
    const int n = static_cast<int>(std::floor(pp.box().side() / *pp.spec().support_radius));
    return n >= 3 ? std::min(n, 64) : 0;
  }

  CellList(std::span<const Vec> Z, const BoxGeometry& box, int n) : d_(box.dim()), n_(n) {
    int total = 1;
    for (int i = 0; i < d_; ++i) total *= n_;
    head_.assign(total, -1);
    next_.assign(Z.size(), -1);
    for (std::size_t p = Z.size(); p-- > 0;) {
      const int c = cell_of(Z[p], box);
      next_[p] = head_[c];
      head_[c] = static_cast<int>(p);
    }
  }

  int cell_of(const Vec& x, const BoxGeometry& box) const {
    int idx = 0;
    for (int i = d_ - 1; i >= 0; --i) {
      int ci = static_cast<int>(std::floor((x[i] + box.half_side()) / box.side() * n_));
      ci = std::clamp(ci, 0, n_ - 1);
      idx = idx * n_ + ci;
    }
    return idx;
  }

  // Calls f(i, j) once for every unordered pair in neighbouring cells.
  template <class F>
  void for_pairs(F&& f) const {
    const int total = static_cast<int>(head_.size());
    for (int c = 0; c < total; ++c) {
      int coord[kMaxDim] = {0, 0, 0};
      int t = c;
      for (int i = 0; i < d_; ++i) {
        coord[i] = t % n_;
        t /= n_;
      }
      int lo[kMaxDim] = {0, 0, 0}, hi[kMaxDim] = {0, 0, 0};
      for (int i = 0; i < d_; ++i) lo[i] = -1, hi[i] = 1;
      for (int a = lo[0]; a <= hi[0]; ++a)
        for (int b = lo[1]; b <= hi[1]; ++b)
          for (int e = lo[2]; e <= hi[2]; ++e) {
            const int off[kMaxDim] = {a, b, e};
            int nb = 0;
            for (int i = d_ - 1; i >= 0; --i) nb = nb * n_ + ((coord[i] + off[i] + n_) % n_);
            for (int p = head_[c]; p >= 0; p = next_[p])
              for (int q = head_[nb]; q >= 0; q = next_[q])
                if (q > p) f(p, q);
          }
    }
  }

 private:
  int d_;
  int n_;
  std::vector<int> head_;
  std::vector<int> next_;
};

}  // namespace

double periodic_energy_naive(std::span<const Vec> Z, const PeriodicPotential& pp, EnergyMode mode) {
  double u = 0.0;
  for (std::size_t i = 0; i < Z.size(); ++i)
    for (std::size_t j = i + 1; j < Z.size(); ++j) u += pp.lattice_sum(Z[i] - Z[j], mode);
  return u;
}

double periodic_energy(std::span<const Vec> Z, const PeriodicPotential& pp, EnergyMode mode) {
  if (pp.spec().identically_zero) return 0.0;
  const int n = CellList::cells_per_dim(pp);
  if (n == 0) return periodic_energy_naive(Z, pp, mode);
  CellList cells(Z, pp.box(), n);
  double u = 0.0;
  cells.for_pairs([&](int i, int j) { u += pp.lattice_sum(Z[i] - Z[j], mode); });
  return u;
}

double periodic_particle_energy(std::span<const Vec> Z, std::size_t i, const Vec& xi, const PeriodicPotential& pp,
                                EnergyMode mode) {
  if (pp.spec().identically_zero) return 0.0;
  double u = 0.0;
  for (std::size_t j = 0; j < Z.size(); ++j)
    if (j != i) u += pp.lattice_sum(xi - Z[j], mode);
  return u;
}

std::vector<std::array<int, kMaxDim>> antipodal_representatives(int dim) {
  std::vector<std::array<int, kMaxDim>> out;
  const int lo = -1, hi = 1;
  for (int a = lo; a <= hi; ++a)
    for (int b = (dim >= 2 ? lo : 0); b <= (dim >= 2 ? hi : 0); ++b)
      for (int c = (dim >= 3 ? lo : 0); c <= (dim >= 3 ? hi : 0); ++c) {
        const std::array<int, kMaxDim> r{a, b, c};
        int first = 0;
        for (int v : r)
          if (v != 0) {
            first = v;
            break;
          }
        if (first > 0) out.push_back(r);
      }
  return out;
}

EnergyDecomposition decompose_energy(std::span<const Vec> Z, const PeriodicPotential& pp) {
  const BoxGeometry& box = pp.box();
  const int d = box.dim();
  const double lam = box.half_side(), L = box.side();
  for (std::size_t i = 0; i < Z.size(); ++i)
    for (std::size_t j = i + 1; j < Z.size(); ++j)
      for (int k = 0; k < d; ++k)
        if (std::abs(Z[i][k] - Z[j][k]) == lam)
          throw Error(ErrorKind::DistancesNotStrict, "a coordinate difference equals lambda");
  EnergyDecomposition out;
  for (std::size_t i = 0; i < Z.size(); ++i)
    for (std::size_t j = i + 1; j < Z.size(); ++j) out.U_term += pp.phi_lambda(Z[i] - Z[j]);
  // Images of Z in S: the shifted copies y + 2 lambda r, r in the antipodal
  // representatives, that land in (-2 lambda, 2 lambda]^d.
  std::vector<Vec> images;
  for (const auto& r : antipodal_representatives(d))
    for (const auto& y : Z) {
      const Vec img = y + make_vec(r[0] * L, r[1] * L, r[2] * L);
      bool inside = true;
      for (int k = 0; k < d; ++k) inside = inside && img[k] > -L && img[k] <= L;
      if (inside) images.push_back(img);
    }
  for (const auto& x : Z)
    for (const auto& y : images) out.W_term += pp.phi_lambda(x - y);
  return out;
}

namespace {

void check_distinct(std::span<const Vec> Z, const BoxGeometry& box, std::size_t i, std::size_t j) {
  if (box.min_image_delta(Z[i], Z[j]) == Vec{})
    throw Error(ErrorKind::CoincidentParticles,
                "particles " + std::to_string(i) + " and " + std::to_string(j) + " coincide");
}

}  // namespace

Positions periodic_forces_naive(std::span<const Vec> Z, const PeriodicPotential& pp) {
  Positions F(Z.size());
  for (std::size_t i = 0; i < Z.size(); ++i)
    for (std::size_t j = i + 1; j < Z.size(); ++j) {
      check_distinct(Z, pp.box(), i, j);
      const Vec g = pp.lattice_grad(Z[i] - Z[j]);
      F[i] -= g;
      F[j] += g;
    }
  return F;
}

Positions periodic_forces(std::span<const Vec> Z, const PeriodicPotential& pp) {
  if (pp.spec().identically_zero) return Positions(Z.size());
  const int n = CellList::cells_per_dim(pp);
  if (n == 0) return periodic_forces_naive(Z, pp);
  Positions F(Z.size());
  CellList cells(Z, pp.box(), n);
  cells.for_pairs([&](int i, int j) {
    check_distinct(Z, pp.box(), i, j);
    const Vec g = pp.lattice_grad(Z[i] - Z[j]);
    F[i] -= g;
    F[j] += g;
  });
  return F;
}

UniformBoundsReport check_uniform_bounds(const PotentialSpec& pot, std::span<const double> lambdas,
                                         const LatticeSumPolicy& policy, const BoundsSampleGrid& grid) {
  UniformBoundsReport rep;
  if (lambdas.empty()) return rep;
  const int d = pot.dim;
  const double G = pot.tail_G.value_or(0.0), eps = pot.tail_eps.value_or(1.0);
  const double lam0 = *std::min_element(lambdas.begin(), lambdas.end());
  rep.lattice_zeta = lattice_zeta(d, d + eps);
  rep.all_ok = true;
  const double M_tilde = pot.lower_bound_M + G * std::pow(lam0, -d - eps) * rep.lattice_zeta;
  const double G_tilde = G * (1.0 + rep.lattice_zeta);
  CounterRng rng(grid.seed, 0, 7);
  for (double lam : lambdas) {
    BoxGeometry box(d, lam);
    PeriodicPotential pp(pot, box, policy);
    BoxBoundsReport b;
    b.lambda = lam;
    b.M_tilde = M_tilde;
    b.G_tilde = G_tilde;

    const long budget = 100000;
    int per = grid.points_per_dim;
    while (std::pow(per, d) > budget) per = static_cast<int>(per * 0.8);
    b.inf_phi_lambda = kInf;
    const long total = static_cast<long>(std::pow(per, d));
    for (long n = 0; n < total; ++n) {
      long t = n;
      Vec y{};
      for (int k = 0; k < d; ++k) {
        y[k] = -lam + 2.0 * lam * (static_cast<double>(t % per) + 0.5) / per;
        t /= per;
      }
      if (y == Vec{}) continue;
      const double v = pp.phi_lambda(y);
      b.inf_phi_lambda = std::min(b.inf_phi_lambda, v);
      const double ny = norm_max(y);
      if (ny >= pot.core_radius_R) b.tail_ratio_sup = std::max(b.tail_ratio_sup, std::abs(v) * std::pow(ny, d + eps));
    }
    b.lower_bound_ok = b.inf_phi_lambda >= -M_tilde * (1.0 + 1e-12) - 1e-12;
    b.tail_ok = b.tail_ratio_sup <= G_tilde * (1.0 + 1e-9) + 1e-12;

    // Stability over random and close-packed configurations.
    double B = 0.0, A = kInf;
    auto consider = [&](const Positions& Z) {
      const double u = periodic_energy(Z, pp);
      if (!std::isfinite(u)) return;
      B = std::max(B, -u / static_cast<double>(Z.size()));
      std::map<std::array<long, kMaxDim>, int> counts;
      for (const auto& x : Z) {
        std::array<long, kMaxDim> c{0, 0, 0};
        for (int k = 0; k < d; ++k) c[k] = std::lround(x[k]);
        ++counts[c];
      }
      double q = 0.0;
      for (const auto& [c, n] : counts) q += static_cast<double>(n) * n;
      A = std::min(A, (u + B * static_cast<double>(Z.size())) / q);
    };
    std::vector<Positions> packed;
    for (int s = 0; s < 16; ++s) {
      const double a = 0.95 + 0.03 * s;
      const int per_dim = std::max(1, static_cast<int>(std::floor(2.0 * lam / a)));
      Positions Z;
      const int count = static_cast<int>(std::pow(per_dim, d));
      for (int n = 0; n < count && static_cast<int>(Z.size()) < 4096; ++n) {
        int t = n;
        Vec x{};
        for (int k = 0; k < d; ++k) {
          x[k] = box.wrap_coord(-lam + a * (t % per_dim) + 0.5 * a);
          t /= per_dim;
        }
        Z.push_back(x);
      }
      packed.push_back(std::move(Z));
    }
    for (const auto& Z : packed) consider(Z);
    for (int c = 0; c < grid.random_configs; ++c) {
      const int n = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::max(1, grid.max_particles))));
      Positions Z(n);
      for (auto& x : Z)
        for (int k = 0; k < d; ++k) x[k] = box.wrap_coord(rng.uniform(-lam, lam));
      consider(Z);
    }
    b.stability_B = B;
    b.cell_quadratic_A = std::isfinite(A) ? A : 0.0;

    // L^p norms of grad hat phi_lambda against exp(-beta hat phi_lambda) over
    // (-2 lambda, 2 lambda]^d, which holds 2^d periods of the integrand.
    int qp = grid.quadrature_points;
    while (std::pow(qp, d) > 4.0 * budget) qp = static_cast<int>(qp * 0.8);
    const double h = 2.0 * lam / qp;
    double acc[3] = {0.0, 0.0, 0.0};
    const long qtotal = static_cast<long>(std::pow(qp, d));
    for (long n = 0; n < qtotal; ++n) {
      long t = n;
      Vec y{};
      for (int k = 0; k < d; ++k) {
        y[k] = -lam + h * (static_cast<double>(t % qp) + 0.5);
        t /= qp;
      }
      const double e = pp.hat_phi_lambda(y);
      if (!std::isfinite(e)) continue;
      const double w = std::exp(-grid.beta * e);
      if (w == 0.0) continue;
      const double g = norm2(pp.grad_hat_phi_lambda(y));
      acc[0] += g * w;
      acc[1] += g * g * w;
      acc[2] += g * g * g * w;
    }
    const double vol = std::pow(h, d) * std::pow(2.0, d);
    for (int p = 0; p < 3; ++p) {
      b.grad_norm_p[p] = std::pow(acc[p] * vol, 1.0 / (p + 1));
      rep.sup_grad_norm_p[p] = std::max(rep.sup_grad_norm_p[p], b.grad_norm_p[p]);
    }
    rep.all_ok = rep.all_ok && b.lower_bound_ok && b.tail_ok;
    rep.boxes.push_back(b);
  }
  return rep;
}

HatPhi build_hat_Phi(const std::function<double(double)>& Phi, int dim, double t_min, int grid_per_decade) {
  if (!(t_min > 0.0 && t_min < 1.0)) throw Error(ErrorKind::InvalidArgument, "t_min must lie in (0,1)");
  const int decades = static_cast<int>(std::ceil(-std::log10(t_min)));
  const int n = decades * grid_per_decade + 1;
  std::vector<double> t(n), g(n), pm(n);
  for (int i = 0; i < n; ++i) {
    t[i] = t_min * std::pow(10.0, static_cast<double>(i) / grid_per_decade);
    g[i] = Phi(t[i]) * std::pow(t[i], dim);
    pm[i] = i == 0 ? g[i] : std::min(pm[i - 1], g[i]);
  }
  // Phi(t) t^d must grow towards 0 along the grid.
  const int i3 = std::min(n - 1, 3 * grid_per_decade);
  if (!(g[0] >= 2.0) || !(g[0] >= 2.0 * g[i3]))
    throw Error(ErrorKind::NotRepulsiveEnough, "Phi(t) t^d does not diverge on the sampled grid");

  auto sup_level = [&](double k) -> double {  // largest grid t with prefix min >= k, or 0
    if (pm[0] < k) return 0.0;
    int lo = 0, hi = n - 1;
    while (lo < hi) {
      const int mid = (lo + hi + 1) / 2;
      if (pm[mid] >= k) lo = mid;
      else hi = mid - 1;
    }
    return t[lo];
  };

  HatPhi out;
  out.dim_ = dim;
  const double shrink = 1.0 - 1e-9;
  double s = std::min(sup_level(1.0), 1.0);
  for (int k = 1; s >= t_min; ++k) {
    out.s_.push_back(s);
    const double cap = std::min(s, 1.0 / (k + 1)) * shrink;
    s = std::min(sup_level(k + 1.0), cap);
    if (s <= 0.0) break;
  }
  if (out.s_.size() < 2) throw Error(ErrorKind::NotRepulsiveEnough, "fewer than two levels on the grid");

  // hat Phi(s_k) by integrating theta(t) t^{-d-1} piecewise in closed form.
  const auto& sk = out.s_;
  out.cum_.assign(sk.size(), 0.0);
  const double d = dim;
  auto power_int = [d](double a, double b, double p) {  // int_a^b t^{-p} dt
    return p == 1.0 ? std::log(b / a) : (std::pow(a, 1.0 - p) - std::pow(b, 1.0 - p)) / (p - 1.0);
  };
  for (std::size_t k = 0; k + 1 < sk.size(); ++k) {
    const double hi = sk[k], lo = sk[k + 1], width = hi - lo;
    const double a = static_cast<double>(k) + hi / width, b = -1.0 / width;  // |theta| = d (a + b t)
    out.cum_[k + 1] = out.cum_[k] + d * (a * power_int(lo, hi, d + 1.0) + b * power_int(lo, hi, d));
  }
  return out;
}

double HatPhi::theta(double t) const {
  if (t >= s_.front()) return 0.0;
  const double d = dim_;
  if (t <= s_.back()) return -d * static_cast<double>(s_.size() - 1);
  // s_ is decreasing: find k with s_[k+1] <= t < s_[k].
  const auto it = std::lower_bound(s_.begin(), s_.end(), t, std::greater<double>());
  const std::size_t k = static_cast<std::size_t>(it - s_.begin()) - 1;
  const double hi = s_[k], lo = s_[k + 1];
  return -d * (static_cast<double>(k) + (hi - t) / (hi - lo));
}

double HatPhi::value(double t) const {
  if (t >= s_.front()) return 0.0;
  const double d = dim_;
  auto power_int = [d](double a, double b, double p) {
    return p == 1.0 ? std::log(b / a) : (std::pow(a, 1.0 - p) - std::pow(b, 1.0 - p)) / (p - 1.0);
  };
  if (t <= s_.back()) {
    const double c = d * static_cast<double>(s_.size() - 1);
    return cum_.back() + c * power_int(t, s_.back(), d + 1.0);
  }
  const auto it = std::lower_bound(s_.begin(), s_.end(), t, std::greater<double>());
  const std::size_t k = static_cast<std::size_t>(it - s_.begin()) - 1;
  const double hi = s_[k], lo = s_[k + 1], width = hi - lo;
  const double a = static_cast<double>(k) + hi / width, b = -1.0 / width;
  return cum_[k] + d * (a * power_int(t, hi, d + 1.0) + b * power_int(t, hi, d));
}

double HatPhi::derivative(double t) const { return theta(t) * std::pow(t, -dim_ - 1.0); }

}  // namespace nvl
