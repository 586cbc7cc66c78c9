#include <cmath>
#include <numbers>

#include "doctest.h"
#include "nvl/errors.hpp"
#include "nvl/potential.hpp"
#include "nvl/rng.hpp"

using namespace nvl;

namespace {

Positions random_positions(int n, const BoxGeometry& box, std::uint64_t seed) {
  CounterRng rng(seed, 0);
  Positions Z(n);
  for (auto& x : Z)
    for (int k = 0; k < box.dim(); ++k) x[k] = box.wrap_coord(rng.uniform(-box.half_side(), box.half_side()));
  return Z;
}

}  // namespace

TEST_CASE("smoothed LJ matches reference values") {
  // Reference values from an independent evaluation of the same formula.
  const auto p = make_smoothed_lj(1);
  CHECK(p.value(0.9) == doctest::Approx(6.636118953252921).epsilon(1e-13));
  CHECK(p.value(1.0) == doctest::Approx(0.0).epsilon(1e-13));
  CHECK(p.value(std::pow(2.0, 1.0 / 6.0)) == doctest::Approx(-1.0).epsilon(1e-13));
  CHECK(p.value(1.5) == doctest::Approx(-0.3203365942785745).epsilon(1e-13));
  CHECK(p.value(1.7) == doctest::Approx(-0.13586522582616992).epsilon(1e-12));
  CHECK(p.value(1.8) == doctest::Approx(-0.04199269617969124).epsilon(1e-12));
  CHECK(p.value(1.9) == doctest::Approx(-0.0019359499440784313).epsilon(1e-11));
  CHECK(p.value(1.95) == 0.0);
  CHECK(p.value(2.5) == 0.0);
}

TEST_CASE("smoothed LJ is C1 across the switch and the cutoff") {
  const auto p = make_smoothed_lj(1);
  for (double r : {1.6, 1.95}) {
    CHECK(std::abs(p.value(r - 1e-7) - p.value(r + 1e-7)) < 1e-6);
    CHECK(std::abs(p.deriv(r - 1e-7) - p.deriv(r + 1e-7)) < 1e-5);
  }
  for (double r : {0.95, 1.2, 1.7, 1.9}) {
    const double h = 1e-6;
    CHECK(p.deriv(r) == doctest::Approx((p.value(r + h) - p.value(r - h)) / (2 * h)).epsilon(1e-6));
  }
}

TEST_CASE("capped mode replaces the singular core") {
  const auto p = make_smoothed_lj(2);
  CHECK(p.phi(make_vec(0.1, 0.0), EnergyMode::Capped) == 1e6);
  CHECK(std::isinf(p.phi(Vec{}, EnergyMode::Exact)));
  CHECK(std::isfinite(p.phi(make_vec(0.1, 0.0), EnergyMode::Exact)));
}

TEST_CASE("soft-core lattice sum matches an independent image sum") {
  const auto p = make_soft_core(1);
  const PeriodicPotential pp(p, BoxGeometry(1, 1.5), {-1, 1e-13});
  CHECK(pp.lattice_sum(make_vec(0.7)) == doctest::Approx(72.247661594713840885).epsilon(1e-11));
  CHECK(pp.lattice_sum(make_vec(1.2)) == doctest::Approx(0.11302112494746269031).epsilon(1e-11));
  CHECK(pp.lattice_sum(make_vec(-0.4)) == doctest::Approx(59604.644786289894084).epsilon(1e-11));
  // Periodic in the argument.
  CHECK(pp.lattice_sum(make_vec(0.7 + 3.0)) == doctest::Approx(pp.lattice_sum(make_vec(0.7))).epsilon(1e-12));
}

TEST_CASE("lattice zeta in one dimension is twice the Riemann zeta") {
  // zeta(3) = 1.2020569031595942, zeta(4) = pi^4 / 90
  CHECK(lattice_zeta(1, 3.0) == doctest::Approx(2 * 1.2020569031595942).epsilon(1e-9));
  CHECK(lattice_zeta(1, 4.0) == doctest::Approx(2 * std::pow(std::numbers::pi, 4) / 90).epsilon(1e-9));
  CHECK_THROWS_AS(lattice_zeta(2, 2.0), Error);
}

TEST_CASE("lattice tail bound decreases with K and bounds the true tail") {
  const double lam = 1.5, G = 1.0, q = 12.0;
  double prev = kInf;
  for (int K = 1; K <= 4; ++K) {
    const double b = lattice_tail_bound(1, G, q, lam, K);
    CHECK(b < prev);
    prev = b;
    double tail = 0.0;
    for (int k = K + 1; k < 2000; ++k) tail += 2.0 * std::pow(lam * (2 * k - 1), -q);
    CHECK(tail <= b);
  }
  CHECK_THROWS_AS(lattice_tail_bound(3, 1.0, 2.0, 1.0, 1), Error);
}

TEST_CASE("non-summable tails are rejected") {
  SoftCoreParams q;
  q.exponent = 2.0;
  CHECK_THROWS_AS(make_soft_core(2, q), Error);
  try {
    PotentialSpec p = make_soft_core(1);
    p.tail_G.reset();
    p.support_radius.reset();
    PeriodicPotential pp(p, BoxGeometry(1, 2.0));
    FAIL("expected NonSummableTail");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NonSummableTail);
  }
}

TEST_CASE("builtin factory validates names and keys") {
  CHECK(make_builtin_potential("smoothed_lj", 1, {{"epsilon", 2.0}}).params.at("epsilon") == 2.0);
  try {
    make_builtin_potential("smoothed_lj", 1, {{"epsilonn", 2.0}});
    FAIL("expected ConfigError");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ConfigError);
  }
  CHECK_THROWS_AS(make_builtin_potential("yukawa", 1, {}), Error);
}

TEST_CASE("energy decomposition reproduces the periodic energy") {
  for (int d = 1; d <= 3; ++d)
    for (double lam : {1.5, 2.5}) {
      const BoxGeometry box(d, lam);
      for (const auto& pot : {make_smoothed_lj(d), make_soft_core(d)}) {
        const PeriodicPotential pp(pot, box);
        for (int c = 0; c < 20; ++c) {
          const auto Z = random_positions(2 + c % 5, box, 100 * d + c);
          const double u = periodic_energy(Z, pp);
          if (!std::isfinite(u) || std::abs(u) > 1e8) continue;
          const auto dec = decompose_energy(Z, pp);
          CHECK(std::abs(u - (dec.W_term + dec.U_term)) <= 10 * pp.policy().target_abs_error * (1 + std::abs(u)));
        }
      }
    }
}

TEST_CASE("decomposition rejects a coordinate gap of exactly lambda") {
  const BoxGeometry box(1, 2.0);
  const PeriodicPotential pp(make_soft_core(1), box);
  const Positions Z = {make_vec(-1.0), make_vec(1.0)};
  try {
    decompose_energy(Z, pp);
    FAIL("expected DistancesNotStrict");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DistancesNotStrict);
  }
}

TEST_CASE("cell-list energy and forces agree with the naive sums") {
  for (int d = 1; d <= 3; ++d) {
    const BoxGeometry box(d, 3.0);
    const PeriodicPotential pp(make_smoothed_lj(d), box);
    const auto Z = random_positions(d == 3 ? 30 : 40, box, 7 + d);
    const double a = periodic_energy(Z, pp, EnergyMode::Capped);
    const double b = periodic_energy_naive(Z, pp, EnergyMode::Capped);
    CHECK(a == doctest::Approx(b).epsilon(1e-10));
    const auto F = periodic_forces(Z, pp), G = periodic_forces_naive(Z, pp);
    for (std::size_t i = 0; i < Z.size(); ++i)
      for (int k = 0; k < d; ++k) CHECK(F[i][k] == doctest::Approx(G[i][k]).epsilon(1e-9).scale(1.0));
  }
}

TEST_CASE("forces are minus the energy gradient and sum to zero") {
  const BoxGeometry box(2, 2.0);
  const PeriodicPotential pp(make_soft_core(2, {1.0, 0.6, 12.0, 0.05, 1e6}), box);
  const Positions Z = {make_vec(0.1, 0.2), make_vec(0.9, -0.3), make_vec(-1.1, 1.4), make_vec(1.7, 1.9)};
  const auto F = periodic_forces(Z, pp);
  Vec total{};
  for (std::size_t i = 0; i < Z.size(); ++i) {
    total += F[i];
    for (int k = 0; k < 2; ++k) {
      auto Zp = Z, Zm = Z;
      const double h = 1e-6;
      Zp[i][k] += h;
      Zm[i][k] -= h;
      const double fd = -(periodic_energy(Zp, pp) - periodic_energy(Zm, pp)) / (2 * h);
      CHECK(F[i][k] == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
    }
  }
  CHECK(norm_max(total) < 1e-10);
}

TEST_CASE("coincident particles are reported") {
  const BoxGeometry box(1, 2.0);
  const PeriodicPotential pp(make_soft_core(1), box);
  const Positions Z = {make_vec(0.5), make_vec(0.5 + 4.0 - 4.0)};
  try {
    periodic_forces(Z, pp);
    FAIL("expected CoincidentParticles");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::CoincidentParticles);
  }
}

TEST_CASE("interaction energy rejects shared points") {
  const auto p = make_soft_core(1);
  const Positions A = {make_vec(0.0)}, B = {make_vec(0.0)};
  CHECK_THROWS_AS(interaction_energy(A, B, p), Error);
}

TEST_CASE("hat Phi is a differentiable minorant that beats t^-d") {
  for (int d = 1; d <= 2; ++d) {
    const auto pot = make_soft_core(d);
    const HatPhi hat = build_hat_Phi(pot.repulsion_Phi, d);
    for (double t = 0.01; t < 1.0; t *= 1.3) {
      CHECK(hat(t) <= pot.repulsion_Phi(t) * (1 + 1e-9));
      CHECK(hat.derivative(t) <= 1e-12);
    }
    CHECK(hat(1e-3) * std::pow(1e-3, d) > hat(1e-2) * std::pow(1e-2, d));
  }
  CHECK_THROWS_AS(build_hat_Phi([](double) { return 1.0; }, 1), Error);
}

TEST_CASE("uniform bounds hold for smoothed LJ across boxes") {
  BoundsSampleGrid grid;
  grid.points_per_dim = 101;
  grid.random_configs = 40;
  const std::vector<double> lams = {2.0, 4.0};
  const auto rep = check_uniform_bounds(make_smoothed_lj(1), lams, {}, grid);
  CHECK(rep.all_ok);
  REQUIRE(rep.boxes.size() == 2);
  // The range is below lambda, so the sampled infimum approaches the well depth from above.
  CHECK(rep.boxes[0].inf_phi_lambda >= -1.0 - 1e-12);
  CHECK(rep.boxes[0].inf_phi_lambda < -0.99);
}
