#include <cmath>

#include "doctest.h"
#include "nvl/configspace.hpp"
#include "nvl/errors.hpp"
#include "nvl/rng.hpp"

using namespace nvl;

namespace {

MarkedConfiguration random_config(int dim, int n, double half, std::uint64_t seed) {
  CounterRng rng(seed, 3);
  MarkedConfiguration g;
  g.dim = dim;
  for (int i = 0; i < n; ++i) {
    Vec x{}, v{};
    for (int k = 0; k < dim; ++k) {
      x[k] = rng.uniform(-half, half);
      v[k] = rng.normal();
    }
    g.add(x, v);
  }
  return g;
}

}  // namespace

TEST_CASE("bump and step closed forms") {
  CHECK(bump1(0.0) == 1.0);
  CHECK(bump1(1.0) == 0.0);
  CHECK(bump1(-1.2) == 0.0);
  CHECK(bump1(0.5) == doctest::Approx(std::exp(-0.25 / 0.75)).epsilon(1e-15));
  CHECK(smooth_step(0.0) == 0.0);
  CHECK(smooth_step(1.0) == 1.0);
  CHECK(smooth_step(0.5) == doctest::Approx(0.5).epsilon(1e-15));
  for (double t : {0.1, 0.3, 0.77}) {
    CHECK(smooth_step(t) + smooth_step(1.0 - t) == doctest::Approx(1.0).epsilon(1e-14));
    const double h = 1e-6;
    CHECK(smooth_step_deriv(t) == doctest::Approx((smooth_step(t + h) - smooth_step(t - h)) / (2 * h)).epsilon(1e-6));
  }
  for (double u : {-0.7, 0.2, 0.9}) {
    const double h = 1e-6;
    CHECK(bump1_deriv(u) == doctest::Approx((bump1(u + h) - bump1(u - h)) / (2 * h)).epsilon(1e-6).scale(1e-3));
    CHECK(bump1_deriv2(u) ==
          doctest::Approx((bump1_deriv(u + h) - bump1_deriv(u - h)) / (2 * h)).epsilon(1e-5).scale(1e-3));
  }
}

TEST_CASE("plateau cutoff I_k") {
  const auto p = default_metric_params(2);
  CHECK(p.I(3, make_vec(2.9, -3.0)) == 1.0);
  CHECK(p.I(3, make_vec(4.0, 0.0)) == 0.0);
  const double mid = p.I(3, make_vec(3.5, 0.0));
  CHECK(mid == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("metrics vanish on equal configurations and are symmetric") {
  for (int d = 1; d <= 3; ++d) {
    const auto p = default_metric_params(d, 16);
    const auto a = random_config(d, 6, 3.0, 10 + d), b = random_config(d, 7, 3.0, 20 + d);
    CHECK(dist_full(a, a, p) == 0.0);
    CHECK(dist_star(a, a, p) == 0.0);
    CHECK(dist_full(a, b, p) == doctest::Approx(dist_full(b, a, p)).epsilon(1e-14));
    CHECK(dist_full(a, b, p) > 0.0);
  }
}

TEST_CASE("metrics ignore particle order") {
  const auto p = default_metric_params(2, 16);
  auto a = random_config(2, 5, 3.0, 1);
  auto b = a;
  std::swap(b.x[0], b.x[3]);
  std::swap(b.v[0], b.v[3]);
  CHECK(dist_full(a, b, p) == doctest::Approx(0.0).scale(1.0).epsilon(1e-14));
}

TEST_CASE("triangle inequality on random triples") {
  const auto p = default_metric_params(1, 24);
  for (int s = 0; s < 30; ++s) {
    const auto a = random_config(1, 1 + s % 4, 3.0, 100 + s);
    const auto b = random_config(1, 2 + s % 3, 3.0, 200 + s);
    const auto c = random_config(1, 1 + s % 5, 3.0, 300 + s);
    CHECK(dist_full(a, c, p) <= dist_full(a, b, p) + dist_full(b, c, p) + 1e-14);
    CHECK(dist_vague(a.x, c.x, p) <= dist_vague(a.x, b.x, p) + dist_vague(b.x, c.x, p) + 1e-14);
  }
}

TEST_CASE("adding a distant particle changes only far terms") {
  const auto p = default_metric_params(1, 32);
  auto a = random_config(1, 3, 1.0, 5);
  auto b = a;
  b.add(make_vec(40.0), make_vec(0.0));
  // Every bump and plateau below level 39 misses x = 40; the remainder is tiny.
  CHECK(dist_full(a, b, p) < 1e-6);
  auto c = a;
  c.add(make_vec(0.2), make_vec(0.1));
  CHECK(dist_full(a, c, p) > 1e-3);
}

TEST_CASE("metric is bounded by the weight series") {
  const auto p = default_metric_params(1, 32);
  const auto a = random_config(1, 50, 8.0, 9), b = random_config(1, 0, 8.0, 10);
  // Each of the four series contributes at most sum 2^-k (times r_k, q_k = 1).
  CHECK(dist_full(a, b, p) <= 4.0);
  CHECK(p.truncation_tail() == doctest::Approx(4.0 * std::ldexp(1.0, -32)));
}

TEST_CASE("S_pair reduces to the product sum when Phi vanishes") {
  const std::vector<Vec> pts = {make_vec(0.1), make_vec(0.5), make_vec(-1.0)};
  auto h = [](const Vec& x) { return 1.0 + x[0] * x[0]; };
  const double s = S_pair(pts, [](double) { return 0.0; }, h);
  const double w0 = h(pts[0]), w1 = h(pts[1]), w2 = h(pts[2]);
  CHECK(s == doctest::Approx(w0 * w1 + w0 * w2 + w1 * w2).epsilon(1e-14));
  const double s2 = S_pair(pts, [](double t) { return t < 0.5 ? 1.0 : 0.0; }, h);
  CHECK(s2 == doctest::Approx(std::exp(1.0) * w0 * w1 + w0 * w2 + w1 * w2).epsilon(1e-14));
}

TEST_CASE("sublevel sets have bounded count and speed") {
  auto p = default_metric_params(1, 8);
  p.Phi = [](double t) { return t < 0.5 ? 2.0 : 0.0; };
  const double half = 2.0, K = 5.0;
  const auto b = sublevel_bounds(K, half, p);
  CHECK(b.max_count > 0);
  CHECK(b.max_speed > 0.0);
  long seen = 0;
  for (int s = 0; s < 400; ++s) {
    const auto g = random_config(1, 1 + s % 12, half, 1000 + s);
    if (S_compact(g, p) > K) continue;
    ++seen;
    CHECK(static_cast<long>(g.size()) <= b.max_count);
    for (const auto& v : g.v) CHECK(norm2(v) <= b.max_speed);
  }
  CHECK(seen > 10);
  CHECK_THROWS_AS(sublevel_bounds(-1.0, half, p), Error);
}

TEST_CASE("pairing sums over particles") {
  const auto g = random_config(2, 4, 1.0, 77);
  const double s = pairing([](const Vec& x, const Vec& v) { return x[0] + v[1]; }, g);
  double want = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) want += g.x[i][0] + g.v[i][1];
  CHECK(s == doctest::Approx(want).epsilon(1e-15));
}
