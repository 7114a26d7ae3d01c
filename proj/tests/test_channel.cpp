#include "uavsearch/channel.hpp"

#include "test_support.hpp"

#include <doctest.h>

using namespace uavsearch;
using test::flat_map;
using test::single_block_map;

TEST_CASE("los gain: pinned values of the default model") {
  ChannelParams p;
  const Vec3 u(0, 0, 0);
  CHECK(los_gain_db(p, Vec3(1, 0, 0), u) == doctest::Approx(-46.53));
  // 46.53 + 20 log10(d) path loss at 100 m.
  CHECK(los_gain_db(p, Vec3(100, 0, 0), u) == doctest::Approx(-86.53));
  // Log law: a decade of distance costs exactly 10*|a0| dB.
  const double g1 = los_gain_db(p, Vec3(37, 0, 0), u);
  const double g2 = los_gain_db(p, Vec3(370, 0, 0), u);
  CHECK(g1 - g2 == doctest::Approx(20.0).epsilon(1e-12));
  CHECK_THROWS_AS(los_gain_db(p, u, u), std::domain_error);
}

TEST_CASE("los gain: strictly decreasing in distance") {
  ChannelParams p;
  const Vec3 u(0, 0, 0);
  double prev = los_gain_db(p, Vec3(1, 0, 0), u);
  for (double d = 2.0; d < 2000.0; d *= 1.7) {
    const double g = los_gain_db(p, Vec3(d, 0, 0), u);
    CHECK(g < prev);
    prev = g;
  }
}

TEST_CASE("los gain gradient matches central differences") {
  ChannelParams p;
  Rng rng(99);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const Vec3 u(unit(rng) * 50, unit(rng) * 50, 0.0);
    Vec3 x(unit(rng) * 300, unit(rng) * 300, 60.0 + unit(rng) * 200);
    if ((x - u).norm() < 10.0) x.z() += 50.0;
    const Vec3 grad = los_gain_gradient_db(p, x, u);
    const double h = 1e-4;
    for (int axis = 0; axis < 3; ++axis) {
      Vec3 dx = Vec3::Zero();
      dx(axis) = h;
      const double fd = (los_gain_db(p, x + dx, u) - los_gain_db(p, x - dx, u)) / (2 * h);
      CHECK(std::abs(grad(axis) - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("lipschitz envelope holds at altitude with the stated constant") {
  // |g(x) - g(x0) - grad^T (x-x0)| <= (L_g/2) d^2 for pairs within 60 m,
  // everything at least 100 m from the node.
  ChannelParams p;
  Rng rng(4242);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const Vec3 u(0, 0, 0);
  for (int i = 0; i < 2000; ++i) {
    Vec3 x0(unit(rng) * 150, unit(rng) * 150, 120.0 + 150.0 * std::abs(unit(rng)));
    if (x0.norm() < 110.0) x0 *= 110.0 / x0.norm();
    Vec3 dx(unit(rng), unit(rng), unit(rng));
    dx *= 60.0 * std::abs(unit(rng)) / std::max(dx.norm(), 1e-9);
    const Vec3 x = x0 + dx;
    if (x.norm() < 105.0 || x.z() < 100.0) continue;
    const double lin = los_gain_db(p, x0, u) + los_gain_gradient_db(p, x0, u).dot(dx);
    const double err = std::abs(los_gain_db(p, x, u) - lin);
    CHECK(err <= 0.5 * p.lg * dx.squaredNorm() * (1.0 + 1e-9));
  }
}

TEST_CASE("true gain: LOS branch exact, NLOS penalty frozen per position") {
  ChannelParams p;
  p.nlos_std_db = 4.0;
  p.nlos_seed = 77;
  const CityMap map = single_block_map(200.0, 10.0, 90.0, 110.0, 0.0, 200.0, 80.0);
  const Vec3 u(170.0, 100.0, 0.0);
  const Vec3 los_x(150.0, 100.0, 40.0);
  CHECK(true_gain_db(p, map, los_x, u) == doctest::Approx(los_gain_db(p, los_x, u)));

  const Vec3 nlos_x(20.0, 100.0, 30.0);
  REQUIRE_FALSE(los_indicator(map, nlos_x, u));
  const double y1 = true_gain_db(p, map, nlos_x, u);
  const double y2 = true_gain_db(p, map, nlos_x, u);
  CHECK(y1 == y2);
  // A different position draws a different penalty almost surely.
  const double y3 = true_gain_db(p, map, nlos_x + Vec3(2, 0, 0), u);
  CHECK(y1 != y3);
}

TEST_CASE("true gain: zero-variance NLOS penalty is the -30 dB offset") {
  ChannelParams p;  // nlos_std_db = 0, nlos_mean_db = -30
  const CityMap map = single_block_map(200.0, 10.0, 90.0, 110.0, 0.0, 200.0, 80.0);
  const Vec3 u(170.0, 100.0, 0.0);
  const Vec3 nlos_x(20.0, 100.0, 30.0);
  CHECK(true_gain_db(p, map, nlos_x, u) == doctest::Approx(los_gain_db(p, nlos_x, u) - 30.0));
}

TEST_CASE("measure: noiseless LOS equals the model; moments match sigma") {
  const CityMap map = flat_map(500.0, 5.0);
  Scenario sc = test::balancing_scenario(Vec3(0, 0, 20), {Vec3(100, 0, 0)}, 1.0, 1.0);
  ChannelParams p;
  p.sigma_db = 0.0;
  Rng rng(1);
  const Vec3 x(50, 20, 80);
  const Measurement m0 = measure(p, map, x, sc, 1, 0.0, rng);
  CHECK(m0.is_los);
  CHECK(m0.y_db == doctest::Approx(los_gain_db(p, x, sc.user_positions[0])));

  p.sigma_db = 5.0;
  const int n = 10000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double y = measure(p, map, x, sc, 1, 0.0, rng).y_db;
    sum += y;
    sum2 += y * y;
  }
  const double mean = sum / n;
  const double stddev = std::sqrt(sum2 / n - mean * mean);
  const double truth = los_gain_db(p, x, sc.user_positions[0]);
  CHECK(std::abs(mean - truth) < 3.0 * p.sigma_db / std::sqrt(static_cast<double>(n)));
  CHECK(stddev == doctest::Approx(p.sigma_db).epsilon(0.05));
}

TEST_CASE("objectives: pinned closed forms") {
  CHECK(objective_fk(1.0, 1.0, UserObjective::Capacity, 1.0) == doctest::Approx(1.0));
  CHECK(objective_fk(3.0, 0.0, UserObjective::Capacity, 2.0) == doctest::Approx(0.0));
  CHECK(objective_fk(3.0, 0.0, UserObjective::Snr, 2.0) == doctest::Approx(0.0));
  CHECK(objective_fk(3.0, 2.0, UserObjective::Snr, 0.5) == doctest::Approx(3.0));
  CHECK(objective_f0(1.0, 3.0) == doctest::Approx(2.0));
  CHECK_THROWS_AS(objective_f0(0.0, 1.0), std::domain_error);
  CHECK_THROWS_AS(objective_fk(-1.0, 1.0, UserObjective::Capacity, 1.0), std::domain_error);
}
