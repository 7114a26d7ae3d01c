#include "uavsearch/baselines.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>

using namespace uavsearch;
using test::flat_map;

namespace {

struct Fixture {
  CityMap map;
  Scenario scenario;
  ChannelParams channel;
};

Fixture flat_fixture() {
  Fixture f;
  f.map = flat_map(400.0, 20.0, 10.0);
  f.scenario.bs_position = Vec3(-100.0, 0.0, 20.0);
  f.scenario.user_positions = {Vec3(100.0, 0.0, 0.0)};
  f.scenario.p0 = 1.0;
  f.scenario.p_total = 1.0;
  f.scenario.problem_kind = ProblemKind::Balancing;
  f.scenario.noise_power = 1e-9;
  return f;
}

Fixture manhattan_fixture(std::uint64_t seed) {
  Fixture f;
  ManhattanMapSpec spec;
  spec.seed = seed;
  spec.width_m = 400.0;
  spec.depth_m = 400.0;
  spec.target_bcr = 0.25;
  f.map = generate_manhattan_map(spec);
  f.scenario.user_positions = place_users(f.map, seed + 1, 3);
  f.scenario.bs_position = Vec3(f.map.origin.x() + 30.0, f.map.origin.y() + 30.0, 25.0);
  f.scenario.p0 = 3.0;
  f.scenario.p_total = 1.0;
  f.scenario.problem_kind = ProblemKind::SumRate;
  f.scenario.noise_power = 1e-9;
  return f;
}

}  // namespace

TEST_CASE("exhaustive 3d: flat-map mid-plane optimum within one lattice step") {
  const Fixture f = flat_fixture();
  const EvaluationResult res = exhaustive_3d(f.map, f.scenario, f.channel, 5.0, 2);
  // P0 = P_T, symmetric nodes: optimum on the mid-plane at the lowest altitude.
  CHECK(std::abs(res.best_x.x()) <= 5.0);
  CHECK(res.best_x.z() == doctest::Approx(f.map.h_min));
  const double analytic = evaluate_objective(
      f.map, f.scenario, f.channel, Vec3(0.0, res.best_x.y(), f.map.h_min));
  CHECK(res.objective >= analytic - 1e-9);
}

TEST_CASE("exhaustive 3d: lattice refinement never loses value") {
  const Fixture f = flat_fixture();
  const EvaluationResult fine = exhaustive_3d(f.map, f.scenario, f.channel, 5.0, 2);
  const EvaluationResult coarse = exhaustive_3d(f.map, f.scenario, f.channel, 50.0, 2);
  CHECK(fine.objective >= coarse.objective);
  CHECK(coarse.evaluations == 9L * 9L * 6L);  // 400/50+1 squared, altitudes 20..270
}

TEST_CASE("exhaustive 2d: slice of the 3d search") {
  const Fixture f = flat_fixture();
  const EvaluationResult e3 = exhaustive_3d(f.map, f.scenario, f.channel, 10.0, 2);
  const EvaluationResult e2 = exhaustive_2d(f.map, f.scenario, f.channel, 10.0, 2);
  CHECK(e2.objective <= e3.objective + 1e-12);
  CHECK(e2.best_x.z() == doctest::Approx(f.map.h_min + 50.0));

  // On a flat map the slice scan reproduces a direct sweep at that altitude.
  double best_at_slice = -1e300;
  for (double x = f.map.origin.x(); x <= f.map.origin.x() + 400.0; x += 10.0) {
    for (double y = f.map.origin.y(); y <= f.map.origin.y() + 400.0; y += 10.0) {
      best_at_slice = std::max(best_at_slice, evaluate_objective(f.map, f.scenario, f.channel,
                                                                 Vec3(x, y, f.map.h_min + 50.0)));
    }
  }
  CHECK(e2.objective == doctest::Approx(best_at_slice));
}

TEST_CASE("exhaustive ordering on dense synthetic maps") {
  int strict = 0;
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const Fixture f = manhattan_fixture(seed);
    const EvaluationResult e3 = exhaustive_3d(f.map, f.scenario, f.channel, 10.0, 2);
    const EvaluationResult e2 = exhaustive_2d(f.map, f.scenario, f.channel, 10.0, 2);
    CHECK(e2.objective <= e3.objective + 1e-12);
    if (e2.objective < e3.objective - 1e-9) ++strict;
  }
  CHECK(strict >= 2);  // height flexibility usually wins on dense maps
}

TEST_CASE("los probability fit: flat map degenerates, dense map is monotone") {
  const Fixture flat = flat_fixture();
  Rng rng(5);
  const LosProbabilityFit ff = fit_los_probability(flat.map, flat.scenario, 2000, rng);
  CHECK(ff.flat_fit);
  CHECK(ff.p_los(0.7) > 0.99);

  const Fixture dense = manhattan_fixture(11);
  Rng rng2(6);
  const LosProbabilityFit fit = fit_los_probability(dense.map, dense.scenario, 20000, rng2);
  CHECK_FALSE(fit.flat_fit);
  CHECK(fit.rmse < 0.1);
  double prev = 0.0;
  for (double a = 0.05; a < 1.5; a += 0.1) {
    CHECK(fit.p_los(a) >= prev - 1e-12);
    prev = fit.p_los(a);
  }
  // Refit with a different seed moves the curve, not the shape.
  Rng rng3(7);
  const LosProbabilityFit fit2 = fit_los_probability(dense.map, dense.scenario, 20000, rng3);
  for (double a : {0.2, 0.5, 0.9, 1.3}) {
    CHECK(std::abs(fit2.p_los(a) - fit.p_los(a)) < 0.1);
  }
}

TEST_CASE("statistical geometry: degenerate probability limits") {
  const Fixture f = manhattan_fixture(3);
  // P_L == 1 scans plain LOS gains; the reported value re-gates by true LOS,
  // so it can never beat the exhaustive optimum.
  LosProbabilityFit always;
  always.a_e = 1e-9;
  always.b_e = 1e-3;
  REQUIRE(always.p_los(0.3) > 0.999999);
  const EvaluationResult statis =
      statistical_geometry(f.map, f.scenario, f.channel, 10.0, always, 2);
  const EvaluationResult exh = exhaustive_3d(f.map, f.scenario, f.channel, 10.0, 2);
  CHECK(statis.objective <= exh.objective + 1e-12);

  // P_L == 0 shifts every link by the same penalty: balancing argmax unchanged.
  Scenario bal = f.scenario;
  bal.problem_kind = ProblemKind::Balancing;
  LosProbabilityFit never;
  never.a_e = 1e9;
  never.b_e = 1e-3;
  REQUIRE(never.p_los(1.2) < 1e-6);
  const EvaluationResult a = statistical_geometry(f.map, bal, f.channel, 20.0, always, 2);
  const EvaluationResult b = statistical_geometry(f.map, bal, f.channel, 20.0, never, 2);
  CHECK(a.best_x == b.best_x);
}

TEST_CASE("genius-aided matches the proposed scheme in free space") {
  Fixture f = flat_fixture();
  f.map = flat_map(2400.0, 20.0, 10.0);
  f.scenario.bs_position = Vec3(-150.0, 0.0, 20.0);
  f.scenario.user_positions = {Vec3(100.0, -60.0, 0.0), Vec3(100.0, 60.0, 0.0)};
  f.scenario.p0 = 4.0;
  f.channel.sigma_db = 0.25;
  SearchConfig config;
  config.max_time = 2500.0;

  Rng rng_a(21);
  const EvaluationResult genius = genius_aided(f.map, f.scenario, f.channel, config, rng_a);
  std::vector<double> ratios;
  double proposed_len = 0.0;
  for (int seed : {21, 23, 24}) {
    Rng rng_b(seed);
    const EvaluationResult proposed = proposed_scheme(f.map, f.scenario, f.channel, config, rng_b);
    ratios.push_back(proposed.objective / genius.objective);
    proposed_len = std::max(proposed_len, proposed.trajectory_length);
  }
  std::sort(ratios.begin(), ratios.end());
  CHECK(ratios[1] >= 0.97);
  CHECK(ratios[1] <= 1.03);
  // No spiral: the genius trajectory is strictly shorter.
  CHECK(genius.trajectory_length < proposed_len);

  // Noise-free estimation closes most of the gap; what remains is the
  // curvature bias of the first-order local model over the spiral window,
  // which only vanishes as the measurement radius also shrinks (the genius
  // configuration itself).
  ChannelParams quiet = f.channel;
  quiet.sigma_db = 0.0;
  Rng rng_c(5);
  const EvaluationResult noiseless = proposed_scheme(f.map, f.scenario, quiet, config, rng_c);
  CHECK(noiseless.objective >= 0.97 * genius.objective);
}

TEST_CASE("evaluate objective: NLOS sentinel and symmetric closed form") {
  const Fixture f = flat_fixture();
  CHECK(std::isinf(evaluate_objective(f.map, f.scenario, f.channel, Vec3(0.0, 0.0, 5.0))));

  const CityMap blocked = test::single_block_map(400.0, 10.0, 180.0, 220.0, 0.0, 400.0, 80.0);
  Scenario sc = f.scenario;
  sc.bs_position = Vec3(40.0, 200.0, 20.0);
  sc.user_positions = {Vec3(360.0, 200.0, 0.0)};
  const Vec3 shadowed(60.0, 200.0, 30.0);
  REQUIRE_FALSE(is_full_los(blocked, shadowed, sc));
  CHECK(std::isinf(evaluate_objective(blocked, sc, f.channel, shadowed)));

  // K=1, P0=P_T at an equidistant point: value = log2(1 + P_T g) with the
  // common gain g. Build the point in the mid-perpendicular plane's basis so
  // the BS mast height is accounted for.
  const Vec3 m = 0.5 * (f.scenario.bs_position + f.scenario.user_positions[0]);
  const Vec3 n = (f.scenario.user_positions[0] - f.scenario.bs_position).normalized();
  const Vec3 t1 = Vec3::UnitY();  // in-plane: the node axis has no y component
  const Vec3 t2 = n.cross(t1).normalized();
  const Vec3 mid = m + 40.0 * t1 + 30.0 * t2;
  REQUIRE(std::abs((mid - f.scenario.bs_position).norm() -
                   (mid - f.scenario.user_positions[0]).norm()) < 1e-9);
  REQUIRE(mid.z() >= f.map.h_min);
  const double g =
      db_to_linear(los_gain_db(f.channel, mid, f.scenario.bs_position)) / f.scenario.noise_power;
  CHECK(evaluate_objective(f.map, f.scenario, f.channel, mid) ==
        doctest::Approx(std::log2(1.0 + f.scenario.p_total * g)).epsilon(1e-9));
}
