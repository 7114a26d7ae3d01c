#include "uavsearch/allocation.hpp"

#include "test_support.hpp"

#include <doctest.h>

using namespace uavsearch;

namespace {

Scenario plain_scenario(int k, ProblemKind kind, UserObjective obj = UserObjective::Capacity) {
  Scenario sc;
  sc.bs_position = Vec3(0, 0, 20);
  sc.user_positions.assign(static_cast<std::size_t>(k), Vec3(100, 0, 0));
  sc.p0 = 2.0;
  sc.p_total = 4.0;
  sc.problem_kind = kind;
  sc.user_objective = obj;
  return sc;
}

GainVector make_gains(double g0, std::initializer_list<double> gu) {
  GainVector g;
  g.g0 = g0;
  g.gu.resize(static_cast<Eigen::Index>(gu.size()));
  Eigen::Index i = 0;
  for (double v : gu) g.gu(i++) = v;
  return g;
}

/// Brute-force max-min objective over the K=2 simplex (the oracle).
double grid_maxmin(double g1, double g2, double pt, int n = 10000) {
  double best = -1.0;
  for (int i = 0; i <= n; ++i) {
    const double p1 = pt * i / n;
    const double v = std::min(std::log2(1.0 + p1 * g1), std::log2(1.0 + (pt - p1) * g2));
    best = std::max(best, v);
  }
  return best;
}

/// Brute-force sum-rate objective over the K=2 simplex.
double grid_sumrate(double g1, double g2, double pt, int n = 10000) {
  double best = -1.0;
  for (int i = 0; i <= n; ++i) {
    const double p1 = pt * i / n;
    best = std::max(best, std::log2(1.0 + p1 * g1) + std::log2(1.0 + (pt - p1) * g2));
  }
  return best;
}

}  // namespace

TEST_CASE("balancing power: symmetry and the hand-evaluated K=2 case") {
  Eigen::VectorXd equal(3);
  equal << 2.0, 2.0, 2.0;
  const AllocationResult sym = balancing_power(equal, 6.0);
  for (int k = 0; k < 3; ++k) CHECK(sym.p(k) == doctest::Approx(2.0));

  Eigen::VectorXd g(2);
  g << 1.0, 3.0;
  const AllocationResult res = balancing_power(g, 4.0);
  CHECK(res.p(0) == doctest::Approx(3.0));
  CHECK(res.p(1) == doctest::Approx(1.0));
  CHECK(res.level == doctest::Approx(3.0));  // the common received SNR
  CHECK(res.p.sum() == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("balancing power: equal-SNR invariant and budget tightness") {
  Rng rng(7);
  std::uniform_real_distribution<double> unit(0.1, 50.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 1 + trial % 6;
    Eigen::VectorXd g(k);
    for (int i = 0; i < k; ++i) g(i) = unit(rng);
    const double pt = unit(rng);
    const AllocationResult res = balancing_power(g, pt);
    CHECK(std::abs(res.p.sum() - pt) <= 1e-9 * pt);
    const double first = res.p(0) * g(0);
    for (int i = 0; i < k; ++i) {
      CHECK(std::abs(res.p(i) * g(i) - first) / first < 1e-12);
    }
  }
}

TEST_CASE("balancing power: matches the K=2 grid-search oracle") {
  Rng rng(17);
  std::uniform_real_distribution<double> unit(0.05, 20.0);
  for (int trial = 0; trial < 100; ++trial) {
    const double g1 = unit(rng), g2 = unit(rng), pt = unit(rng);
    Eigen::VectorXd g(2);
    g << g1, g2;
    const AllocationResult res = balancing_power(g, pt);
    const double mine = std::min(std::log2(1.0 + res.p(0) * g1), std::log2(1.0 + res.p(1) * g2));
    CHECK(mine == doctest::Approx(grid_maxmin(g1, g2, pt)).epsilon(1e-3));
    CHECK(mine + 1e-3 >= grid_maxmin(g1, g2, pt));
  }
}

TEST_CASE("water-filling: symmetry, starvation, and the grid-search oracle") {
  Eigen::VectorXd equal(4);
  equal.setConstant(2.5);
  const AllocationResult sym = sumrate_power(equal, 2.0);
  for (int k = 0; k < 4; ++k) CHECK(sym.p(k) == doctest::Approx(0.5));

  // Tiny budget with a strong and a weak channel: everything to user 1.
  Eigen::VectorXd skew(2);
  skew << 10.0, 0.1;
  const AllocationResult starve = sumrate_power(skew, 0.05);
  CHECK(starve.p(0) == doctest::Approx(0.05));
  CHECK(starve.p(1) == 0.0);
  CHECK(starve.nonsmooth);

  Rng rng(23);
  std::uniform_real_distribution<double> unit(0.05, 20.0);
  for (int trial = 0; trial < 100; ++trial) {
    const double g1 = unit(rng), g2 = unit(rng), pt = unit(rng);
    Eigen::VectorXd g(2);
    g << g1, g2;
    const AllocationResult res = sumrate_power(g, pt);
    const double mine = std::log2(1.0 + res.p(0) * g1) + std::log2(1.0 + res.p(1) * g2);
    CHECK(mine == doctest::Approx(grid_sumrate(g1, g2, pt)).epsilon(1e-3));
    CHECK(mine + 1e-3 >= grid_sumrate(g1, g2, pt));
    CHECK(res.p.sum() == doctest::Approx(pt).epsilon(1e-12));
  }
}

TEST_CASE("allocate: KKT residual below 1e-8 across kinds") {
  Rng rng(29);
  std::uniform_real_distribution<double> unit(0.1, 30.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 1 + trial % 5;
    GainVector gains;
    gains.g0 = unit(rng);
    gains.gu.resize(k);
    for (int i = 0; i < k; ++i) gains.gu(i) = unit(rng);
    for (auto kind : {ProblemKind::Balancing, ProblemKind::SumRate}) {
      Scenario sc = plain_scenario(k, kind);
      sc.p_total = unit(rng);
      const AllocationResult res = allocate(gains, sc);
      CHECK(kkt_residual(gains, res, sc) < 1e-8);
    }
  }
}

TEST_CASE("balance_F: symmetric setup sits on the surface") {
  Scenario sc = plain_scenario(1, ProblemKind::Balancing);
  sc.p0 = sc.p_total = 2.0;
  const GainVector gains = make_gains(0.7, {0.7});
  CHECK(balance_F(gains, sc) == doctest::Approx(0.0));
  // A dominant BS link pushes F positive.
  CHECK(balance_F(make_gains(500.0, {0.7}), sc) > 0.0);
}

TEST_CASE("balance_F: matches the closed-form user objective for balancing") {
  Scenario sc = plain_scenario(2, ProblemKind::Balancing);
  const GainVector gains = make_gains(1.3, {0.8, 2.1});
  const double fu = std::log2(1.0 + sc.p_total / (1.0 / 0.8 + 1.0 / 2.1));
  CHECK(balance_F(gains, sc) ==
        doctest::Approx(std::log2(1.0 + sc.p0 * 1.3) - fu).epsilon(1e-12));
}

TEST_CASE("grad_F: K=1 closed forms") {
  Scenario sc = plain_scenario(1, ProblemKind::Balancing);
  const GainVector gains = make_gains(1.7, {0.6});
  const FGradient grad = grad_F_wrt_gains(gains, sc);
  CHECK(grad.df_dg0 == doctest::Approx(sc.p0 / (kLn2 * (1.0 + sc.p0 * 1.7))).epsilon(1e-12));
  CHECK(grad.df_dgu(0) ==
        doctest::Approx(-sc.p_total / (kLn2 * (1.0 + sc.p_total * 0.6))).epsilon(1e-12));
}

TEST_CASE("grad_F: central finite differences across kinds and weights") {
  Rng rng(31);
  std::uniform_real_distribution<double> unit(0.2, 10.0);
  int checked = 0;
  for (int trial = 0; trial < 150; ++trial) {
    const int k = 1 + trial % 4;
    Scenario sc = plain_scenario(k, trial % 2 == 0 ? ProblemKind::Balancing : ProblemKind::SumRate,
                                 trial % 4 == 1 ? UserObjective::Snr : UserObjective::Capacity);
    if (sc.problem_kind == ProblemKind::SumRate) sc.user_objective = UserObjective::Capacity;
    sc.p_total = unit(rng);
    GainVector gains;
    gains.g0 = unit(rng);
    gains.gu.resize(k);
    for (int i = 0; i < k; ++i) gains.gu(i) = unit(rng);

    const FGradient grad = grad_F_wrt_gains(gains, sc);
    if (grad.nonsmooth) continue;  // stay away from active-set boundaries
    ++checked;
    const auto fd = [&](double* slot, double h) {
      GainVector g = gains;
      double* target = slot == &gains.g0 ? &g.g0 : g.gu.data() + (slot - gains.gu.data());
      *target += h;
      const double up = balance_F(g, sc);
      *target -= 2 * h;
      const double dn = balance_F(g, sc);
      return (up - dn) / (2 * h);
    };
    const double h0 = 1e-6 * gains.g0;
    CHECK(std::abs(grad.df_dg0 - fd(&gains.g0, h0)) <=
          1e-4 * std::max(1e-6, std::abs(grad.df_dg0)));
    for (int i = 0; i < k; ++i) {
      const double hi = 1e-6 * gains.gu(i);
      GainVector g = gains;
      g.gu(i) += hi;
      const double up = balance_F(g, sc);
      g.gu(i) -= 2 * hi;
      const double dn = balance_F(g, sc);
      const double fd_i = (up - dn) / (2 * hi);
      CHECK(std::abs(grad.df_dgu(i) - fd_i) <= 1e-4 * std::max(1e-6, std::abs(fd_i)));
    }
  }
  CHECK(checked > 100);
}

TEST_CASE("grad_F: scaling all user gains moves consistently with differences") {
  Scenario sc = plain_scenario(3, ProblemKind::Balancing);
  GainVector gains = make_gains(1.0, {0.5, 1.5, 3.0});
  const FGradient grad = grad_F_wrt_gains(gains, sc);
  const double h = 1e-6;
  GainVector up = gains, dn = gains;
  up.gu *= (1.0 + h);
  dn.gu *= (1.0 - h);
  const double fd = (balance_F(up, sc) - balance_F(dn, sc)) / (2.0 * h);
  const double directional = grad.df_dgu.dot(gains.gu);
  CHECK(std::abs(directional - fd) <= 1e-4 * std::abs(fd));
}

TEST_CASE("existence: symmetric geometry straddles the surface") {
  Scenario sc = plain_scenario(1, ProblemKind::Balancing);
  sc.p0 = sc.p_total = 1.0;
  // BS-link much better above the BS; user-link much better above the user.
  const GainVector at_bs = make_gains(10.0, {0.1});
  const GainVector at_user = make_gains(0.1, {10.0});
  CHECK(existence_check(sc, at_bs, at_user));
  // A hugely dominant BS keeps F positive at both probes.
  sc.p0 = 1e6;
  CHECK_FALSE(existence_check(sc, at_bs, at_user));
}

TEST_CASE("sphere: pinned K=1 case and surface residuals") {
  Scenario sc;
  sc.bs_position = Vec3(0, 0, 0);
  sc.user_positions = {Vec3(100, 0, 0)};
  sc.p_total = 1.0;
  sc.p0 = 2.0;
  sc.problem_kind = ProblemKind::Balancing;
  const EquipotentialShape shape = sphere_parameters(sc);
  REQUIRE(shape.kind == EquipotentialShape::Kind::Sphere);
  CHECK(shape.center.x() == doctest::Approx(200.0));
  CHECK(shape.center.y() == doctest::Approx(0.0));
  CHECK(shape.radius == doctest::Approx(std::sqrt(20000.0)));
}

TEST_CASE("sphere: degenerate plane when K P0 equals P_T") {
  Scenario sc;
  sc.bs_position = Vec3(0, 0, 0);
  sc.user_positions = {Vec3(100, 0, 0)};
  sc.p0 = sc.p_total = 3.0;
  sc.problem_kind = ProblemKind::Balancing;
  const EquipotentialShape shape = sphere_parameters(sc);
  REQUIRE(shape.kind == EquipotentialShape::Kind::Plane);
  CHECK(shape.plane_point.x() == doctest::Approx(50.0));
  CHECK(std::abs(shape.plane_normal.dot(Vec3(0, 1, 0))) < 1e-12);
  CHECK(std::abs(shape.plane_normal.dot(Vec3(0, 0, 1))) < 1e-12);
}

TEST_CASE("sphere: random scenarios put |F| < 1e-6 on sampled surface points") {
  ChannelParams chan;
  Rng rng(47);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  int scenarios_checked = 0;
  for (int trial = 0; trial < 200 && scenarios_checked < 50; ++trial) {
    Scenario sc;
    sc.problem_kind = ProblemKind::Balancing;
    sc.bs_position = Vec3(unit(rng) * 300, unit(rng) * 300, 10.0 + std::abs(unit(rng)) * 40.0);
    const int k = 1 + trial % 4;
    for (int i = 0; i < k; ++i) {
      sc.user_positions.emplace_back(unit(rng) * 300, unit(rng) * 300, 0.0);
    }
    sc.p_total = 0.5 + std::abs(unit(rng)) * 2.0;
    sc.p0 = sc.p_total * (1.5 + std::abs(unit(rng)) * 2.0);
    // Free-space gains need the same noise normalization everywhere.
    sc.noise_power = 1e-9;
    EquipotentialShape shape;
    try {
      shape = sphere_parameters(sc);
    } catch (const ScenarioInfeasibleError&) {
      continue;
    }
    if (shape.kind != EquipotentialShape::Kind::Sphere) continue;
    ++scenarios_checked;
    for (int s = 0; s < 12; ++s) {
      Vec3 dir(unit(rng), unit(rng), unit(rng));
      if (dir.norm() < 1e-6) dir = Vec3::UnitX();
      const Vec3 x = shape.center + shape.radius * dir.normalized();
      bool valid = true;
      for (int node = 0; node <= k; ++node) {
        if ((x - sc.node_position(node)).norm() < 1.0) valid = false;
      }
      if (!valid) continue;
      const double f = balance_F(test::true_gains(chan, sc, x), sc);
      CHECK(std::abs(f) < 1e-6);
    }
  }
  CHECK(scenarios_checked >= 50);
}

TEST_CASE("kkt blocks: finite-difference Jacobian oracle") {
  Rng rng(53);
  std::uniform_real_distribution<double> unit(0.3, 8.0);
  for (int trial = 0; trial < 60; ++trial) {
    const int k = 1 + trial % 4;
    Scenario sc = plain_scenario(k, trial % 2 == 0 ? ProblemKind::Balancing : ProblemKind::SumRate);
    sc.p_total = unit(rng);
    GainVector gains;
    gains.g0 = unit(rng);
    gains.gu.resize(k);
    for (int i = 0; i < k; ++i) gains.gu(i) = unit(rng);
    const AllocationResult alloc = allocate(gains, sc);
    if (alloc.nonsmooth) continue;
    const KktBlocks blocks = kkt_system_blocks(gains, alloc, sc);

    Eigen::VectorXd z(blocks.n_vars);
    z.head(k) = alloc.p;
    if (blocks.n_vars > k) z(k) = alloc.level;
    Eigen::VectorXd lam = alloc.multipliers;

    const double h = 1e-6;
    for (int j = 0; j < blocks.n_vars; ++j) {
      Eigen::VectorXd zp = z, zm = z;
      zp(j) += h;
      zm(j) -= h;
      const Eigen::VectorXd fd =
          (kkt_map(gains, zp, lam, sc) - kkt_map(gains, zm, lam, sc)) / (2 * h);
      CHECK((blocks.dj_dz.col(j) - fd).cwiseAbs().maxCoeff() <
            1e-4 * std::max(1.0, fd.cwiseAbs().maxCoeff()));
    }
    for (int j = 0; j < blocks.n_cons; ++j) {
      Eigen::VectorXd lp = lam, lm = lam;
      lp(j) += h;
      lm(j) -= h;
      const Eigen::VectorXd fd =
          (kkt_map(gains, z, lp, sc) - kkt_map(gains, z, lm, sc)) / (2 * h);
      CHECK((blocks.dj_dlam.col(j) - fd).cwiseAbs().maxCoeff() <
            1e-4 * std::max(1.0, fd.cwiseAbs().maxCoeff()));
    }
    for (int j = 0; j < k; ++j) {
      GainVector gp = gains, gm = gains;
      gp.gu(j) += h;
      gm.gu(j) -= h;
      const Eigen::VectorXd fd =
          (kkt_map(gp, z, lam, sc) - kkt_map(gm, z, lam, sc)) / (2 * h);
      CHECK((blocks.dj_dgu.col(j) - fd).cwiseAbs().maxCoeff() <
            1e-4 * std::max(1.0, fd.cwiseAbs().maxCoeff()));
    }
  }
}

TEST_CASE("kkt blocks: K=1 sum-rate scalars are hand-checkable") {
  Scenario sc = plain_scenario(1, ProblemKind::SumRate);
  sc.p_total = 2.0;
  const GainVector gains = make_gains(1.0, {3.0});
  const AllocationResult alloc = allocate(gains, sc);
  REQUIRE(alloc.p(0) == doctest::Approx(2.0));
  const KktBlocks blocks = kkt_system_blocks(gains, alloc, sc);
  const double w = 1.0 + 2.0 * 3.0;
  CHECK(blocks.dj_dz(0, 0) == doctest::Approx(-9.0 / (kLn2 * w * w)));
  CHECK(blocks.dj_dlam(0, 0) == doctest::Approx(-1.0));
  CHECK(blocks.dj_dgu(0, 0) == doctest::Approx(1.0 / (kLn2 * w * w)));
}
