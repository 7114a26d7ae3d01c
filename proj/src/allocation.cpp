#include "uavsearch/allocation.hpp"

#include <algorithm>
#include <cmath>

namespace uavsearch {

namespace {

constexpr double kZeroPowerTol = 1e-6;

struct FkDerivs {
  double f = 0.0;    // objective value
  double fp = 0.0;   // d f / d p
  double fpp = 0.0;  // d^2 f / d p^2
  double fg = 0.0;   // d f / d g
  double fpg = 0.0;  // d^2 f / (dp dg)
};

FkDerivs fk_derivs(double p, double g, UserObjective kind, double mu) {
  FkDerivs d;
  if (kind == UserObjective::Capacity) {
    const double w = 1.0 + p * g;
    d.f = mu * std::log2(w);
    d.fp = mu * g / (kLn2 * w);
    d.fpp = -mu * g * g / (kLn2 * w * w);
    d.fg = mu * p / (kLn2 * w);
    d.fpg = mu / (kLn2 * w * w);
  } else {
    d.f = mu * p * g;
    d.fp = mu * g;
    d.fpp = 0.0;
    d.fg = mu * p;
    d.fpg = mu;
  }
  return d;
}

Eigen::VectorXd scenario_weights(const Scenario& scenario) {
  const int k = scenario.num_users();
  Eigen::VectorXd w(k);
  for (int i = 0; i < k; ++i) w(i) = scenario.weight(i + 1);
  return w;
}

void finalize_flags(AllocationResult& res) {
  res.nonsmooth = false;
  for (int k = 0; k < res.p.size(); ++k) {
    if (res.p(k) < kZeroPowerTol) res.nonsmooth = true;
  }
}

// Weighted max-min capacity via bisection on the common level c; reduces to
// the closed form for unit weights but stays exact for arbitrary mu.
AllocationResult balancing_capacity_weighted(const Eigen::VectorXd& gu, double p_total,
                                             const Eigen::VectorXd& mu) {
  const int k = static_cast<int>(gu.size());
  const auto spend = [&](double c) {
    double s = 0.0;
    for (int i = 0; i < k; ++i) s += (std::exp2(c / mu(i)) - 1.0) / gu(i);
    return s;
  };
  double hi = mu(0) * std::log2(1.0 + p_total * gu(0));
  for (int i = 1; i < k; ++i) hi = std::min(hi, mu(i) * std::log2(1.0 + p_total * gu(i)));
  double lo = 0.0;
  for (int iter = 0; iter < 200 && hi - lo > 1e-15 * std::max(1.0, hi); ++iter) {
    const double mid = 0.5 * (lo + hi);
    (spend(mid) > p_total ? hi : lo) = mid;
  }
  const double c = 0.5 * (lo + hi);
  AllocationResult res;
  res.p.resize(k);
  for (int i = 0; i < k; ++i) res.p(i) = (std::exp2(c / mu(i)) - 1.0) / gu(i);
  res.p *= p_total / res.p.sum();
  res.level = c;
  res.fu_value = c;
  return res;
}

}  // namespace

AllocationResult balancing_power(const Eigen::VectorXd& gu, double p_total) {
  const int k = static_cast<int>(gu.size());
  if (k < 1) throw std::invalid_argument("balancing_power: empty gain vector");
  if (!(p_total > 0.0)) throw std::domain_error("balancing_power: budget must be > 0");
  double inv_sum = 0.0;
  for (int i = 0; i < k; ++i) {
    if (!(gu(i) > 0.0)) throw std::domain_error("balancing_power: gains must be > 0");
    inv_sum += 1.0 / gu(i);
  }
  AllocationResult res;
  res.p.resize(k);
  for (int i = 0; i < k; ++i) res.p(i) = p_total / (gu(i) * inv_sum);
  res.p *= p_total / res.p.sum();  // spend the budget exactly
  res.level = p_total / inv_sum;   // the shared product p_k g_k
  res.fu_value = res.level;
  res.active_set.resize(static_cast<std::size_t>(k) + 1);
  for (int i = 0; i <= k; ++i) res.active_set[static_cast<std::size_t>(i)] = i;
  finalize_flags(res);
  return res;
}

AllocationResult sumrate_power(const Eigen::VectorXd& gu, double p_total,
                               const Eigen::VectorXd& weights) {
  const int k = static_cast<int>(gu.size());
  if (k < 1) throw std::invalid_argument("sumrate_power: empty gain vector");
  Eigen::VectorXd mu = weights.size() == 0 ? Eigen::VectorXd::Ones(k) : weights;
  if (mu.size() != k) throw std::invalid_argument("sumrate_power: weights size mismatch");

  double inv_sum = 0.0;
  for (int i = 0; i < k; ++i) {
    if (!(gu(i) > 0.0)) throw std::domain_error("sumrate_power: gains must be > 0");
    inv_sum += 1.0 / gu(i);
  }
  const auto spend = [&](double w) {
    double s = 0.0;
    for (int i = 0; i < k; ++i) s += std::max(0.0, mu(i) * w - 1.0 / gu(i));
    return s;
  };
  double lo = 0.0;
  double hi = (p_total + inv_sum) / mu.sum() + 1.0;
  int iter = 0;
  for (; iter < 200 && hi - lo > 1e-15 * hi; ++iter) {
    const double mid = 0.5 * (lo + hi);
    (spend(mid) > p_total ? hi : lo) = mid;
  }
  double w = 0.5 * (lo + hi);
  if (std::abs(spend(w) - p_total) > 1e-6 * p_total) {
    throw NumericalError("sumrate_power: water-level bisection failed to converge");
  }
  // Exact polish on the active set located by the bisection.
  double active_inv = 0.0, active_mu = 0.0;
  std::vector<int> active;
  for (int i = 0; i < k; ++i) {
    if (mu(i) * w - 1.0 / gu(i) > 0.0) {
      active_inv += 1.0 / gu(i);
      active_mu += mu(i);
      active.push_back(i);
    }
  }
  if (!active.empty()) {
    const double w_exact = (p_total + active_inv) / active_mu;
    bool consistent = true;
    for (int i = 0; i < k; ++i) {
      const bool in = std::find(active.begin(), active.end(), i) != active.end();
      if (in != (mu(i) * w_exact - 1.0 / gu(i) > 0.0)) consistent = false;
    }
    if (consistent) w = w_exact;
  }

  AllocationResult res;
  res.p.resize(k);
  double fu = 0.0;
  for (int i = 0; i < k; ++i) {
    res.p(i) = std::max(0.0, mu(i) * w - 1.0 / gu(i));
    fu += mu(i) * std::log2(1.0 + res.p(i) * gu(i));
  }
  res.fu_value = fu;
  res.multipliers.resize(1);
  res.multipliers(0) = 1.0 / (w * kLn2);  // nu: value with which every active user's f' agrees
  res.active_set = {0};
  finalize_flags(res);
  return res;
}

AllocationResult allocate(const GainVector& gains, const Scenario& scenario) {
  gains.validate();
  const int k = static_cast<int>(gains.gu.size());
  const Eigen::VectorXd mu = scenario_weights(scenario);
  AllocationResult res;

  if (scenario.problem_kind == ProblemKind::Balancing) {
    if (scenario.user_objective == UserObjective::Snr) {
      // Weighted SNR balancing is the unweighted problem on folded gains.
      res = balancing_power(gains.gu.cwiseProduct(mu), scenario.p_total);
      res.level = res.fu_value;
    } else if ((mu.array() == 1.0).all()) {
      res = balancing_power(gains.gu, scenario.p_total);
      res.level = std::log2(1.0 + res.fu_value);
      res.fu_value = res.level;
    } else {
      res = balancing_capacity_weighted(gains.gu, scenario.p_total, mu);
    }
    // Epigraph multipliers: lambda_k = lambda_B / f'_k with sum lambda_k = 1.
    res.multipliers.resize(k + 1);
    double inv_fp = 0.0;
    for (int i = 0; i < k; ++i) {
      inv_fp += 1.0 / fk_derivs(res.p(i), gains.gu(i), scenario.user_objective, mu(i)).fp;
    }
    const double lam_budget = 1.0 / inv_fp;
    for (int i = 0; i < k; ++i) {
      res.multipliers(i) =
          lam_budget / fk_derivs(res.p(i), gains.gu(i), scenario.user_objective, mu(i)).fp;
    }
    res.multipliers(k) = lam_budget;
    res.active_set.clear();
    for (int i = 0; i <= k; ++i) res.active_set.push_back(i);
  } else {
    if (scenario.user_objective != UserObjective::Capacity) {
      throw ConfigError("allocate: sum-rate supports capacity objectives only");
    }
    res = sumrate_power(gains.gu, scenario.p_total, mu);
  }
  finalize_flags(res);
  return res;
}

double balance_F(const GainVector& gains, const Scenario& scenario) {
  const AllocationResult res = allocate(gains, scenario);
  return objective_f0(gains.g0, scenario.p0) - res.fu_value;
}

FGradient grad_F_wrt_gains(const GainVector& gains, const Scenario& scenario) {
  gains.validate();
  const int k = static_cast<int>(gains.gu.size());
  const Eigen::VectorXd mu = scenario_weights(scenario);
  const AllocationResult res = allocate(gains, scenario);

  FGradient grad;
  grad.df_dg0 = scenario.p0 / (kLn2 * (1.0 + scenario.p0 * gains.g0));
  grad.df_dgu.resize(k);
  for (int i = 0; i < k; ++i) {
    const FkDerivs d = fk_derivs(res.p(i), gains.gu(i), scenario.user_objective, mu(i));
    // Envelope at the KKT point: dF_u/dg_k = lambda_k * df_k/dg_k for the
    // balancing epigraph, plain df_k/dg_k for sum-rate.
    const double env = scenario.problem_kind == ProblemKind::Balancing
                           ? res.multipliers(i) * d.fg
                           : d.fg;
    grad.df_dgu(i) = -env;
  }
  grad.nonsmooth = res.nonsmooth;
  return grad;
}

bool existence_check(const Scenario& scenario, const GainVector& gains_at_x0m,
                     const GainVector& gains_at_xum) {
  if (scenario.problem_kind == ProblemKind::Balancing &&
      scenario.user_objective == UserObjective::Capacity) {
    const auto ratio = [&](const GainVector& g) {
      double inv_sum = 0.0;
      for (int i = 0; i < g.gu.size(); ++i) inv_sum += 1.0 / g.gu(i);
      return scenario.p0 / scenario.p_total - 1.0 / (g.g0 * inv_sum);
    };
    return ratio(gains_at_x0m) * ratio(gains_at_xum) <= 0.0;
  }
  return balance_F(gains_at_x0m, scenario) * balance_F(gains_at_xum, scenario) <= 0.0;
}

EquipotentialShape sphere_parameters(const Scenario& scenario) {
  if (scenario.problem_kind != ProblemKind::Balancing ||
      scenario.user_objective != UserObjective::Capacity) {
    throw ConfigError("sphere_parameters: defined for the balancing/capacity problem");
  }
  for (int i = 1; i <= scenario.num_users(); ++i) {
    if (scenario.weight(i) != 1.0) {
      throw ConfigError("sphere_parameters: defined for unit user weights");
    }
  }
  const double kd = static_cast<double>(scenario.num_users());
  const double p0 = scenario.p0;
  const double pt = scenario.p_total;
  Vec3 user_sum = Vec3::Zero();
  double user_sq = 0.0;
  for (const Vec3& u : scenario.user_positions) {
    user_sum += u;
    user_sq += u.squaredNorm();
  }
  const double denom = kd * p0 - pt;
  EquipotentialShape shape;
  if (std::abs(denom) <= 1e-12 * (kd * p0 + pt)) {
    shape.kind = EquipotentialShape::Kind::Plane;
    const Vec3 n = pt * scenario.bs_position - p0 * user_sum;
    const double c = pt * scenario.bs_position.squaredNorm() - p0 * user_sq;
    if (n.norm() <= 0.0) throw ScenarioInfeasibleError("sphere_parameters: degenerate geometry");
    shape.plane_normal = n.normalized();
    shape.plane_point = n * (c / 2.0) / n.squaredNorm();
    return shape;
  }
  shape.kind = EquipotentialShape::Kind::Sphere;
  shape.center = (p0 * user_sum - pt * scenario.bs_position) / denom;
  const double r2 =
      (pt * scenario.bs_position.squaredNorm() - p0 * user_sq) / denom + shape.center.squaredNorm();
  if (r2 <= 0.0) {
    throw ScenarioInfeasibleError("sphere_parameters: negative squared radius, no surface");
  }
  shape.radius = std::sqrt(r2);
  return shape;
}

Eigen::VectorXd kkt_map(const GainVector& gains, const Eigen::VectorXd& z,
                        const Eigen::VectorXd& lambda, const Scenario& scenario) {
  const int k = static_cast<int>(gains.gu.size());
  const Eigen::VectorXd mu = scenario_weights(scenario);
  if (scenario.problem_kind == ProblemKind::SumRate) {
    Eigen::VectorXd j(k + 1);
    double budget = -scenario.p_total;
    for (int i = 0; i < k; ++i) {
      j(i) = fk_derivs(z(i), gains.gu(i), scenario.user_objective, mu(i)).fp - lambda(0);
      budget += z(i);
    }
    j(k) = lambda(0) * budget;
    return j;
  }
  // Balancing epigraph: z = (p, c), lambda = (lambda_1..K, lambda_budget).
  Eigen::VectorXd j(2 * k + 2);
  const double c = z(k);
  double lam_sum = 0.0, budget = -scenario.p_total;
  for (int i = 0; i < k; ++i) {
    const FkDerivs d = fk_derivs(z(i), gains.gu(i), scenario.user_objective, mu(i));
    j(i) = lambda(i) * d.fp - lambda(k);
    j(k + 1 + i) = lambda(i) * (c - d.f);
    lam_sum += lambda(i);
    budget += z(i);
  }
  j(k) = 1.0 - lam_sum;
  j(2 * k + 1) = lambda(k) * budget;
  return j;
}

KktBlocks kkt_system_blocks(const GainVector& gains, const AllocationResult& alloc,
                            const Scenario& scenario) {
  const int k = static_cast<int>(gains.gu.size());
  const Eigen::VectorXd mu = scenario_weights(scenario);
  KktBlocks blocks;

  if (scenario.problem_kind == ProblemKind::SumRate) {
    // Starved users (p = 0) have a settled active set: the interior KKT
    // system on the active users is exact on that smooth piece, so the
    // blocks are built on the active subset. active_users maps block rows
    // back to user indices.
    for (int i = 0; i < k; ++i) {
      if (alloc.p(i) > 0.0) blocks.active_users.push_back(i);
    }
    const int ka = static_cast<int>(blocks.active_users.size());
    if (ka == 0) throw SingularSystemError("kkt_system_blocks: no active users");
    blocks.n_vars = ka;
    blocks.n_cons = 1;
    const int rows = ka + 1;
    blocks.dj_dz = Eigen::MatrixXd::Zero(rows, ka);
    blocks.dj_dlam = Eigen::MatrixXd::Zero(rows, 1);
    blocks.dj_dgu = Eigen::MatrixXd::Zero(rows, ka);
    const double lam = alloc.multipliers(0);
    double budget = -scenario.p_total;
    for (int a = 0; a < ka; ++a) {
      const int i = blocks.active_users[static_cast<std::size_t>(a)];
      const FkDerivs d = fk_derivs(alloc.p(i), gains.gu(i), scenario.user_objective, mu(i));
      blocks.dj_dz(a, a) = d.fpp;
      blocks.dj_dz(ka, a) = lam;
      blocks.dj_dlam(a, 0) = -1.0;
      blocks.dj_dgu(a, a) = d.fpg;
      budget += alloc.p(i);
    }
    blocks.dj_dlam(ka, 0) = budget;
  } else {
    for (int i = 0; i < k; ++i) blocks.active_users.push_back(i);
    blocks.n_vars = k + 1;
    blocks.n_cons = k + 1;
    const int rows = 2 * k + 2;
    blocks.dj_dz = Eigen::MatrixXd::Zero(rows, k + 1);
    blocks.dj_dlam = Eigen::MatrixXd::Zero(rows, k + 1);
    blocks.dj_dgu = Eigen::MatrixXd::Zero(rows, k);
    const double lam_budget = alloc.multipliers(k);
    double budget = -scenario.p_total;
    for (int i = 0; i < k; ++i) {
      const FkDerivs d = fk_derivs(alloc.p(i), gains.gu(i), scenario.user_objective, mu(i));
      const double lam_i = alloc.multipliers(i);
      // Stationarity rows d/dp_i L = lambda_i f'_i - lambda_B.
      blocks.dj_dz(i, i) = lam_i * d.fpp;
      blocks.dj_dlam(i, i) = d.fp;
      blocks.dj_dlam(i, k) = -1.0;
      blocks.dj_dgu(i, i) = lam_i * d.fpg;
      // d/dc L row: 1 - sum lambda.
      blocks.dj_dlam(k, i) = -1.0;
      // Complementary slackness rows lambda_i (c - f_i).
      blocks.dj_dz(k + 1 + i, i) = -lam_i * d.fp;
      blocks.dj_dz(k + 1 + i, k) = lam_i;
      blocks.dj_dlam(k + 1 + i, i) = alloc.level - d.f;
      blocks.dj_dgu(k + 1 + i, i) = -lam_i * d.fg;
      // Budget row lambda_B (sum p - P_T).
      blocks.dj_dz(2 * k + 1, i) = lam_budget;
      budget += alloc.p(i);
    }
    blocks.dj_dlam(2 * k + 1, k) = budget;
  }

  Eigen::MatrixXd a1(blocks.dj_dz.rows(), blocks.n_vars + blocks.n_cons);
  a1 << blocks.dj_dz, blocks.dj_dlam;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(a1);
  if (!lu.isInvertible()) {
    throw SingularSystemError("kkt_system_blocks: singular KKT Jacobian (degenerate second order)");
  }
  return blocks;
}

UserObjectiveDerivs user_objective_derivs(double p, double g, UserObjective kind, double mu) {
  const FkDerivs d = fk_derivs(p, g, kind, mu);
  return {d.f, d.fp, d.fg};
}

double kkt_residual(const GainVector& gains, const AllocationResult& alloc,
                    const Scenario& scenario) {
  const int k = static_cast<int>(gains.gu.size());
  const Eigen::VectorXd mu = scenario_weights(scenario);
  double res = 0.0;
  if (scenario.problem_kind == ProblemKind::SumRate) {
    const double nu = alloc.multipliers(0);
    double budget = -scenario.p_total;
    for (int i = 0; i < k; ++i) {
      const double fp = fk_derivs(alloc.p(i), gains.gu(i), scenario.user_objective, mu(i)).fp;
      res = std::max(res, alloc.p(i) > kZeroPowerTol ? std::abs(fp - nu) : std::max(0.0, fp - nu));
      budget += alloc.p(i);
    }
    res = std::max(res, std::abs(nu * budget));
    res = std::max(res, std::abs(budget));
  } else {
    Eigen::VectorXd z(k + 1);
    z.head(k) = alloc.p;
    z(k) = alloc.level;
    res = kkt_map(gains, z, alloc.multipliers, scenario).cwiseAbs().maxCoeff();
    double budget = alloc.p.sum() - scenario.p_total;
    res = std::max(res, std::abs(budget));
  }
  return res;
}

}  // namespace uavsearch
