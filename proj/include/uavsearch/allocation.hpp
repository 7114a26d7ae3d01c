#pragma once

#include "uavsearch/channel.hpp"
#include "uavsearch/citymap.hpp"
#include "uavsearch/core.hpp"

#include <vector>

namespace uavsearch {

/// Linear channel gains at one position, normalized by noise power (so SNR of
/// link k at power p is simply p * g). Node 0 is the BS.
struct GainVector {
  double g0 = 1.0;
  Eigen::VectorXd gu;

  void validate() const {
    if (!(g0 > 0.0)) throw std::domain_error("GainVector: g0 must be > 0");
    for (int k = 0; k < gu.size(); ++k) {
      if (!(gu(k) > 0.0)) throw std::domain_error("GainVector: user gains must be > 0");
    }
  }
};

/// Solution of the user-side resource allocation. For the balancing problem
/// the multipliers are those of the epigraph form (K objective constraints
/// followed by the power budget); for sum-rate a single budget multiplier.
struct AllocationResult {
  Eigen::VectorXd p;
  Eigen::VectorXd multipliers;
  double fu_value = 0.0;
  double level = 0.0;  // balancing only: common objective value c
  std::vector<int> active_set;
  bool nonsmooth = false;  // some p_k within 1e-6 of zero
};

/// Max-min closed form: p_k = P_T / (g_k * sum_j 1/g_j). All products p_k g_k
/// equal and the budget is spent exactly. fu_value/level carry the common
/// product P_T / sum_j (1/g_j); multipliers are left to allocate().
AllocationResult balancing_power(const Eigen::VectorXd& gu, double p_total);

/// Water-filling for max sum of log2(1 + p_k g_k) under the power budget.
/// The water level is located by bisection (error after 200 iterations raises
/// NumericalError) and polished exactly on the identified active set.
AllocationResult sumrate_power(const Eigen::VectorXd& gu, double p_total,
                               const Eigen::VectorXd& weights = Eigen::VectorXd());

/// Problem-kind-aware allocation: folds weights, runs the matching solver and
/// fills epigraph multipliers. Supports balancing with capacity or SNR user
/// objectives and sum-rate with capacity objectives.
AllocationResult allocate(const GainVector& gains, const Scenario& scenario);

/// Balance between the BS-link objective and the optimized user-side
/// objective; its zero set is the equipotential surface.
double balance_F(const GainVector& gains, const Scenario& scenario);

struct FGradient {
  double df_dg0 = 0.0;
  Eigen::VectorXd df_dgu;
  bool nonsmooth = false;  // active-set boundary: treat the point as a warning
};

/// Analytic gradient of balance_F with respect to the linear gains, holding
/// the optimizer p* fixed (envelope theorem at the KKT point).
FGradient grad_F_wrt_gains(const GainVector& gains, const Scenario& scenario);

/// Existence of the equipotential surface from gains probed above the BS and
/// above the user centroid. Balancing/capacity uses the product-of-ratios
/// condition; other kinds use the sign condition F(x0m) * F(xum) <= 0.
bool existence_check(const Scenario& scenario, const GainVector& gains_at_x0m,
                     const GainVector& gains_at_xum);

struct EquipotentialShape {
  enum class Kind { Sphere, Plane } kind = Kind::Sphere;
  Vec3 center = Vec3::Zero();  // sphere center
  double radius = 0.0;
  Vec3 plane_point = Vec3::Zero();  // degenerate case K*P0 == P_T
  Vec3 plane_normal = Vec3::UnitZ();
};

/// Closed-form equipotential surface for the balancing/capacity problem under
/// free-space gains: a sphere, or the degenerate plane when K*P0 == P_T.
/// Negative squared radius raises ScenarioInfeasibleError.
EquipotentialShape sphere_parameters(const Scenario& scenario);

/// Jacobian blocks of the KKT map J with respect to the primal variables,
/// the multipliers, and the user gains, evaluated at the given allocation.
/// Variable count n_vars is K for sum-rate and K+1 (p, c) for balancing.
struct KktBlocks {
  Eigen::MatrixXd dj_dz;    // (n_vars + n_cons) x n_vars
  Eigen::MatrixXd dj_dlam;  // (n_vars + n_cons) x n_cons
  Eigen::MatrixXd dj_dgu;   // (n_vars + n_cons) x |active users|
  int n_vars = 0;
  int n_cons = 0;
  // Sum-rate blocks are built on the users with positive power (the settled
  // active set); balancing keeps every user. Maps block columns to users.
  std::vector<int> active_users;
};
KktBlocks kkt_system_blocks(const GainVector& gains, const AllocationResult& alloc,
                            const Scenario& scenario);

/// Residual of the stationarity + complementary-slackness conditions at the
/// allocation (0 at an exact KKT point).
double kkt_residual(const GainVector& gains, const AllocationResult& alloc, const Scenario& scenario);

/// Value of the KKT map J itself (used by finite-difference tests).
Eigen::VectorXd kkt_map(const GainVector& gains, const Eigen::VectorXd& z,
                        const Eigen::VectorXd& lambda, const Scenario& scenario);

/// Value and first derivatives of one user objective f_k(p, g).
struct UserObjectiveDerivs {
  double f = 0.0;
  double fp = 0.0;  // d f / d p
  double fg = 0.0;  // d f / d g
};
UserObjectiveDerivs user_objective_derivs(double p, double g, UserObjective kind, double mu);

}  // namespace uavsearch
