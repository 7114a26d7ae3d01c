#pragma once

#include "uavsearch/allocation.hpp"
#include "uavsearch/channel.hpp"
#include "uavsearch/citymap.hpp"
#include "uavsearch/core.hpp"
#include "uavsearch/estimation.hpp"

#include <deque>
#include <limits>
#include <string>
#include <vector>

namespace uavsearch {

enum class Phase { Init, Phase1Los, Phase2Nlos, Transition };

enum class VPolicy { PrevTangent, VerticalDescent };

enum class ModelSource { Estimated, Exact };

struct SearchConfig {
  double mu_v = 1.0;       // tracking-corrector weight
  double dt = 1.0;         // integration and measurement slot [s]
  double omega = M_PI / 25.0;  // spiral angular rate [rad/s]
  double r_spiral = 25.0;  // spiral radius [m]
  double tau = 5.0;        // phase-transition blend duration [s]
  int buffer_m = 100;      // LOS measurements per node used for fitting
  double f_tol = 0.05;     // |F| threshold for "on surface"
  double max_time = 7200.0;
  VPolicy v_policy = VPolicy::PrevTangent;
  ModelSource model_source = ModelSource::Estimated;
  int fit_min = 5;            // minimum LOS samples before a node is fitted
  double max_step = 10.0;     // cap on one integration displacement [m]
  double ascent_speed = 5.0;  // initialization climb rate [m/s]
  double ceiling_margin = 100.0;

  void validate() const {
    if (!(dt > 0.0)) throw ConfigError("search: dt must be > 0");
    if (tau < dt) throw ConfigError("search: tau must be >= dt");
    if (!(f_tol > 0.0)) throw ConfigError("search: f_tol must be > 0");
    if (buffer_m < 5) throw ConfigError("search: M must be >= 5");
    if (r_spiral < 0.0) throw ConfigError("search: spiral radius must be >= 0");
  }
};

struct LogRow {
  double t = 0.0;
  Vec3 x = Vec3::Zero();
  Vec3 x_s = Vec3::Zero();
  Phase phase = Phase::Init;
  double f_est = 0.0;
  double f_true = 0.0;
  double objective_true = 0.0;  // gated objective at x_s; -inf when not full-LOS
  double objective_est = 0.0;
  double best_value_est = 0.0;
  bool full_los = false;
  std::vector<double> alpha_db;  // per-node gain estimates
};

struct TrajectoryLog {
  std::vector<LogRow> rows;
  void append(LogRow row);
  std::string to_csv() const;
};

struct SearchState {
  double t = 0.0;
  Vec3 x = Vec3::Zero();
  Vec3 x_s = Vec3::Zero();
  // Decision point: the centroid of the buffered measurement positions. The
  // optimal-pattern moment conditions hold about the sample centroid, so the
  // fitted gains and gradients are evaluated there rather than at the leading
  // edge of the trailing measurement cloud.
  Vec3 eval_point = Vec3::Zero();
  std::deque<Vec3> recent_path;  // trailing x_s history for the terminal sweep
  Phase phase = Phase::Init;
  Vec3 best_x = Vec3::Zero();
  double best_value_est = -std::numeric_limits<double>::infinity();
  double best_value_true = -std::numeric_limits<double>::infinity();
  bool has_incumbent = false;
  std::vector<MeasurementBuffer> buffers;          // index = node id
  std::vector<LocalChannelModel> models;           // index = node id
  std::vector<bool> model_ready;
  Vec3 s_current = Vec3::Zero();  // last integrated search velocity
  bool prev_full_los = true;
  // Low-passed Phase-1 heading: the descent meridian's azimuth is constant in
  // the ideal dynamics, so filtering it suppresses the window-correlated
  // random walk of the estimated gradient direction.
  double heading = 0.0;
  bool heading_valid = false;
  Vec3 p2_reference = Vec3::Zero();  // slow reference tangent for Phase-2 orientation
  int nlos_streak = 0;               // consecutive slots without full LOS
  Vec3 frame_dir = Vec3::Zero();     // low-passed travel direction for the spiral frame
  // Transition bookkeeping.
  double transition_t1 = 0.0;
  Vec3 transition_s_minus = Vec3::Zero();
  Vec3 transition_s_plus = Vec3::Zero();
  Eigen::Matrix3d prev_frame = Eigen::Matrix3d::Identity();
  bool init_settled = true;     // projection reached the balance tolerance
  double init_altitude = 0.0;   // H_0: altitude when the surface search began
  double floor_altitude = 0.0;  // physical positions never drop below this
  Eigen::Vector2d footprint_lo = Eigen::Vector2d::Zero();
  Eigen::Vector2d footprint_hi = Eigen::Vector2d::Zero();
  double footprint_margin = 0.0;
  double path_length = 0.0;     // superposed trajectory length since init
  int stall_count = 0;
};

/// Gains and their position gradients (linear, noise-normalized) evaluated
/// from the per-node local models at x. grad column n is the gradient of the
/// linear gain of node n.
struct GainField {
  GainVector gains;
  Eigen::Matrix3Xd grad;  // 3 x (K+1)
};

GainField gain_field_from_models(const std::vector<LocalChannelModel>& models, const Vec3& x,
                                 double noise_power);

/// Exact models from the true LOS channel (the genius-aided source).
std::vector<LocalChannelModel> exact_models(const ChannelParams& params, const Scenario& scenario,
                                            const Vec3& x);

/// Minimum-norm step predicted to zero the linearized balance function.
/// Vanishing surface gradient raises SingularSystemError (a stall: the caller
/// switches to a probing move).
Vec3 tracking_direction(const GainField& field, const Scenario& scenario);

/// Gradient of F with respect to position, composed from dF/dg and the gain
/// gradients.
Vec3 grad_F_position(const GainField& field, const Scenario& scenario);

struct SurfaceMotion {
  Vec3 xdot = Vec3::Zero();
  Eigen::VectorXd zdot;    // primal-variable rates (p, and c for balancing)
  Eigen::VectorXd lamdot;  // multiplier rates
  double residual = 0.0;   // relative residual of the full linear system
};

/// Velocity on the equipotential surface solving the coupled system: KKT
/// stationarity rates, dF/dt = 0, q^T xdot = 0, v^T xdot = 1. Assembled by
/// block elimination; singular reduced matrix raises SingularSystemError
/// (the caller perturbs q).
SurfaceMotion surface_dynamics(const GainField& field, const AllocationResult& alloc,
                               const Vec3& q, const Vec3& v, const Scenario& scenario);

/// Phase-1 plane normal: orthogonal to the surface normal and to the vertical,
/// so the motion is the steepest-descent tangent. Horizontal surface normal
/// raises DegenerateGeometryError.
Vec3 q1_direction(const GainField& field, const Scenario& scenario);

/// Phase-2 plane normal along grad f0(g0): constrains the motion to the level
/// curve of the BS-link objective.
Vec3 q2_direction(const GainField& field, const Scenario& scenario);

/// Rotation taking the canonical spiral axis e2 to s/|s|. Orthonormal with
/// det +1; the antiparallel case falls back to a flagged half-turn about e3.
Eigen::Matrix3d rotation_to(const Vec3& s, bool* antiparallel_fallback = nullptr);

/// Circular measurement offset in the canonical frame and its velocity.
struct SpiralOffset {
  Vec3 position;
  Vec3 velocity;
};
SpiralOffset spiral_offset(double t, double r, double omega);

/// One integration slot of Algorithm-style search: measure, refit, pick the
/// phase, advance x_s by the surface dynamics and x by the superposed spiral.
void step(SearchState& state, const SearchConfig& config, const CityMap& map,
          const Scenario& scenario, const ChannelParams& channel, Rng& rng);

/// One integration slot of the transition blend: x_s frozen, the spiral frame
/// turns from s_minus to s_plus; the frame-rate term uses a finite difference
/// of the rotation over dt.
void transition(SearchState& state, const SearchConfig& config, const Vec3& s_minus,
                const Vec3& s_plus);

/// Find a full-LOS starting point above the user centroid, then track the
/// balance function to |F| < f_tol while holding full LOS. Returns a state in
/// Phase 1 on the surface.
SearchState initialize(const CityMap& map, const Scenario& scenario, const ChannelParams& channel,
                       const SearchConfig& config, Rng& rng, TrajectoryLog* log = nullptr);

struct SearchResult {
  Vec3 best_x = Vec3::Zero();
  double best_value = -std::numeric_limits<double>::infinity();  // true gated objective at best_x
  double best_value_est = -std::numeric_limits<double>::infinity();
  double trajectory_length = 0.0;  // superposed length after initialization
  double length_at_convergence = 0.0;  // length flown when the incumbent last improved
  double init_altitude = 0.0;
  double convergence_time = 0.0;  // last time the incumbent improved
  std::string terminated_by;      // "h_min" or "max_time"
  TrajectoryLog log;
};

/// Full search: initialize, then loop step/transition until the trajectory
/// drops below h_min or the time budget runs out.
SearchResult run_search(const CityMap& map, const Scenario& scenario, const ChannelParams& channel,
                        const SearchConfig& config, Rng& rng);

/// Gated objective min{f0, F_u} at x under optimal allocation; -inf when x is
/// not full-LOS. The value every scheme reports.
double evaluate_objective(const CityMap& map, const Scenario& scenario,
                          const ChannelParams& channel, const Vec3& x);

const char* phase_name(Phase phase);

}  // namespace uavsearch
