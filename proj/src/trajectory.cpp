#include "uavsearch/trajectory.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace uavsearch {

namespace {

Eigen::VectorXd gain_derivative_vector(const GainField& field, const Scenario& scenario) {
  const FGradient g = grad_F_wrt_gains(field.gains, scenario);
  Eigen::VectorXd df(field.gains.gu.size() + 1);
  df(0) = g.df_dg0;
  df.tail(field.gains.gu.size()) = g.df_dgu;
  return df;
}

}  // namespace

GainField gain_field_from_models(const std::vector<LocalChannelModel>& models, const Vec3& x,
                                 double noise_power) {
  const int nodes = static_cast<int>(models.size());
  if (nodes < 2) throw std::invalid_argument("gain_field_from_models: needs BS plus >= 1 user");
  GainField field;
  field.gains.gu.resize(nodes - 1);
  field.grad.resize(3, nodes);
  for (int n = 0; n < nodes; ++n) {
    // Clamp against overflow from pathological extrapolation; the bounds are
    // far outside any physical gain.
    const double gain_db =
        std::clamp(models[static_cast<std::size_t>(n)].predict_db(x), -500.0, 50.0);
    const double lin = db_to_linear(gain_db) / noise_power;
    // d/dx 10^(g_db/10) = lin * ln(10)/10 * beta
    const Vec3 grad = lin * (kLn10 / 10.0) * models[static_cast<std::size_t>(n)].beta_db_per_m;
    if (n == 0) {
      field.gains.g0 = lin;
    } else {
      field.gains.gu(n - 1) = lin;
    }
    field.grad.col(n) = grad;
  }
  return field;
}

std::vector<LocalChannelModel> exact_models(const ChannelParams& params, const Scenario& scenario,
                                            const Vec3& x) {
  std::vector<LocalChannelModel> models(static_cast<std::size_t>(scenario.num_users()) + 1);
  for (int n = 0; n <= scenario.num_users(); ++n) {
    const Vec3 u = scenario.node_position(n);
    LocalChannelModel& m = models[static_cast<std::size_t>(n)];
    m.anchor = x;
    m.alpha_db = los_gain_db(params, x, u);
    m.beta_db_per_m = los_gain_gradient_db(params, x, u);
    m.n_used = 0;
  }
  return models;
}

Vec3 grad_F_position(const GainField& field, const Scenario& scenario) {
  return field.grad * gain_derivative_vector(field, scenario);
}

Vec3 tracking_direction(const GainField& field, const Scenario& scenario) {
  const double f = balance_F(field.gains, scenario);
  const Vec3 grad = grad_F_position(field, scenario);
  const double norm2 = grad.squaredNorm();
  if (norm2 < 1e-24) {
    throw SingularSystemError("tracking_direction: vanishing surface gradient");
  }
  return -grad * (f / norm2);
}

SurfaceMotion surface_dynamics(const GainField& field, const AllocationResult& alloc,
                               const Vec3& q, const Vec3& v, const Scenario& scenario) {
  const int k = static_cast<int>(field.gains.gu.size());
  const KktBlocks blocks = kkt_system_blocks(field.gains, alloc, scenario);
  const int n = blocks.n_vars + blocks.n_cons;
  const int ka = static_cast<int>(blocks.active_users.size());

  // Gain gradient rows of the users the KKT blocks cover.
  Eigen::MatrixXd gu_grad(ka, 3);
  for (int a = 0; a < ka; ++a) {
    gu_grad.row(a) = field.grad.col(blocks.active_users[static_cast<std::size_t>(a)] + 1).transpose();
  }

  Eigen::MatrixXd a1(n, n);
  a1 << blocks.dj_dz, blocks.dj_dlam;
  const Eigen::MatrixXd a2 = blocks.dj_dgu * gu_grad;

  Eigen::MatrixXd a3 = Eigen::MatrixXd::Zero(3, n);
  Eigen::Matrix3d a4;
  const double f0p = scenario.p0 / (kLn2 * (1.0 + scenario.p0 * field.gains.g0));
  if (scenario.problem_kind == ProblemKind::Balancing) {
    // F(z, g) = f0(g0) - c: only the c-rate and the g0 term enter dF/dt.
    a3(0, blocks.n_vars - 1) = -1.0;
    a4.row(0) = (f0p * field.grad.col(0)).transpose();
  } else {
    // Starved users contribute nothing to dF/dt: their power rate is zero on
    // the smooth piece and dF/dg vanishes at p = 0.
    Eigen::VectorXd df(k + 1);
    df(0) = f0p;
    for (int i = 0; i < k; ++i) {
      df(i + 1) = -user_objective_derivs(alloc.p(i), field.gains.gu(i), scenario.user_objective,
                                         scenario.weight(i + 1))
                       .fg;
    }
    for (int a = 0; a < ka; ++a) {
      const int i = blocks.active_users[static_cast<std::size_t>(a)];
      a3(0, a) = -user_objective_derivs(alloc.p(i), field.gains.gu(i), scenario.user_objective,
                                        scenario.weight(i + 1))
                      .fp;
    }
    a4.row(0) = (field.grad * df).transpose();
  }
  a4.row(1) = q.transpose();
  a4.row(2) = v.transpose();

  Eigen::FullPivLU<Eigen::MatrixXd> lu1(a1);
  if (!lu1.isInvertible()) {
    throw SingularSystemError("surface_dynamics: singular KKT-rate block");
  }
  const Eigen::MatrixXd a1inv_a2 = lu1.solve(a2);
  const Eigen::Matrix3d reduced = a4 - a3 * a1inv_a2;
  Eigen::FullPivLU<Eigen::Matrix3d> lu2(reduced);
  if (!lu2.isInvertible()) {
    throw SingularSystemError("surface_dynamics: direction-degenerate reduced matrix");
  }

  SurfaceMotion motion;
  motion.xdot = lu2.solve(Vec3::UnitZ());
  const Eigen::VectorXd rates = -a1inv_a2 * motion.xdot;
  motion.zdot = rates.head(blocks.n_vars);
  motion.lamdot = rates.tail(blocks.n_cons);

  // Relative residual of the full linear system.
  Eigen::MatrixXd full(n + 3, n + 3);
  full.topLeftCorner(n, n) = a1;
  full.topRightCorner(n, 3) = a2;
  full.bottomLeftCorner(3, n) = a3;
  full.bottomRightCorner(3, 3) = a4;
  Eigen::VectorXd w(n + 3);
  w << rates, motion.xdot;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + 3);
  rhs(n + 2) = 1.0;
  const double scale = 1.0 + full.cwiseAbs().maxCoeff() * w.cwiseAbs().maxCoeff();
  motion.residual = (full * w - rhs).cwiseAbs().maxCoeff() / scale;
  return motion;
}

Vec3 q1_direction(const GainField& field, const Scenario& scenario) {
  const Vec3 grad = grad_F_position(field, scenario);
  const Vec3 cross = grad.cross(-Vec3::UnitZ());
  if (cross.norm() <= 1e-12 * std::max(grad.norm(), 1e-300)) {
    throw DegenerateGeometryError("q1_direction: surface normal is vertical");
  }
  return cross.normalized();
}

Vec3 q2_direction(const GainField& field, const Scenario& scenario) {
  const double f0p = scenario.p0 / (kLn2 * (1.0 + scenario.p0 * field.gains.g0));
  const Vec3 dir = f0p * field.grad.col(0);
  if (dir.norm() <= 1e-24) {
    throw SingularSystemError("q2_direction: vanishing BS-gain gradient");
  }
  return dir.normalized();
}

Eigen::Matrix3d rotation_to(const Vec3& s, bool* antiparallel_fallback) {
  const double norm = s.norm();
  if (!(norm > 0.0)) throw std::domain_error("rotation_to: zero direction");
  if (antiparallel_fallback) *antiparallel_fallback = false;
  if (norm + s.y() < 1e-9 * norm) {
    // s is antiparallel to e2; the closed form blows up. Half turn about e3.
    if (antiparallel_fallback) *antiparallel_fallback = true;
    Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
    r(0, 0) = -1.0;
    r(1, 1) = -1.0;
    return r;
  }
  const double s1 = s.x(), s2 = s.y(), s3 = s.z();
  const double den = norm * (norm + s2);
  // Rodrigues form of the rotation taking the canonical spiral axis e2 onto
  // s/|s| (axis e2 x s, angle acos(s2/|s|)).
  Eigen::Matrix3d r;
  r << 1.0 - s1 * s1 / den, s1 / norm, -s1 * s3 / den,
      -s1 / norm, s2 / norm, -s3 / norm,
      -s1 * s3 / den, s3 / norm, 1.0 - s3 * s3 / den;
  return r;
}

SpiralOffset spiral_offset(double t, double r, double omega) {
  if (r < 0.0) throw std::domain_error("spiral_offset: negative radius");
  SpiralOffset off;
  off.position = Vec3(r * std::cos(omega * t), 0.0, r * std::sin(omega * t));
  off.velocity = Vec3(-r * omega * std::sin(omega * t), 0.0, r * omega * std::cos(omega * t));
  return off;
}

namespace {

void refresh_models(SearchState& state, const SearchConfig& config, const CityMap& map,
                    const Scenario& scenario, const ChannelParams& channel, Rng& rng) {
  const int nodes = scenario.num_users() + 1;
  state.recent_path.push_back(state.x_s);
  state.recent_path.push_back(state.x);  // the spiral tube is genuinely visited
  while (static_cast<int>(state.recent_path.size()) > 2 * config.buffer_m) {
    state.recent_path.pop_front();
  }
  if (config.model_source == ModelSource::Exact) {
    state.models = exact_models(channel, scenario, state.x_s);
    state.model_ready.assign(static_cast<std::size_t>(nodes), true);
    state.eval_point = state.x_s;
    return;
  }
  // A fit is trusted once its own covariance says the noise amplification is
  // tame: a few-point near-collinear cloud passes the rank check yet predicts
  // garbage, and these gates reject exactly that.
  const double alpha_gate_db = 3.0;
  const double beta_gate_db_per_m = 0.3;
  Vec3 pooled = Vec3::Zero();
  int pooled_n = 0;
  for (int node = 0; node < nodes; ++node) {
    const Measurement m = measure(channel, map, state.x, scenario, node, state.t, rng);
    auto& buffer = state.buffers[static_cast<std::size_t>(node)];
    auto& model = state.models[static_cast<std::size_t>(node)];
    Vec3 centroid = Vec3::Zero();
    if (buffer.push(m) || buffer.size() > 0) {
      for (const Measurement& entry : buffer.entries()) centroid += entry.position;
      centroid /= static_cast<double>(buffer.size());
      pooled += centroid * static_cast<double>(buffer.size());
      pooled_n += buffer.size();
    }
    if (buffer.size() >= config.fit_min) {
      try {
        // Anchoring at the sample centroid realizes the zero-first-moment
        // pattern condition, so alpha/beta are the centered estimates.
        LocalChannelModel fitted = fit_local_model(buffer, centroid);
        if (fitted.alpha_std_unit * channel.sigma_db <= alpha_gate_db &&
            fitted.beta_std_unit * channel.sigma_db <= beta_gate_db_per_m) {
          model = fitted;
          model.age_steps = 0;
          state.model_ready[static_cast<std::size_t>(node)] = true;
          continue;
        }
      } catch (const DegenerateGeometryError&) {
        // Keep the previous model; it extrapolates from its old anchor.
      }
    }
    model.age_steps += 1;
  }
  state.eval_point = pooled_n > 0 ? Vec3(pooled / pooled_n) : state.x_s;
}


/// Standard deviation of the estimated balance value implied by the fitted
/// models' own covariance: per-node prediction noise at the evaluation point
/// mapped through dF/dg.
double balance_noise_std(const SearchState& state, const GainField& field,
                         const Scenario& scenario, double sigma_db, const Vec3& eval_x) {
  const FGradient grad = grad_F_wrt_gains(field.gains, scenario);
  double var = 0.0;
  for (std::size_t n = 0; n < state.models.size(); ++n) {
    const double g_lin = n == 0 ? field.gains.g0 : field.gains.gu(static_cast<int>(n) - 1);
    const double df_dg = n == 0 ? grad.df_dg0 : grad.df_dgu(static_cast<int>(n) - 1);
    const double df_ddb = df_dg * g_lin * (kLn10 / 10.0);
    const double range2 = (eval_x - state.models[n].anchor).squaredNorm();
    const double pred_var_unit = state.models[n].alpha_std_unit * state.models[n].alpha_std_unit +
                                 state.models[n].beta_std_unit * state.models[n].beta_std_unit *
                                     range2 / 3.0;
    var += df_ddb * df_ddb * pred_var_unit * sigma_db * sigma_db;
  }
  return std::sqrt(var);
}

bool models_ready(const SearchState& state) {
  return std::all_of(state.model_ready.begin(), state.model_ready.end(), [](bool b) { return b; });
}

Vec3 choose_v(const SearchState& state, const SearchConfig& config) {
  if (config.v_policy == VPolicy::PrevTangent && state.s_current.norm() > 1e-9) {
    return state.s_current.normalized();
  }
  // Descending branch at start: v^T xdot = 1 with v = -e3 sets unit sink rate.
  return -Vec3::UnitZ();
}

Vec3 cap_step(const Vec3& s, const SearchConfig& config) {
  const double len = s.norm() * config.dt;
  if (len > config.max_step) return s * (config.max_step / len);
  return s;
}

/// Surface search velocity for the given phase; falls back to probing moves
/// on degenerate geometry so a single bad slot never aborts the run.
///
/// The constrained solve fixes only the direction of motion; its magnitude
/// and sign come from the v^T xdot = 1 row, which blows up whenever noisy
/// gradients swing the constraint line away from v. The solution is rescaled
/// to unit cruise speed and oriented by the phase: descending in Phase 1,
/// continuous with the previous tangent in Phase 2. All homogeneous rows
/// (KKT rates, dF/dt, q) are invariant to the rescale.
Vec3 phase_velocity(SearchState& state, const SearchConfig& config, const Scenario& scenario,
                    double sigma_db, bool phase1) {
  // Directions evaluate at the search point itself: the model predictions
  // extrapolate there, and steering computed at the trailing window centroid
  // would curl the path by the parallel-transport angle every slot.
  const GainField field =
      gain_field_from_models(state.models, state.x_s, scenario.noise_power);
  Vec3 s;
  try {
    const Vec3 q = phase1 ? q1_direction(field, scenario) : q2_direction(field, scenario);
    const Vec3 v = choose_v(state, config);
    const AllocationResult alloc = allocate(field.gains, scenario);
    SurfaceMotion motion;
    try {
      motion = surface_dynamics(field, alloc, q, v, scenario);
    } catch (const SingularSystemError&) {
      // Perturb the search plane slightly and retry once.
      const Eigen::AngleAxisd tilt(1e-3, Vec3::UnitZ());
      motion = surface_dynamics(field, alloc, tilt * q, v, scenario);
    }
    // Cruise speed from the measurement-pattern construction: the window
    // then spans the same two spiral turns the optimal alternating pattern
    // uses, keeping the fit's odd-moment bias small. Exact-model runs carry
    // no such constraint.
    const double cruise =
        (config.model_source == ModelSource::Exact || config.r_spiral <= 0.0)
            ? 1.0
            : 2.0 * config.r_spiral /
                  std::sqrt(static_cast<double>(config.buffer_m) * config.buffer_m - 1.0) /
                  config.dt;
    s = cruise * motion.xdot.normalized();
    // A power sitting exactly at the boundary (about to enter or leave the
    // active set) makes the rates unreliable for a slot; shrink through it.
    bool at_boundary = false;
    for (int i = 0; i < alloc.p.size(); ++i) {
      if (alloc.p(i) > 0.0 && alloc.p(i) < 1e-6) at_boundary = true;
    }
    if (phase1) {
      // Walking the surface toward larger backhaul capacity is the phase's
      // purpose; descending is its geometric proxy. Orient by the predicted
      // f0 slope when it is decisive, by descent otherwise.
      const double f0p_here =
          scenario.p0 / (kLn2 * (1.0 + scenario.p0 * field.gains.g0));
      const double df0 = f0p_here * field.grad.col(0).dot(s.normalized());
      if (std::abs(df0) > 1e-4) {
        if (df0 < 0.0) s = -s;
      } else if (s.z() > 0.0) {
        s = -s;
      }
      const double horiz = s.head<2>().norm();
      if (horiz > 1e-6 && state.heading_valid) {
        // Heading filter gain follows the estimated SNR of the horizontal
        // surface gradient: near the top of the surface the node gradients
        // nearly cancel and the commanded azimuth is noise, so the heading
        // coasts; deeper down the signal dominates and the filter tracks.
        const FGradient fg = grad_F_wrt_gains(field.gains, scenario);
        double grad_var = 0.0;
        for (std::size_t n = 0; n < state.models.size(); ++n) {
          const double g_lin =
              n == 0 ? field.gains.g0 : field.gains.gu(static_cast<int>(n) - 1);
          const double df_dg = n == 0 ? fg.df_dg0 : fg.df_dgu(static_cast<int>(n) - 1);
          const double w = df_dg * g_lin * (kLn10 / 10.0) * sigma_db;
          grad_var += w * w * state.models[n].beta_std_unit * state.models[n].beta_std_unit;
        }
        const double gh2 = grad_F_position(field, scenario).head<2>().squaredNorm();
        const double snr = gh2 / (gh2 + (2.0 / 3.0) * grad_var + 1e-30);
        const double gain = snr / 8.0;
        const double cmd = std::atan2(s.y(), s.x());
        state.heading += gain * std::remainder(cmd - state.heading, 2.0 * M_PI);
        s.x() = horiz * std::cos(state.heading);
        s.y() = horiz * std::sin(state.heading);
      }
    } else {
      state.heading_valid = false;
      // Orientation hysteresis: keep circulating the level curve the same way
      // even when the estimated tangent twitches slot to slot.
      if (state.p2_reference.norm() < 1e-9) state.p2_reference = state.s_current;
      if (state.p2_reference.norm() > 1e-9 && state.p2_reference.dot(s) < 0.0) s = -s;
      state.p2_reference = 0.95 * state.p2_reference + 0.05 * s;
    }
    if (at_boundary) s *= 0.5;  // shrink across active-set boundaries
  } catch (const DegenerateGeometryError&) {
    // Horizontal surface normal: hold altitude, probe along the previous tangent.
    Vec3 probe = state.s_current;
    probe.z() = 0.0;
    s = probe.norm() > 1e-9 ? Vec3(probe.normalized()) : Vec3::UnitX();
    state.stall_count += 1;
  } catch (const SingularSystemError&) {
    s = state.s_current;
    state.stall_count += 1;
  }
  try {
    // The corrector only engages outside the estimate's own noise floor on F;
    // inside it, |F|/|gradF| is a persistent noise kick that would random-walk
    // the path off the surface. Its magnitude is capped at cruise speed.
    const double f_est = balance_F(field.gains, scenario);
    const double floor = std::max(
        config.f_tol, 2.0 * balance_noise_std(state, field, scenario, sigma_db, state.x_s));
    if (std::abs(f_est) > floor) {
      Vec3 corrector = config.mu_v * tracking_direction(field, scenario);
      if (corrector.norm() > 1.0) corrector.normalize();
      s += corrector;
    }
  } catch (const SingularSystemError&) {
    state.stall_count += 1;
  }
  return cap_step(s, config);
}

void integrate_slot(SearchState& state, const SearchConfig& config, const Vec3& s) {
  state.x_s += s * config.dt;
  state.t += config.dt;
  // The map boundary acts as a wall; the spiral stays inside by construction.
  if (state.footprint_margin > 0.0) {
    state.x_s.x() = std::clamp(state.x_s.x(), state.footprint_lo.x() + state.footprint_margin,
                               state.footprint_hi.x() - state.footprint_margin);
    state.x_s.y() = std::clamp(state.x_s.y(), state.footprint_lo.y() + state.footprint_margin,
                               state.footprint_hi.y() - state.footprint_margin);
  }
  if (s.norm() > 1e-12) {
    // Low-pass the frame direction: re-aiming the spiral plane on every
    // twitch of the commanded direction would jump the physical position
    // across the circle.
    state.frame_dir = state.frame_dir.norm() < 1e-12
                          ? s.normalized()
                          : Vec3((0.8 * state.frame_dir + 0.2 * s.normalized()).normalized());
    state.prev_frame = rotation_to(state.frame_dir);
  }
  Vec3 x_new =
      state.x_s +
      state.prev_frame * spiral_offset(state.t, config.r_spiral, config.omega).position;
  x_new.z() = std::max(x_new.z(), state.floor_altitude);  // never sweep below the floor
  state.path_length += (x_new - state.x).norm();
  state.x = x_new;
  state.s_current = s;
}

void consider_incumbent(SearchState& state, const CityMap& map, const Scenario& scenario,
                        const ChannelParams& channel, const Vec3& candidate) {
  if (candidate.z() < map.h_min || !map.in_footprint(candidate.x(), candidate.y()) ||
      !is_full_los(map, candidate, scenario)) {
    return;
  }
  const GainField field =
      gain_field_from_models(state.models, candidate, scenario.noise_power);
  // Rank by the estimated problem objective itself: off the surface one side
  // of the min collapses, so imbalance self-penalizes and no separate
  // balance gate is needed; every full-LOS visited point competes.
  const AllocationResult alloc = allocate(field.gains, scenario);
  const double value_est = std::min(objective_f0(field.gains.g0, scenario.p0), alloc.fu_value);
  if (!state.has_incumbent || value_est > state.best_value_est) {
    state.best_x = candidate;
    state.best_value_est = value_est;
    state.best_value_true = evaluate_objective(map, scenario, channel, candidate);
    state.has_incumbent = true;
  }
}

void update_incumbent(SearchState& state, const CityMap& map, const Scenario& scenario,
                      const ChannelParams& channel) {
  consider_incumbent(state, map, scenario, channel, state.eval_point);
  consider_incumbent(state, map, scenario, channel, state.x);
}

}  // namespace

void transition(SearchState& state, const SearchConfig& config, const Vec3& s_minus,
                const Vec3& s_plus) {
  const double a =
      std::clamp((state.t + config.dt - state.transition_t1) / config.tau, 0.0, 1.0);
  const Vec3 s_blend = (1.0 - a) * s_minus + a * s_plus;
  state.t += config.dt;
  if (s_blend.norm() > 1e-12) {
    state.prev_frame = rotation_to(s_blend);
    state.frame_dir = s_blend.normalized();
  }
  // x_s frozen; the frame-rate term of the superposed dynamics appears as the
  // finite difference of the rotation between consecutive slots.
  Vec3 x_new =
      state.x_s +
      state.prev_frame * spiral_offset(state.t, config.r_spiral, config.omega).position;
  x_new.z() = std::max(x_new.z(), state.floor_altitude);
  state.path_length += (x_new - state.x).norm();
  state.x = x_new;
  state.s_current = s_blend;
}

void step(SearchState& state, const SearchConfig& config, const CityMap& map,
          const Scenario& scenario, const ChannelParams& channel, Rng& rng) {
  refresh_models(state, config, map, scenario, channel, rng);
  // The phase follows the search center: the spiral offset swings the
  // physical position across shadow edges every few slots, and keying the
  // phase to it would churn transitions with x_s frozen.
  const bool now_los = is_full_los(map, state.x_s, scenario);

  if (state.phase == Phase::Transition) {
    if (state.t < state.transition_t1 + config.tau) {
      transition(state, config, state.transition_s_minus, state.transition_s_plus);
      state.prev_full_los = now_los;
      return;
    }
    state.phase = now_los ? Phase::Phase1Los : Phase::Phase2Nlos;
  }

  const bool both_los = now_los && state.prev_full_los;
  const bool both_nlos = !now_los && !state.prev_full_los;

  state.nlos_streak = now_los ? 0 : state.nlos_streak + 1;
  if (both_los || both_nlos) {
    state.phase = both_los ? Phase::Phase1Los : Phase::Phase2Nlos;
    if (both_los) update_incumbent(state, map, scenario, channel);
    Vec3 s = phase_velocity(state, config, scenario, channel.sigma_db, both_los);
    // The level-curve arc assumes an LOS pocket is discoverable nearby; when
    // a long excursion proves otherwise, upward invariance guarantees
    // recovery by climbing toward the blocked node.
    if (!now_los && state.nlos_streak > 120) {
      int worst = -1;
      double worst_dist = -1.0;
      for (int n = 0; n <= scenario.num_users(); ++n) {
        if (!los_indicator(map, state.x_s, scenario.node_position(n))) {
          const double d = (scenario.node_position(n) - state.x_s).head<2>().norm();
          if (d > worst_dist) {
            worst_dist = d;
            worst = n;
          }
        }
      }
      if (worst >= 0) {
        const double leg = config.ascent_speed / std::sqrt(2.0);
        if (worst_dist > 2.0 * map.cell_size) {
          const Eigen::Vector2d toward =
              (scenario.node_position(worst) - state.x_s).head<2>().normalized();
          s = Vec3(toward.x() * leg, toward.y() * leg, leg);
        } else {
          s = Vec3(0.0, 0.0, config.ascent_speed);
        }
      }
    }
    integrate_slot(state, config, s);
  } else {
    // LOS status flipped between consecutive slots: blend directions for tau.
    state.transition_t1 = state.t - config.dt;
    state.transition_s_minus = state.s_current;
    try {
      state.transition_s_plus = phase_velocity(state, config, scenario, channel.sigma_db, now_los);
    } catch (...) {
      state.transition_s_plus = state.s_current;
    }
    state.phase = Phase::Transition;
    transition(state, config, state.transition_s_minus, state.transition_s_plus);
  }
  state.prev_full_los = now_los;
}

namespace {

LogRow make_log_row(const SearchState& state, const CityMap& map, const Scenario& scenario,
                    const ChannelParams& channel) {
  LogRow row;
  row.t = state.t;
  row.x = state.x;
  row.x_s = state.x_s;
  row.phase = state.phase;
  row.full_los = is_full_los(map, state.x_s, scenario);
  row.best_value_est = state.best_value_est;

  GainVector true_gains;
  true_gains.gu.resize(scenario.num_users());
  true_gains.g0 =
      db_to_linear(los_gain_db(channel, state.x_s, scenario.bs_position)) / scenario.noise_power;
  for (int k = 1; k <= scenario.num_users(); ++k) {
    true_gains.gu(k - 1) =
        db_to_linear(los_gain_db(channel, state.x_s, scenario.node_position(k))) /
        scenario.noise_power;
  }
  row.f_true = balance_F(true_gains, scenario);
  row.objective_true = evaluate_objective(map, scenario, channel, state.x_s);

  row.alpha_db.resize(state.models.size());
  for (std::size_t i = 0; i < state.models.size(); ++i) {
    row.alpha_db[i] = state.models[i].predict_db(state.eval_point);
  }
  if (models_ready(state)) {
    const GainField field =
        gain_field_from_models(state.models, state.eval_point, scenario.noise_power);
    row.f_est = balance_F(field.gains, scenario);
    const AllocationResult alloc = allocate(field.gains, scenario);
    row.objective_est = std::min(objective_f0(field.gains.g0, scenario.p0), alloc.fu_value);
  } else {
    row.f_est = std::numeric_limits<double>::quiet_NaN();
    row.objective_est = std::numeric_limits<double>::quiet_NaN();
  }
  return row;
}

}  // namespace

SearchState initialize(const CityMap& map, const Scenario& scenario, const ChannelParams& channel,
                       const SearchConfig& config, Rng& rng, TrajectoryLog* log) {
  config.validate();
  scenario.validate(map);
  const int nodes = scenario.num_users() + 1;

  SearchState state;
  state.phase = Phase::Init;
  state.floor_altitude = map.h_min;
  state.footprint_lo = map.origin;
  state.footprint_hi = map.origin + Eigen::Vector2d(map.footprint_width(), map.footprint_depth());
  state.footprint_margin = config.r_spiral + map.cell_size;
  state.x_s = scenario.user_centroid();
  state.x_s.z() = map.h_min;
  state.x = state.x_s;  // horizontal spiral starts at zero offset angle handled below
  state.buffers.reserve(static_cast<std::size_t>(nodes));
  for (int n = 0; n < nodes; ++n) state.buffers.emplace_back(n, config.buffer_m);
  state.models.resize(static_cast<std::size_t>(nodes));
  state.model_ready.assign(static_cast<std::size_t>(nodes),
                           config.model_source == ModelSource::Exact);
  state.prev_frame = rotation_to(Vec3::UnitZ());
  state.x = state.x_s + state.prev_frame *
                            spiral_offset(state.t, config.r_spiral, config.omega).position;

  // Shallow rays over walls need altitude proportional to horizontal reach:
  // climbing to a 45-degree elevation over the farthest node clears anything
  // outside a street canyon narrower than its depth.
  double reach = 0.0;
  for (int n = 0; n <= scenario.num_users(); ++n) {
    reach = std::max(reach, (scenario.node_position(n) - state.x_s).head<2>().norm());
  }
  const double ceiling =
      std::max(map.max_building_height(), map.h_min) + config.ceiling_margin + 2.0 * reach;
  const double init_budget = config.max_time / 4.0;

  // Stage 1: discover a full-LOS position. Climbing straight up over the
  // centroid is not enough for nodes in deep street canyons (the required
  // elevation angle can exceed any fixed ceiling), so the climb aims
  // diagonally at the worst still-blocked node: closing horizontal distance
  // raises the elevation to it, and arriving overhead clears it outright.
  // Once every link is LOS, a slow helix climb continues until every node's
  // fit passes the trust gates.
  bool ready = false;
  while (state.t < init_budget) {
    refresh_models(state, config, map, scenario, channel, rng);
    int worst = -1;
    double worst_dist = -1.0;
    for (int n = 0; n <= scenario.num_users(); ++n) {
      if (!los_indicator(map, state.x_s, scenario.node_position(n))) {
        const double d = (scenario.node_position(n) - state.x_s).head<2>().norm();
        if (d > worst_dist) {
          worst_dist = d;
          worst = n;
        }
      }
    }
    if (worst < 0 && models_ready(state)) {
      ready = true;
      break;
    }
    if (state.x_s.z() > ceiling) {
      throw ScenarioInfeasibleError("initialize: no full-LOS altitude below the ceiling");
    }
    Vec3 s(0.0, 0.0, worst < 0 ? std::min(1.0, config.ascent_speed) : config.ascent_speed);
    if (worst >= 0 && worst_dist > 2.0 * map.cell_size) {
      // 45-degree approach: half the speed climbs, half closes in.
      const Eigen::Vector2d toward =
          (scenario.node_position(worst) - state.x_s).head<2>().normalized();
      const double leg = config.ascent_speed / std::sqrt(2.0);
      s = Vec3(toward.x() * leg, toward.y() * leg, leg);
    }
    integrate_slot(state, config, s);
    if (log) log->append(make_log_row(state, map, scenario, channel));
  }
  if (!ready) throw ScenarioInfeasibleError("initialize: full-LOS discovery exceeded the budget");

  // Stage 2: project onto the surface by hop-and-settle Newton cycles. The
  // decision point is the window centroid, which trails a moving UAV by half
  // a window; chasing it continuously is delayed feedback and oscillates.
  // Instead: hold (bob vertically while the window refills around the
  // anchor), evaluate the settled balance, hop by one tracking step, repeat.
  // Acceptance widens to the fit's own noise floor on F.
  const int hold_slots = std::max(config.fit_min, config.buffer_m / 2);
  const double bob_speed = std::min(1.0, config.ascent_speed) / 2.0;
  bool on_surface = false;
  int cycles = 0;
  double best_settled = std::numeric_limits<double>::infinity();
  Vec3 best_settled_x = state.x_s;
  double baseline_cap = 150.0;  // halves on sign flips: a bisection on the baseline
  int last_baseline_sign = 0;
  while (state.t < init_budget && !on_surface) {
    const Vec3 cycle_start = state.x_s;
    // Hold: refill the measurement window around the current anchor.
    for (int w = 0; w < hold_slots && state.t < init_budget; ++w) {
      refresh_models(state, config, map, scenario, channel, rng);
      Vec3 s = Vec3(0.0, 0.0, w < hold_slots / 2 ? bob_speed : -bob_speed);
      const Vec3 candidate = state.x_s + s * config.dt;
      if (candidate.z() < map.h_min || !is_full_los(map, candidate, scenario)) {
        s = Vec3(0.0, 0.0, bob_speed);
      }
      integrate_slot(state, config, s);
      if (log) log->append(make_log_row(state, map, scenario, channel));
    }
    refresh_models(state, config, map, scenario, channel, rng);
    const GainField field =
        gain_field_from_models(state.models, state.eval_point, scenario.noise_power);
    const double f_est = balance_F(field.gains, scenario);
    const double sigma_f =
        balance_noise_std(state, field, scenario, channel.sigma_db, state.eval_point);
    if (std::abs(f_est) < std::max(config.f_tol, 2.0 * sigma_f)) {
      on_surface = true;
      break;
    }
    if (std::abs(f_est) < best_settled) {
      best_settled = std::abs(f_est);
      best_settled_x = state.x_s;
    }
    // Urban windows carry residual fit bias that can keep the settled
    // estimate just above the noise floor. After enough Newton cycles a
    // near-miss at the current point is a valid start (the Phase-1 corrector
    // finishes the projection); a gross miss restarts the projection from a
    // higher, smoother altitude.
    if (++cycles >= 6) {
      if (std::abs(f_est) < 5.0 * std::max(config.f_tol, sigma_f)) {
        on_surface = true;
        break;
      }
      cycles = 0;
      best_settled = std::numeric_limits<double>::infinity();
      for (int w = 0; w < 20 && state.t < init_budget && state.x_s.z() < ceiling; ++w) {
        refresh_models(state, config, map, scenario, channel, rng);
        integrate_slot(state, config, Vec3(0.0, 0.0, config.ascent_speed));
        if (log) log->append(make_log_row(state, map, scenario, channel));
      }
    }
    // Hop toward the surface. Far from it, 3-D minimum-norm steps are
    // untrustworthy: the gradient is weak, and along single columns the
    // balance can approach zero only asymptotically, so Newton steps chase
    // roots at infinity. What the existence probes certify is a sign change
    // along the BS-to-centroid baseline, so the far regime steps along that
    // baseline: toward the BS when the user side dominates and away when the
    // backhaul dominates, Newton-sized when the local slope agrees, with the
    // cap halving on sign flips (a bisection on the certified bracket). The
    // local 3-D Newton hop takes over near the surface.
    Vec3 hop;
    if (std::abs(f_est) > 0.3) {
      Eigen::Vector2d baseline = (scenario.bs_position - state.x_s).head<2>();
      if (baseline.norm() < 1.0) baseline = Eigen::Vector2d(1.0, 0.0);
      baseline.normalize();
      const Vec3 d3(baseline.x(), baseline.y(), 0.0);  // toward the BS column
      const double slope = grad_F_position(field, scenario).dot(d3);
      const double want = f_est < 0.0 ? 1.0 : -1.0;  // toward BS raises F
      double step = (slope * want > 1e-6) ? std::abs(f_est / slope) : baseline_cap;
      step = std::min(step, baseline_cap);
      const int sign = want > 0.0 ? 1 : -1;
      if (last_baseline_sign != 0 && sign != last_baseline_sign) {
        baseline_cap = std::max(10.0, baseline_cap / 2.0);
        step = std::min(step, baseline_cap);
      }
      last_baseline_sign = sign;
      hop = want * step * d3;
    } else {
      try {
        hop = config.mu_v * tracking_direction(field, scenario);
      } catch (const SingularSystemError&) {
        hop = Vec3(0.0, 0.0, config.ascent_speed * config.dt * 5.0);
      }
    }
    const double hop_len = std::min(hop.norm(), 150.0);
    if (hop.norm() > 0.0) hop *= hop_len / hop.norm();
    const int hop_slots = std::max(1, static_cast<int>(std::ceil(hop_len / config.max_step)));
    for (int h = 0; h < hop_slots && state.t < init_budget; ++h) {
      refresh_models(state, config, map, scenario, channel, rng);
      Vec3 s = hop / (hop_slots * config.dt);
      const auto blocked = [&](const Vec3& cand) {
        return !map.in_footprint(cand.x(), cand.y()) || !is_full_los(map, cand, scenario) ||
               cand.z() < map.h_min;
      };
      if (blocked(state.x_s + s * config.dt)) {
        Vec3 level = s;
        level.z() = std::max(0.0, level.z());
        s = blocked(state.x_s + level * config.dt) ? Vec3(0.0, 0.0, config.ascent_speed) : level;
      }
      integrate_slot(state, config, s);
      if (log) log->append(make_log_row(state, map, scenario, channel));
    }
    // A cycle that barely moved is deadlocked (every descent toward the
    // crossing is LOS-rejected). Reaching S within D-tilde from here is the
    // main loop's job: Phase 2 follows the backhaul level set hunting LOS.
    if ((state.x_s - cycle_start).norm() < 5.0 && std::abs(f_est) > 5.0 * config.f_tol) {
      break;
    }
  }
  if (!on_surface) {
    state.init_settled = false;  // best effort: hand over to the search loop
  }

  state.phase = Phase::Phase1Los;
  state.prev_full_los = is_full_los(map, state.x_s, scenario);
  state.init_altitude = state.x_s.z();
  state.path_length = 0.0;
  // Seed the Phase-1 heading toward the BS (a known node): descending the
  // surface toward the BS is where the backhaul objective grows.
  const Eigen::Vector2d to_bs = (scenario.bs_position - state.x_s).head<2>();
  if (to_bs.norm() > 1e-9) {
    state.heading = std::atan2(to_bs.y(), to_bs.x());
    state.heading_valid = true;
  }
  return state;
}

SearchResult run_search(const CityMap& map, const Scenario& scenario, const ChannelParams& channel,
                        const SearchConfig& config, Rng& rng) {
  SearchResult result;
  SearchState state = initialize(map, scenario, channel, config, rng, &result.log);
  result.init_altitude = state.init_altitude;

  double last_best = state.best_value_est;
  result.convergence_time = state.t;
  while (true) {
    if (state.t >= config.max_time) {
      result.terminated_by = "max_time";
      break;
    }
    step(state, config, map, scenario, channel, rng);
    if (state.x_s.z() < map.h_min) {
      result.terminated_by = "h_min";
      break;
    }
    result.log.append(make_log_row(state, map, scenario, channel));
    if (state.has_incumbent && state.best_value_est > last_best) {
      last_best = state.best_value_est;
      result.convergence_time = state.t;
      result.length_at_convergence = state.path_length;
    }
  }

  // Terminal drain: the last stretch of the descent was only ever ranked by
  // downward extrapolation. Hold at the terminal point while the spiral
  // re-centers the measurement window there, then sweep the stored path with
  // the settled models.
  if (config.model_source == ModelSource::Estimated && result.terminated_by == "h_min") {
    state.x_s.z() = std::max(state.x_s.z(), map.h_min);
    state.frame_dir = Vec3::UnitZ();
    state.prev_frame = rotation_to(Vec3::UnitZ());
    for (int w = 0; w < config.buffer_m; ++w) {
      refresh_models(state, config, map, scenario, channel, rng);
      update_incumbent(state, map, scenario, channel);
      integrate_slot(state, config, Vec3::Zero());
      result.log.append(make_log_row(state, map, scenario, channel));
    }
  }

  // Terminal sweep: the decision point trails the physical path by half a
  // measurement window, so the last stretch of the descent never became a
  // candidate during the loop. Rank it with the final models.
  for (const Vec3& p : state.recent_path) {
    consider_incumbent(state, map, scenario, channel, p);
  }

  result.best_x = state.best_x;
  result.best_value_est = state.best_value_est;
  result.best_value = state.has_incumbent
                          ? evaluate_objective(map, scenario, channel, state.best_x)
                          : -std::numeric_limits<double>::infinity();
  result.trajectory_length = state.path_length;
  return result;
}

double evaluate_objective(const CityMap& map, const Scenario& scenario,
                          const ChannelParams& channel, const Vec3& x) {
  if (x.z() < map.h_min || !map.in_footprint(x.x(), x.y()) ||
      !is_full_los(map, x, scenario)) {
    return -std::numeric_limits<double>::infinity();
  }
  for (int node = 0; node <= scenario.num_users(); ++node) {
    // A position on top of an antenna is not a valid placement.
    if ((x - scenario.node_position(node)).norm() < 1.0) {
      return -std::numeric_limits<double>::infinity();
    }
  }
  GainVector gains;
  gains.g0 = db_to_linear(los_gain_db(channel, x, scenario.bs_position)) / scenario.noise_power;
  gains.gu.resize(scenario.num_users());
  for (int k = 1; k <= scenario.num_users(); ++k) {
    gains.gu(k - 1) =
        db_to_linear(los_gain_db(channel, x, scenario.node_position(k))) / scenario.noise_power;
  }
  const AllocationResult alloc = allocate(gains, scenario);
  return std::min(objective_f0(gains.g0, scenario.p0), alloc.fu_value);
}

const char* phase_name(Phase phase) {
  switch (phase) {
    case Phase::Init:
      return "init";
    case Phase::Phase1Los:
      return "phase1_los";
    case Phase::Phase2Nlos:
      return "phase2_nlos";
    case Phase::Transition:
      return "transition";
  }
  return "unknown";
}

void TrajectoryLog::append(LogRow row) { rows.push_back(std::move(row)); }

std::string TrajectoryLog::to_csv() const {
  std::ostringstream out;
  const std::size_t nodes = rows.empty() ? 0 : rows.front().alpha_db.size();
  out << "t,x1,x2,x3,xs1,xs2,xs3,phase,F_est,F_true,obj_true,obj_est,best_est,full_los";
  for (std::size_t n = 0; n < nodes; ++n) out << ",alpha_" << n;
  out << "\n";
  char buf[64];
  const auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    out << buf;
  };
  for (const LogRow& row : rows) {
    put(row.t);
    for (int i = 0; i < 3; ++i) {
      out << ",";
      put(row.x(i));
    }
    for (int i = 0; i < 3; ++i) {
      out << ",";
      put(row.x_s(i));
    }
    out << "," << phase_name(row.phase) << ",";
    put(row.f_est);
    out << ",";
    put(row.f_true);
    out << ",";
    put(row.objective_true);
    out << ",";
    put(row.objective_est);
    out << ",";
    put(row.best_value_est);
    out << "," << (row.full_los ? 1 : 0);
    for (double a : row.alpha_db) {
      out << ",";
      put(a);
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace uavsearch
