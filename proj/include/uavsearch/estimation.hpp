#pragma once

#include "uavsearch/channel.hpp"
#include "uavsearch/core.hpp"

#include <deque>
#include <vector>

namespace uavsearch {

/// FIFO of the past M LOS measurements of one node. NLOS measurements are
/// discarded for fitting but remain in the trajectory log.
class MeasurementBuffer {
 public:
  MeasurementBuffer() = default;
  MeasurementBuffer(int node_id, int capacity) : node_id_(node_id), capacity_(capacity) {}

  /// Accepts LOS measurements only; returns true if stored.
  bool push(const Measurement& m) {
    if (!m.is_los) return false;
    entries_.push_back(m);
    while (static_cast<int>(entries_.size()) > capacity_) entries_.pop_front();
    return true;
  }

  int node_id() const { return node_id_; }
  int capacity() const { return capacity_; }
  int size() const { return static_cast<int>(entries_.size()); }
  const std::deque<Measurement>& entries() const { return entries_; }

 private:
  int node_id_ = 0;
  int capacity_ = 100;
  std::deque<Measurement> entries_;
};

/// First-order local channel map g(x) ~ alpha + beta^T (x - anchor), in dB.
struct LocalChannelModel {
  Vec3 anchor = Vec3::Zero();
  double alpha_db = 0.0;
  Vec3 beta_db_per_m = Vec3::Zero();
  double fit_residual_db = 0.0;  // RMS of the LS residual
  int n_used = 0;
  int age_steps = 0;  // steps since last refit; stale models extrapolate
  // Estimator noise amplification, per unit measurement std: sqrt of the
  // relevant diagonal entries of (X~^T X~)^-1. The search gates model
  // readiness on these so a barely-excited geometry is never trusted.
  double alpha_std_unit = 0.0;
  double beta_std_unit = 0.0;

  double predict_db(const Vec3& x) const { return alpha_db + beta_db_per_m.dot(x - anchor); }
};

/// Least-squares fit of [alpha, beta] from the buffer contents, anchored at
/// c0. Solved by column-pivoted QR; a rank-deficient design (collinear
/// measurements) raises DegenerateGeometryError naming the deficient
/// direction.
LocalChannelModel fit_local_model(const MeasurementBuffer& buffer, const Vec3& c0);

/// Same fit from raw point/value arrays (test and bench entry point).
LocalChannelModel fit_local_model(const std::vector<Vec3>& points, const std::vector<double>& values,
                                  const Vec3& c0);

/// Estimator-error variance floor sigma^2/M + 9 sigma^2 / (M r1^2).
double variance_lower_bound(int m, double r1, double sigma);

/// Residuals of the three optimal-pattern moment conditions, each normalized
/// by M*r1^2: (i) per-coordinate sums vanish, (ii) cross moments vanish,
/// (iii) per-coordinate second moments equal M r1^2 / 3.
struct PatternReport {
  double cond_i = 0.0;
  double cond_ii = 0.0;
  double cond_iii = 0.0;
  double max_residual() const { return std::max(cond_i, std::max(cond_ii, cond_iii)); }
};
PatternReport check_pattern_conditions(const std::vector<Vec3>& points, const Vec3& c0, double r1);

/// MSE upper bound on the constructed gain at range r0 from the anchor,
/// with measurement radius r1: variance term plus Lipschitz bias term.
double mse_bound(int m, double r0, double r1, double sigma, double lg);

/// Second-order approximation of the MSE under curvature lg2.
double mse_approx(int m, double r0, double r1, double sigma, double lg2);

/// argmin of mse_approx over r1 in (0.1, 200] by golden section, resolved to
/// 0.1 m. The objective is unimodal for positive parameters.
double optimal_measurement_radius(int m, double r0, double sigma, double lg2);

/// Sample m (1-based) of the alternating spiral pattern with M samples and
/// measurement radius r1, centered at the origin. Taken at t = m - 1/2 the
/// pattern meets all three moment conditions exactly.
Vec3 alternating_spiral_sample(int m, int big_m, double r1, int k = 1);

}  // namespace uavsearch
