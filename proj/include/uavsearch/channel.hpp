#pragma once

#include "uavsearch/citymap.hpp"
#include "uavsearch/core.hpp"

#include <cstdint>

namespace uavsearch {

/// Log-distance LOS gain model plus an NLOS shadowing penalty and Gaussian
/// measurement noise. Gains are carried in dB end to end; capacity/SNR
/// formulas convert once via db_to_linear.
struct ChannelParams {
  double b0_db = -46.53;          // intercept at d = 1 m
  double a0 = -2.0;               // path-loss exponent (negative)
  double nlos_mean_db = -30.0;    // mean of the shadowing penalty phi(x)
  double nlos_std_db = 0.0;       // std of phi(x)
  double sigma_db = 2.2360679774997896;  // measurement noise std (variance 5 dB)
  double lg = 8.7e-4;             // Lipschitz constant L_g [dB/m^2]
  double lg2 = 3.5e-3;            // local curvature L'_g [dB/m^2]
  std::uint64_t nlos_seed = 0;    // freezes the shadowing field per run

  void validate() const {
    if (sigma_db < 0.0) throw ConfigError("channel: sigma must be >= 0");
    if (a0 >= 0.0) throw ConfigError("channel: a0 must be < 0");
    if (nlos_mean_db >= 0.0) throw ConfigError("channel: NLOS penalty mean must be < 0");
    if (lg <= 0.0 || lg2 <= 0.0) throw ConfigError("channel: Lipschitz constants must be > 0");
  }
};

struct Measurement {
  Vec3 position;
  int node_id = 0;  // 0 = BS, k >= 1 = user k
  double y_db = 0.0;
  bool is_los = false;
  double time_s = 0.0;
};

/// Deterministic LOS gain b0 + 10*a0*log10(d(x,u)) in dB.
double los_gain_db(const ChannelParams& params, const Vec3& x, const Vec3& u);

/// Position gradient of los_gain_db [dB/m].
Vec3 los_gain_gradient_db(const ChannelParams& params, const Vec3& x, const Vec3& u);

/// LOS branch returns los_gain_db; NLOS adds a penalty frozen per position so
/// the environment is a deterministic field for a fixed nlos_seed.
double true_gain_db(const ChannelParams& params, const CityMap& map, const Vec3& x, const Vec3& u);

/// One noisy gain measurement of a node; is_los comes from the ground-truth
/// map indicator.
Measurement measure(const ChannelParams& params, const CityMap& map, const Vec3& x,
                    const Scenario& scenario, int node_id, double time_s, Rng& rng);

/// BS-link objective log2(1 + p0 * g0) with g0 linear.
double objective_f0(double g0_linear, double p0);

/// Per-user objective: Snr -> weight * p * g ; Capacity -> weight * log2(1 + p * g).
double objective_fk(double gk_linear, double pk, UserObjective kind, double weight);

}  // namespace uavsearch
