#pragma once

#include "uavsearch/channel.hpp"
#include "uavsearch/citymap.hpp"
#include "uavsearch/trajectory.hpp"

#include <optional>
#include <string>
#include <vector>

namespace uavsearch {

/// One canonical, diffable experiment record. Powers enter in dBm and are
/// converted once to linear watts; everything stochastic flows from `seed`.
struct RunConfig {
  std::uint64_t seed = 1;
  int trials = 1;
  int workers = 0;  // 0 = hardware concurrency
  std::string out_dir = "out";

  // Map source: a file path, or a generator spec.
  std::string map_path;
  std::optional<ManhattanMapSpec> map_gen;

  // Scenario.
  int k_users = 4;
  double p0_dbm = 36.02;     // ~4 W; defaults pair with p_total and K
  double p_total_dbm = 30.0; // 1 W
  bool p0_scales_with_k = true;  // BS power = K x UAV power when true
  std::string problem = "sumrate";        // "sumrate" | "balancing"
  std::string user_objective = "capacity";  // "capacity" | "snr"
  std::vector<double> weights;
  double noise_dbm = -70.0;  // noise floor; capacities then match the reported regime
  std::optional<Vec3> bs_position;  // unset: above the building nearest center

  ChannelParams channel;
  SearchConfig search;

  std::vector<std::string> baselines{"exh3d", "exh2d", "statis", "genius"};
  double lattice_step_m = 5.0;

  void validate() const;
};

RunConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const RunConfig& config);
RunConfig load_config(const std::string& path);

/// Materialized experiment inputs for one trial.
struct TrialSetup {
  CityMap map;
  Scenario scenario;
  ChannelParams channel;
  SearchConfig search;
};

/// Build map + scenario for a trial index: map from file or generator,
/// users placed per trial seed, BS above the building nearest the map
/// center, powers converted to watts. Advances the user-placement stream
/// until the equipotential surface exists.
TrialSetup make_trial_setup(const RunConfig& config, int trial_index);

std::uint64_t config_hash(const RunConfig& config);

}  // namespace uavsearch
