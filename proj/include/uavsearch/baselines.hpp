#pragma once

#include "uavsearch/trajectory.hpp"

#include <string>

namespace uavsearch {

/// Outcome of one searcher on one scenario, on the common metric: the
/// full-LOS-gated objective under optimal allocation.
struct EvaluationResult {
  std::string scheme;
  Vec3 best_x = Vec3::Zero();
  double objective = -std::numeric_limits<double>::infinity();
  double trajectory_length = 0.0;  // lattice proxy: points x step for exhaustive schemes
  double length_at_convergence = 0.0;  // length flown when the incumbent settled
  double wall_time_s = 0.0;
  double convergence_time = 0.0;
  long evaluations = 0;
};

/// Exhaustive search over the 3D lattice from h_min to the map ceiling plus
/// 100 m. Non-full-LOS positions score -inf; ties break to the
/// lexicographically smallest position. Chunks run on `workers` threads.
EvaluationResult exhaustive_3d(const CityMap& map, const Scenario& scenario,
                               const ChannelParams& channel, double step, int workers = 1);

/// Exhaustive search restricted to the altitude slice h_min + 50.
EvaluationResult exhaustive_2d(const CityMap& map, const Scenario& scenario,
                               const ChannelParams& channel, double step, int workers = 1);

/// Elevation-angle LOS probability 1 / (1 + a_e exp(-b_e (theta - a_e))).
struct LosProbabilityFit {
  double a_e = 1.0;
  double b_e = 1.0;
  double rmse = 0.0;
  bool flat_fit = false;  // degenerate sample (all LOS or all NLOS)

  double p_los(double elevation_rad) const {
    return 1.0 / (1.0 + a_e * std::exp(-b_e * (elevation_rad - a_e)));
  }
};

/// Least-squares fit of the logistic LOS-probability curve to empirical LOS
/// frequencies binned by elevation angle over random position pairs.
LosProbabilityFit fit_los_probability(const CityMap& map, const Scenario& scenario, int n_samples,
                                      Rng& rng);

/// Lattice search on the expected-gain objective built from the fitted LOS
/// probability; the reported value re-evaluates the chosen position under
/// true LOS gating.
EvaluationResult statistical_geometry(const CityMap& map, const Scenario& scenario,
                                      const ChannelParams& channel, double step,
                                      const LosProbabilityFit& fit, int workers = 1);

/// The proposed search with exact channel knowledge and zero spiral radius.
EvaluationResult genius_aided(const CityMap& map, const Scenario& scenario,
                              const ChannelParams& channel, const SearchConfig& config, Rng& rng);

/// The proposed scheme wrapped in the common result type.
EvaluationResult proposed_scheme(const CityMap& map, const Scenario& scenario,
                                 const ChannelParams& channel, const SearchConfig& config, Rng& rng,
                                 TrajectoryLog* log = nullptr);

}  // namespace uavsearch
