#pragma once

#include "uavsearch/baselines.hpp"
#include "uavsearch/config.hpp"

#include <string>
#include <vector>

namespace uavsearch {

/// Run the proposed scheme over all trials; writes trajectory_<trial>.csv
/// plus a metadata sidecar per trial and summary.json. Returns a process
/// exit code (nonzero when any trial aborts).
int cmd_run(const RunConfig& config);

/// One cmd_run-style summary per axis value; writes sweep.csv.
/// Axis is one of p_total, K, M, r_spiral.
int cmd_sweep(const RunConfig& config, const std::string& axis, const std::vector<double>& values);

/// Head-to-head baselines on the configured scenario; writes baselines.json
/// and baselines.csv.
int cmd_baseline(const RunConfig& config);

/// Channel-construction benches: MSE sweeps against the two bounds
/// (estimate_bench.csv) and the optimal-radius table (optimal_r1.csv).
int cmd_estimate_bench(const RunConfig& config);

/// Generate a synthetic map file and report realized BCR and h_min.
int cmd_map_gen(const ManhattanMapSpec& spec, const std::string& out_path);

/// Per-trial record used by summaries (exposed for tests).
struct TrialRecord {
  int trial = 0;
  bool ok = false;
  std::string error;
  double objective = 0.0;
  double objective_est = 0.0;
  double trajectory_length = 0.0;
  double convergence_time = 0.0;
  double init_altitude = 0.0;
  std::string terminated_by;
  Vec3 best_x = Vec3::Zero();
};

std::vector<TrialRecord> run_trials(const RunConfig& config, bool write_outputs);

double median(std::vector<double> values);

}  // namespace uavsearch
