#pragma once

#include "uavsearch/core.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace uavsearch {

/// Raster model of the urban environment: a grid of building heights over a
/// rectangular footprint. Height 0 marks open ground. Immutable after
/// construction; LOS queries are pure functions and safe to share across
/// concurrent trial runners.
struct CityMap {
  Eigen::Vector2d origin{0.0, 0.0};  // south-west corner [m]
  double cell_size = 5.0;            // meters per cell
  int width = 1;                     // cells along x
  int depth = 1;                     // cells along y
  std::vector<double> heights;       // row-major [iy * width + ix], meters
  double h_min = 30.0;               // minimum UAV flight altitude [m]

  double height_at_cell(int ix, int iy) const { return heights[static_cast<std::size_t>(iy) * width + ix]; }

  /// Building height under a horizontal position; positions outside the
  /// footprint are a caller error and raise std::domain_error.
  double height_at(double x, double y) const;

  bool in_footprint(double x, double y) const {
    return x >= origin.x() && x <= origin.x() + width * cell_size && y >= origin.y() &&
           y <= origin.y() + depth * cell_size;
  }

  double footprint_width() const { return width * cell_size; }
  double footprint_depth() const { return depth * cell_size; }
  double max_building_height() const;

  void validate() const;  // throws ConfigError on violated invariants
};

enum class ProblemKind { Balancing, SumRate };
enum class UserObjective { Capacity, Snr };

/// Node placement, power budgets and problem selection for one experiment.
/// Node 0 is the BS; users are 1..K.
struct Scenario {
  Vec3 bs_position{0.0, 0.0, 25.0};
  std::vector<Vec3> user_positions;
  double p0 = 1.0;       // BS transmit power [W]
  double p_total = 1.0;  // UAV power budget [W]
  ProblemKind problem_kind = ProblemKind::Balancing;
  UserObjective user_objective = UserObjective::Capacity;
  std::vector<double> weights;  // per-user weight (mu_s or mu_c), defaults to 1
  double noise_power = 1.0;     // N_0, linear

  int num_users() const { return static_cast<int>(user_positions.size()); }
  double weight(int k) const {  // k in 1..K
    return weights.empty() ? 1.0 : weights[static_cast<std::size_t>(k - 1)];
  }
  Vec3 node_position(int node) const { return node == 0 ? bs_position : user_positions[static_cast<std::size_t>(node - 1)]; }
  Vec3 user_centroid() const;

  void validate(const CityMap& map) const;  // throws ConfigError
};

/// True iff the straight segment x -> u clears every building cell it crosses.
/// Ray marching samples the segment at horizontal steps of cell_size/2 and
/// blocks conservatively (segment height <= building height at any sample).
/// Sampling by horizontal arc length makes upward invariance exact.
bool los_indicator(const CityMap& map, const Vec3& x, const Vec3& u);

/// LOS to the BS and every user (the full-LOS region).
bool is_full_los(const CityMap& map, const Vec3& x, const Scenario& scenario);

struct ManhattanMapSpec {
  std::uint64_t seed = 1;
  double width_m = 1000.0;
  double depth_m = 1000.0;
  double cell_size = 5.0;
  double block_m = 80.0;   // building block edge
  double street_m = 20.0;  // street width between blocks
  double target_bcr = 0.18;
  // Height range tuned so BCR 0.18 lands near floor-area ratio 1.0, the
  // sparse-commercial profile (mean height ~17-20 m with a mid-rise tail).
  double height_min = 8.0;
  double height_max = 45.0;
  double h_min_override = 0.0;  // >0 overrides the top-20% rule
};

/// Synthetic Manhattan-grid city. Deterministic per seed; realized building
/// coverage ratio lands within +-3 percentage points of the target. h_min is
/// the minimum height of the top-20% tallest buildings unless overridden.
CityMap generate_manhattan_map(const ManhattanMapSpec& spec);

/// Fraction of footprint cells covered by buildings.
double building_coverage_ratio(const CityMap& map);

/// K distinct ground-level positions on open cells, uniform per seed.
std::vector<Vec3> place_users(const CityMap& map, std::uint64_t seed, int k);

/// Map file I/O: JSON object {origin, cell_size, h_min, heights}.
CityMap load_map_json(const std::string& path);
void save_map_json(const CityMap& map, const std::string& path);
CityMap map_from_json_text(const std::string& text);
std::string map_to_json_text(const CityMap& map);

}  // namespace uavsearch
