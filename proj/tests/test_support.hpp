#pragma once

#include "uavsearch/allocation.hpp"
#include "uavsearch/channel.hpp"
#include "uavsearch/citymap.hpp"

#include <vector>

namespace uavsearch::test {

/// Flat open map: LOS everywhere above h_min.
inline CityMap flat_map(double side_m = 1000.0, double h_min = 1.0, double cell = 10.0) {
  CityMap map;
  map.cell_size = cell;
  map.width = static_cast<int>(side_m / cell);
  map.depth = static_cast<int>(side_m / cell);
  map.heights.assign(static_cast<std::size_t>(map.width) * map.depth, 0.0);
  map.h_min = h_min;
  map.origin = Eigen::Vector2d(-side_m / 2.0, -side_m / 2.0);
  return map;
}

/// One rectangular building of the given height; footprint in meters.
inline CityMap single_block_map(double side_m, double cell, double bx0, double bx1, double by0,
                                double by1, double height, double h_min = 10.0) {
  CityMap map = flat_map(side_m, h_min, cell);
  map.origin = Eigen::Vector2d(0.0, 0.0);
  for (int iy = 0; iy < map.depth; ++iy) {
    for (int ix = 0; ix < map.width; ++ix) {
      const double cx = (ix + 0.5) * cell;
      const double cy = (iy + 0.5) * cell;
      if (cx > bx0 && cx < bx1 && cy > by0 && cy < by1) {
        map.heights[static_cast<std::size_t>(iy) * map.width + ix] = height;
      }
    }
  }
  return map;
}

inline Scenario balancing_scenario(const Vec3& bs, std::vector<Vec3> users, double p0,
                                   double p_total) {
  Scenario sc;
  sc.bs_position = bs;
  sc.user_positions = std::move(users);
  sc.p0 = p0;
  sc.p_total = p_total;
  sc.problem_kind = ProblemKind::Balancing;
  sc.user_objective = UserObjective::Capacity;
  return sc;
}

/// True LOS gains at x, noise-normalized: the oracle-side gain evaluator.
inline GainVector true_gains(const ChannelParams& channel, const Scenario& scenario,
                             const Vec3& x) {
  GainVector g;
  g.g0 = db_to_linear(los_gain_db(channel, x, scenario.bs_position)) / scenario.noise_power;
  g.gu.resize(scenario.num_users());
  for (int k = 1; k <= scenario.num_users(); ++k) {
    g.gu(k - 1) =
        db_to_linear(los_gain_db(channel, x, scenario.node_position(k))) / scenario.noise_power;
  }
  return g;
}

}  // namespace uavsearch::test
