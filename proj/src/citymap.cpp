#include "uavsearch/citymap.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace uavsearch {

namespace {

using json = nlohmann::ordered_json;

int clamp_cell(int i, int n) { return std::min(std::max(i, 0), n - 1); }

}  // namespace

double CityMap::height_at(double x, double y) const {
  if (!in_footprint(x, y)) {
    throw std::domain_error("position outside map footprint");
  }
  int ix = clamp_cell(static_cast<int>((x - origin.x()) / cell_size), width);
  int iy = clamp_cell(static_cast<int>((y - origin.y()) / cell_size), depth);
  return height_at_cell(ix, iy);
}

double CityMap::max_building_height() const {
  return heights.empty() ? 0.0 : *std::max_element(heights.begin(), heights.end());
}

void CityMap::validate() const {
  if (cell_size <= 0.0) throw ConfigError("map: cell_size must be > 0");
  if (width < 1 || depth < 1) throw ConfigError("map: grid dimensions must be >= 1x1");
  if (h_min <= 0.0) throw ConfigError("map: h_min must be > 0");
  if (heights.size() != static_cast<std::size_t>(width) * depth) {
    throw ConfigError("map: heights size does not match width*depth");
  }
  for (double h : heights) {
    if (!(h >= 0.0)) throw ConfigError("map: building heights must be >= 0");
  }
}

Vec3 Scenario::user_centroid() const {
  Vec3 c = Vec3::Zero();
  for (const Vec3& u : user_positions) c += u;
  return c / static_cast<double>(user_positions.size());
}

void Scenario::validate(const CityMap& map) const {
  if (user_positions.empty()) throw ConfigError("scenario: needs at least one user");
  if (!(p0 > 0.0) || !(p_total > 0.0)) throw ConfigError("scenario: powers must be > 0");
  if (!(noise_power > 0.0)) throw ConfigError("scenario: noise power must be > 0");
  if (!weights.empty() && weights.size() != user_positions.size()) {
    throw ConfigError("scenario: weights size must match user count");
  }
  for (double w : weights) {
    if (!(w > 0.0)) throw ConfigError("scenario: weights must be > 0");
  }
  if (!map.in_footprint(bs_position.x(), bs_position.y())) {
    throw ConfigError("scenario: BS outside map footprint");
  }
  for (const Vec3& u : user_positions) {
    if (!map.in_footprint(u.x(), u.y())) throw ConfigError("scenario: user outside map footprint");
  }
}

bool los_indicator(const CityMap& map, const Vec3& x, const Vec3& u) {
  if (!map.in_footprint(x.x(), x.y()) || !map.in_footprint(u.x(), u.y())) {
    throw std::domain_error("los_indicator: position outside map footprint");
  }
  const Eigen::Vector2d a(u.x(), u.y());
  const Eigen::Vector2d b(x.x(), x.y());
  const double horiz = (b - a).norm();
  // Near-vertical segment: only the endpoint column is crossed, which hosts
  // the antennas themselves and does not block.
  if (horiz < 1e-9) return true;

  const int n = static_cast<int>(std::ceil(horiz / (map.cell_size * 0.5)));
  for (int k = 1; k < n; ++k) {
    const double t = static_cast<double>(k) / n;
    const Eigen::Vector2d p = a + t * (b - a);
    const double seg_h = u.z() + t * (x.z() - u.z());
    const double cell_h = map.height_at(p.x(), p.y());
    if (cell_h > 0.0 && seg_h <= cell_h) return false;
  }
  return true;
}

bool is_full_los(const CityMap& map, const Vec3& x, const Scenario& scenario) {
  if (!los_indicator(map, x, scenario.bs_position)) return false;
  for (const Vec3& u : scenario.user_positions) {
    if (!los_indicator(map, x, u)) return false;
  }
  return true;
}

namespace {

struct Block {
  int x0, y0, nx, ny;  // block interior in cells
};

}  // namespace

CityMap generate_manhattan_map(const ManhattanMapSpec& spec) {
  if (spec.width_m <= 0 || spec.depth_m <= 0 || spec.cell_size <= 0 || spec.block_m <= 0 ||
      spec.street_m < 0) {
    throw ConfigError("map-gen: dimensions must be positive");
  }
  if (spec.target_bcr < 0.0 || spec.target_bcr >= 0.6) {
    throw ConfigError("map-gen: target BCR must lie in [0, 0.6)");
  }

  CityMap map;
  map.cell_size = spec.cell_size;
  map.width = std::max(1, static_cast<int>(std::round(spec.width_m / spec.cell_size)));
  map.depth = std::max(1, static_cast<int>(std::round(spec.depth_m / spec.cell_size)));
  map.heights.assign(static_cast<std::size_t>(map.width) * map.depth, 0.0);

  Rng rng(mix_seed(spec.seed));

  if (spec.target_bcr > 0.0) {
    const int block_c = std::max(1, static_cast<int>(std::round(spec.block_m / spec.cell_size)));
    const int street_c = std::max(1, static_cast<int>(std::round(spec.street_m / spec.cell_size)));
    const int period = block_c + street_c;

    std::vector<Block> blocks;
    for (int by = street_c / 2; by + block_c <= map.depth; by += period) {
      for (int bx = street_c / 2; bx + block_c <= map.width; bx += period) {
        blocks.push_back({bx, by, block_c, block_c});
      }
    }
    if (blocks.empty()) throw ConfigError("map-gen: footprint too small for one block");

    const long total_cells = static_cast<long>(map.width) * map.depth;
    const long target_cells = std::lround(spec.target_bcr * total_cells);
    const long max_per_block = static_cast<long>(block_c) * block_c;
    if (target_cells > static_cast<long>(blocks.size()) * max_per_block) {
      throw ConfigError("map-gen: target BCR unreachable for given block geometry");
    }

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> building_heights;
    long placed = 0;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const long remaining_blocks = static_cast<long>(blocks.size() - i);
      const long want = (target_cells - placed + remaining_blocks - 1) / remaining_blocks;
      if (want <= 0) break;
      const Block& blk = blocks[i];
      // Rectangle of ~want cells inside the block, aspect jittered.
      const double aspect = 0.6 + 0.8 * unit(rng);
      int bw = std::min(blk.nx, std::max(1, static_cast<int>(std::round(std::sqrt(want * aspect)))));
      int bh = std::min(blk.ny, std::max(1, static_cast<int>((want + bw - 1) / bw)));
      bw = std::min(blk.nx, std::max(1, static_cast<int>((want + bh - 1) / bh)));
      const int offx = (blk.nx - bw > 0) ? static_cast<int>(unit(rng) * (blk.nx - bw)) : 0;
      const int offy = (blk.ny - bh > 0) ? static_cast<int>(unit(rng) * (blk.ny - bh)) : 0;
      // Skewed toward low-rise with a tall tail.
      const double r = unit(rng);
      const double h = spec.height_min + (spec.height_max - spec.height_min) * r * r;
      building_heights.push_back(h);
      for (int iy = 0; iy < bh; ++iy) {
        for (int ix = 0; ix < bw; ++ix) {
          map.heights[static_cast<std::size_t>(blk.y0 + offy + iy) * map.width + blk.x0 + offx + ix] = h;
        }
      }
      placed += static_cast<long>(bw) * bh;
    }

    const double realized = static_cast<double>(placed) / total_cells;
    if (std::abs(realized - spec.target_bcr) > 0.03) {
      throw ConfigError("map-gen: realized BCR " + std::to_string(realized) +
                        " misses target by more than 3 points");
    }

    if (spec.h_min_override > 0.0) {
      map.h_min = spec.h_min_override;
    } else {
      // Minimum height of the top-20% tallest buildings.
      std::sort(building_heights.begin(), building_heights.end(), std::greater<>());
      const std::size_t top = std::max<std::size_t>(1, building_heights.size() / 5);
      map.h_min = building_heights[top - 1];
    }
  } else {
    map.h_min = spec.h_min_override > 0.0 ? spec.h_min_override : 30.0;
  }

  map.validate();
  return map;
}

double building_coverage_ratio(const CityMap& map) {
  const std::size_t covered = static_cast<std::size_t>(
      std::count_if(map.heights.begin(), map.heights.end(), [](double h) { return h > 0.0; }));
  return static_cast<double>(covered) / static_cast<double>(map.heights.size());
}

std::vector<Vec3> place_users(const CityMap& map, std::uint64_t seed, int k) {
  if (k < 1) throw ConfigError("place_users: K must be >= 1");
  std::vector<int> open;
  for (int i = 0; i < map.width * map.depth; ++i) {
    if (map.heights[static_cast<std::size_t>(i)] == 0.0) open.push_back(i);
  }
  if (static_cast<int>(open.size()) < k) {
    throw ConfigError("place_users: not enough open cells for K users");
  }
  Rng rng(mix_seed(seed * 0x9e3779b9ULL + 17));
  std::vector<Vec3> users;
  users.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(0, open.size() - 1);
    const std::size_t j = pick(rng);
    const int cell = open[j];
    open[j] = open.back();
    open.pop_back();
    const int ix = cell % map.width;
    const int iy = cell / map.width;
    users.emplace_back(map.origin.x() + (ix + 0.5) * map.cell_size,
                       map.origin.y() + (iy + 0.5) * map.cell_size, 0.0);
  }
  return users;
}

std::string map_to_json_text(const CityMap& map) {
  json j;
  j["origin"] = {map.origin.x(), map.origin.y()};
  j["cell_size"] = map.cell_size;
  j["h_min"] = map.h_min;
  json rows = json::array();
  for (int iy = 0; iy < map.depth; ++iy) {
    json row = json::array();
    for (int ix = 0; ix < map.width; ++ix) row.push_back(map.height_at_cell(ix, iy));
    rows.push_back(std::move(row));
  }
  j["heights"] = std::move(rows);
  return j.dump();
}

CityMap map_from_json_text(const std::string& text) {
  json j = json::parse(text);
  CityMap map;
  map.origin = Eigen::Vector2d(j.at("origin").at(0).get<double>(), j.at("origin").at(1).get<double>());
  map.cell_size = j.at("cell_size").get<double>();
  map.h_min = j.at("h_min").get<double>();
  const auto& rows = j.at("heights");
  map.depth = static_cast<int>(rows.size());
  if (map.depth == 0) throw ConfigError("map file: empty heights grid");
  map.width = static_cast<int>(rows.at(0).size());
  map.heights.reserve(static_cast<std::size_t>(map.width) * map.depth);
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != map.width) throw ConfigError("map file: ragged heights grid");
    for (const auto& h : row) map.heights.push_back(h.get<double>());
  }
  map.validate();
  return map;
}

CityMap load_map_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open map file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return map_from_json_text(ss.str());
}

void save_map_json(const CityMap& map, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write map file: " + path);
  out << map_to_json_text(map) << "\n";
}

}  // namespace uavsearch
