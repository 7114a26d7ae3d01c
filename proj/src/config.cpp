#include "uavsearch/config.hpp"

#include <json.hpp>

#include <fstream>
#include <functional>
#include <sstream>

namespace uavsearch {

namespace {

using json = nlohmann::ordered_json;

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json map_gen_to_json(const ManhattanMapSpec& spec) {
  json j;
  j["seed"] = spec.seed;
  j["width_m"] = spec.width_m;
  j["depth_m"] = spec.depth_m;
  j["cell_size"] = spec.cell_size;
  j["block_m"] = spec.block_m;
  j["street_m"] = spec.street_m;
  j["bcr"] = spec.target_bcr;
  j["height_min"] = spec.height_min;
  j["height_max"] = spec.height_max;
  j["h_min_override"] = spec.h_min_override;
  return j;
}

ManhattanMapSpec map_gen_from_json(const json& j) {
  ManhattanMapSpec spec;
  maybe(j, "seed", spec.seed);
  maybe(j, "width_m", spec.width_m);
  maybe(j, "depth_m", spec.depth_m);
  maybe(j, "cell_size", spec.cell_size);
  maybe(j, "block_m", spec.block_m);
  maybe(j, "street_m", spec.street_m);
  maybe(j, "bcr", spec.target_bcr);
  maybe(j, "height_min", spec.height_min);
  maybe(j, "height_max", spec.height_max);
  maybe(j, "h_min_override", spec.h_min_override);
  return spec;
}

}  // namespace

void RunConfig::validate() const {
  if (trials < 1) throw ConfigError("config: trials must be >= 1");
  if (k_users < 1) throw ConfigError("config: k_users must be >= 1");
  if (map_path.empty() && !map_gen.has_value()) {
    throw ConfigError("config: map requires either a path or a generator spec");
  }
  if (problem != "sumrate" && problem != "balancing") {
    throw ConfigError("config: problem must be 'sumrate' or 'balancing'");
  }
  if (user_objective != "capacity" && user_objective != "snr") {
    throw ConfigError("config: user_objective must be 'capacity' or 'snr'");
  }
  channel.validate();
  search.validate();
}

RunConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  RunConfig c;
  maybe(j, "seed", c.seed);
  maybe(j, "trials", c.trials);
  maybe(j, "workers", c.workers);
  maybe(j, "out_dir", c.out_dir);
  if (j.contains("map")) {
    const json& m = j.at("map");
    if (m.contains("path")) c.map_path = m.at("path").get<std::string>();
    if (m.contains("generate")) c.map_gen = map_gen_from_json(m.at("generate"));
  }
  if (j.contains("scenario")) {
    const json& s = j.at("scenario");
    maybe(s, "k_users", c.k_users);
    maybe(s, "p0_dbm", c.p0_dbm);
    maybe(s, "p_total_dbm", c.p_total_dbm);
    maybe(s, "p0_scales_with_k", c.p0_scales_with_k);
    maybe(s, "problem", c.problem);
    maybe(s, "user_objective", c.user_objective);
    maybe(s, "weights", c.weights);
    maybe(s, "noise_dbm", c.noise_dbm);
    if (s.contains("bs_position")) {
      const auto& b = s.at("bs_position");
      c.bs_position = Vec3(b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>());
    }
  }
  if (j.contains("channel")) {
    const json& ch = j.at("channel");
    maybe(ch, "b0_db", c.channel.b0_db);
    maybe(ch, "a0", c.channel.a0);
    maybe(ch, "nlos_mean_db", c.channel.nlos_mean_db);
    maybe(ch, "nlos_std_db", c.channel.nlos_std_db);
    maybe(ch, "sigma_db", c.channel.sigma_db);
    maybe(ch, "lg", c.channel.lg);
    maybe(ch, "lg2", c.channel.lg2);
  }
  if (j.contains("search")) {
    const json& s = j.at("search");
    maybe(s, "mu_v", c.search.mu_v);
    maybe(s, "dt", c.search.dt);
    maybe(s, "omega", c.search.omega);
    maybe(s, "r_spiral", c.search.r_spiral);
    maybe(s, "tau", c.search.tau);
    maybe(s, "M", c.search.buffer_m);
    maybe(s, "f_tol", c.search.f_tol);
    maybe(s, "max_time", c.search.max_time);
    maybe(s, "max_step", c.search.max_step);
    maybe(s, "ascent_speed", c.search.ascent_speed);
    if (s.contains("v_policy")) {
      const std::string v = s.at("v_policy").get<std::string>();
      if (v == "prev_tangent") {
        c.search.v_policy = VPolicy::PrevTangent;
      } else if (v == "vertical") {
        c.search.v_policy = VPolicy::VerticalDescent;
      } else {
        throw ConfigError("config: v_policy must be 'prev_tangent' or 'vertical'");
      }
    }
  }
  maybe(j, "baselines", c.baselines);
  maybe(j, "lattice_step_m", c.lattice_step_m);
  c.validate();
  return c;
}

std::string config_to_json_text(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["trials"] = c.trials;
  j["workers"] = c.workers;
  j["out_dir"] = c.out_dir;
  json m;
  if (!c.map_path.empty()) m["path"] = c.map_path;
  if (c.map_gen.has_value()) m["generate"] = map_gen_to_json(*c.map_gen);
  j["map"] = std::move(m);
  json s;
  s["k_users"] = c.k_users;
  s["p0_dbm"] = c.p0_dbm;
  s["p_total_dbm"] = c.p_total_dbm;
  s["p0_scales_with_k"] = c.p0_scales_with_k;
  s["problem"] = c.problem;
  s["user_objective"] = c.user_objective;
  s["weights"] = c.weights;
  s["noise_dbm"] = c.noise_dbm;
  if (c.bs_position.has_value()) {
    s["bs_position"] = {c.bs_position->x(), c.bs_position->y(), c.bs_position->z()};
  }
  j["scenario"] = std::move(s);
  json ch;
  ch["b0_db"] = c.channel.b0_db;
  ch["a0"] = c.channel.a0;
  ch["nlos_mean_db"] = c.channel.nlos_mean_db;
  ch["nlos_std_db"] = c.channel.nlos_std_db;
  ch["sigma_db"] = c.channel.sigma_db;
  ch["lg"] = c.channel.lg;
  ch["lg2"] = c.channel.lg2;
  j["channel"] = std::move(ch);
  json se;
  se["mu_v"] = c.search.mu_v;
  se["dt"] = c.search.dt;
  se["omega"] = c.search.omega;
  se["r_spiral"] = c.search.r_spiral;
  se["tau"] = c.search.tau;
  se["M"] = c.search.buffer_m;
  se["f_tol"] = c.search.f_tol;
  se["max_time"] = c.search.max_time;
  se["max_step"] = c.search.max_step;
  se["ascent_speed"] = c.search.ascent_speed;
  se["v_policy"] = c.search.v_policy == VPolicy::PrevTangent ? "prev_tangent" : "vertical";
  j["search"] = std::move(se);
  j["baselines"] = c.baselines;
  j["lattice_step_m"] = c.lattice_step_m;
  return j.dump(2);
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json_text(ss.str());
}

std::uint64_t config_hash(const RunConfig& config) {
  return std::hash<std::string>{}(config_to_json_text(config));
}

namespace {

Vec3 default_bs_position(const CityMap& map) {
  // Above the building nearest the footprint center; center of the map at a
  // default mast height when the map is flat.
  const double cx = map.origin.x() + map.footprint_width() / 2.0;
  const double cy = map.origin.y() + map.footprint_depth() / 2.0;
  double best_d2 = std::numeric_limits<double>::infinity();
  int best_ix = -1, best_iy = -1;
  for (int iy = 0; iy < map.depth; ++iy) {
    for (int ix = 0; ix < map.width; ++ix) {
      if (map.height_at_cell(ix, iy) <= 0.0) continue;
      const double x = map.origin.x() + (ix + 0.5) * map.cell_size;
      const double y = map.origin.y() + (iy + 0.5) * map.cell_size;
      const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
      if (d2 < best_d2) {
        best_d2 = d2;
        best_ix = ix;
        best_iy = iy;
      }
    }
  }
  if (best_ix < 0) return Vec3(cx, cy, 25.0);
  return Vec3(map.origin.x() + (best_ix + 0.5) * map.cell_size,
              map.origin.y() + (best_iy + 0.5) * map.cell_size,
              map.height_at_cell(best_ix, best_iy) + 5.0);
}

}  // namespace

TrialSetup make_trial_setup(const RunConfig& config, int trial_index) {
  config.validate();
  TrialSetup setup;
  setup.map = config.map_path.empty() ? generate_manhattan_map(*config.map_gen)
                                      : load_map_json(config.map_path);
  setup.channel = config.channel;
  setup.search = config.search;

  Scenario& sc = setup.scenario;
  sc.p_total = dbm_to_watt(config.p_total_dbm);
  sc.p0 = config.p0_scales_with_k ? config.k_users * sc.p_total : dbm_to_watt(config.p0_dbm);
  sc.problem_kind = config.problem == "sumrate" ? ProblemKind::SumRate : ProblemKind::Balancing;
  sc.user_objective =
      config.user_objective == "capacity" ? UserObjective::Capacity : UserObjective::Snr;
  sc.weights = config.weights;
  sc.noise_power = dbm_to_watt(config.noise_dbm);
  sc.bs_position = config.bs_position.value_or(default_bs_position(setup.map));

  const std::uint64_t trial_seed = combine_seed(config.seed, static_cast<std::uint64_t>(trial_index));
  setup.channel.nlos_seed = trial_seed;

  // Advance the placement stream until the equipotential surface exists
  // between the probe points above the BS and above the user centroid.
  for (int attempt = 0; attempt < 64; ++attempt) {
    sc.user_positions =
        place_users(setup.map, combine_seed(trial_seed, static_cast<std::uint64_t>(attempt)),
                    config.k_users);
    sc.validate(setup.map);
    const auto probe_gains = [&](const Vec3& x) {
      GainVector g;
      g.g0 = db_to_linear(los_gain_db(setup.channel, x, sc.bs_position)) / sc.noise_power;
      g.gu.resize(sc.num_users());
      for (int k = 1; k <= sc.num_users(); ++k) {
        g.gu(k - 1) =
            db_to_linear(los_gain_db(setup.channel, x, sc.node_position(k))) / sc.noise_power;
      }
      return g;
    };
    Vec3 x0m = sc.bs_position;
    x0m.z() += setup.map.h_min;
    Vec3 xum = sc.user_centroid();
    xum.z() += setup.map.h_min;
    if (existence_check(sc, probe_gains(x0m), probe_gains(xum))) return setup;
  }
  throw ScenarioInfeasibleError(
      "make_trial_setup: no user placement admits an equipotential surface");
}

}  // namespace uavsearch
