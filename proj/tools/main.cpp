#include "uavsearch/runner.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <string>
#include <vector>

namespace {

uavsearch::RunConfig load_or_default(const std::string& config_path) {
  if (!config_path.empty()) return uavsearch::load_config(config_path);
  uavsearch::RunConfig config;
  uavsearch::ManhattanMapSpec spec;
  config.map_gen = spec;
  return config;
}

void apply_overrides(uavsearch::RunConfig& config, const std::string& out_dir, long seed,
                     int trials, int workers, const std::string& map_path) {
  if (!out_dir.empty()) config.out_dir = out_dir;
  if (seed >= 0) config.seed = static_cast<std::uint64_t>(seed);
  if (trials > 0) config.trials = trials;
  if (workers > 0) config.workers = workers;
  if (!map_path.empty()) {
    config.map_path = map_path;
    config.map_gen.reset();
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UAV placement search over 3D city maps"};
  app.require_subcommand(1);

  std::string config_path, out_dir, map_path, axis;
  long seed = -1;
  int trials = 0, workers = 0;
  std::vector<double> sweep_values;

  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run config JSON");
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--seed", seed, "base seed");
    cmd->add_option("--trials", trials, "trial count");
    cmd->add_option("--workers", workers, "worker threads");
    cmd->add_option("--map", map_path, "map file (overrides the config's map source)");
  };

  CLI::App* run = app.add_subcommand("run", "run the proposed search over trials");
  add_common(run);

  CLI::App* sweep = app.add_subcommand("sweep", "summary per axis value");
  add_common(sweep);
  sweep->add_option("--axis", axis, "p_total | K | M | r_spiral")->required();
  sweep->add_option("--values", sweep_values, "axis values")->required()->expected(-1);

  CLI::App* baseline = app.add_subcommand("baseline", "head-to-head baseline comparison");
  add_common(baseline);

  CLI::App* bench = app.add_subcommand("estimate-bench", "channel-construction benches");
  add_common(bench);

  CLI::App* mapgen = app.add_subcommand("map-gen", "generate a synthetic city map");
  uavsearch::ManhattanMapSpec spec;
  std::string map_out = "map.json";
  mapgen->add_option("--seed", spec.seed, "generator seed");
  mapgen->add_option("--width", spec.width_m, "footprint width [m]");
  mapgen->add_option("--depth", spec.depth_m, "footprint depth [m]");
  mapgen->add_option("--cell", spec.cell_size, "cell size [m]");
  mapgen->add_option("--block", spec.block_m, "block edge [m]");
  mapgen->add_option("--street", spec.street_m, "street width [m]");
  mapgen->add_option("--bcr", spec.target_bcr, "target building coverage ratio");
  mapgen->add_option("--height-min", spec.height_min, "min building height [m]");
  mapgen->add_option("--height-max", spec.height_max, "max building height [m]");
  mapgen->add_option("--h-min", spec.h_min_override, "override minimum flight altitude [m]");
  mapgen->add_option("--map", map_out, "output map path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (mapgen->parsed()) return uavsearch::cmd_map_gen(spec, map_out);
    uavsearch::RunConfig config = load_or_default(config_path);
    apply_overrides(config, out_dir, seed, trials, workers, map_path);
    if (run->parsed()) return uavsearch::cmd_run(config);
    if (sweep->parsed()) return uavsearch::cmd_sweep(config, axis, sweep_values);
    if (baseline->parsed()) return uavsearch::cmd_baseline(config);
    if (bench->parsed()) return uavsearch::cmd_estimate_bench(config);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
