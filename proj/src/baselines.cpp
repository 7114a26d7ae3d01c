#include "uavsearch/baselines.hpp"

#include <algorithm>
#include <chrono>
#include <thread>

namespace uavsearch {

namespace {

struct LatticeSpec {
  double x0, y0, z0;
  int nx, ny, nz;
  double step;
};

LatticeSpec make_lattice(const CityMap& map, double step, double z_lo, double z_hi) {
  LatticeSpec lat;
  lat.step = step;
  lat.x0 = map.origin.x();
  lat.y0 = map.origin.y();
  lat.z0 = z_lo;
  lat.nx = static_cast<int>(std::floor(map.footprint_width() / step)) + 1;
  lat.ny = static_cast<int>(std::floor(map.footprint_depth() / step)) + 1;
  lat.nz = std::max(1, static_cast<int>(std::floor((z_hi - z_lo) / step)) + 1);
  return lat;
}

bool lex_less(const Vec3& a, const Vec3& b) {
  if (a.x() != b.x()) return a.x() < b.x();
  if (a.y() != b.y()) return a.y() < b.y();
  return a.z() < b.z();
}

struct Candidate {
  double value = -std::numeric_limits<double>::infinity();
  Vec3 x = Vec3::Zero();
};

void merge(Candidate& best, const Candidate& other) {
  if (other.value > best.value ||
      (other.value == best.value && std::isfinite(other.value) && lex_less(other.x, best.x))) {
    best = other;
  }
}

/// Max over the lattice of `value(x)`, chunked by x-slab across threads.
/// Deterministic regardless of chunking: every point is scored independently
/// and ties break lexicographically.
template <typename F>
Candidate scan_lattice(const LatticeSpec& lat, int workers, F&& value) {
  const int threads = std::max(1, workers);
  std::vector<Candidate> results(static_cast<std::size_t>(threads));
  std::vector<std::thread> pool;
  const int chunk = (lat.nx + threads - 1) / threads;
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&, w]() {
      Candidate local;
      const int ix_end = std::min(lat.nx, (w + 1) * chunk);
      for (int ix = w * chunk; ix < ix_end; ++ix) {
        for (int iy = 0; iy < lat.ny; ++iy) {
          for (int iz = 0; iz < lat.nz; ++iz) {
            const Vec3 x(lat.x0 + ix * lat.step, lat.y0 + iy * lat.step, lat.z0 + iz * lat.step);
            merge(local, {value(x), x});
          }
        }
      }
      results[static_cast<std::size_t>(w)] = local;
    });
  }
  for (auto& th : pool) th.join();
  Candidate best;
  for (const Candidate& c : results) merge(best, c);
  return best;
}

double lattice_length_proxy(const LatticeSpec& lat) {
  return static_cast<double>(lat.nx) * lat.ny * lat.nz * lat.step;
}

}  // namespace

EvaluationResult exhaustive_3d(const CityMap& map, const Scenario& scenario,
                               const ChannelParams& channel, double step, int workers) {
  if (!(step > 0.0)) throw ConfigError("exhaustive_3d: step must be > 0");
  const auto t0 = std::chrono::steady_clock::now();
  const double ceiling = std::max(map.max_building_height(), map.h_min) + 250.0;
  const LatticeSpec lat = make_lattice(map, step, map.h_min, ceiling);
  const Candidate best = scan_lattice(lat, workers, [&](const Vec3& x) {
    return evaluate_objective(map, scenario, channel, x);
  });
  EvaluationResult res;
  res.scheme = "exh3d";
  res.best_x = best.x;
  res.objective = best.value;
  res.evaluations = static_cast<long>(lat.nx) * lat.ny * lat.nz;
  res.trajectory_length = lattice_length_proxy(lat);
  res.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

EvaluationResult exhaustive_2d(const CityMap& map, const Scenario& scenario,
                               const ChannelParams& channel, double step, int workers) {
  if (!(step > 0.0)) throw ConfigError("exhaustive_2d: step must be > 0");
  const auto t0 = std::chrono::steady_clock::now();
  const double altitude = map.h_min + 50.0;
  LatticeSpec lat = make_lattice(map, step, altitude, altitude);
  lat.nz = 1;
  const Candidate best = scan_lattice(lat, workers, [&](const Vec3& x) {
    return evaluate_objective(map, scenario, channel, x);
  });
  EvaluationResult res;
  res.scheme = "exh2d";
  res.best_x = best.x;
  res.objective = best.value;
  res.evaluations = static_cast<long>(lat.nx) * lat.ny;
  res.trajectory_length = lattice_length_proxy(lat);
  res.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

LosProbabilityFit fit_los_probability(const CityMap& map, const Scenario& scenario, int n_samples,
                                      Rng& rng) {
  if (n_samples < 1000) throw ConfigError("fit_los_probability: needs >= 1000 samples");
  const double ceiling = std::max(map.max_building_height(), map.h_min) + 250.0;
  std::uniform_real_distribution<double> ux(map.origin.x(), map.origin.x() + map.footprint_width());
  std::uniform_real_distribution<double> uy(map.origin.y(), map.origin.y() + map.footprint_depth());
  std::uniform_real_distribution<double> uz(map.h_min, ceiling);
  std::uniform_int_distribution<int> unode(0, scenario.num_users());

  constexpr int kBins = 30;
  std::vector<double> los_count(kBins, 0.0), total(kBins, 0.0);
  for (int i = 0; i < n_samples; ++i) {
    const Vec3 x(ux(rng), uy(rng), uz(rng));
    const Vec3 u = scenario.node_position(unode(rng));
    const double horiz = std::hypot(x.x() - u.x(), x.y() - u.y());
    const double elev = std::atan2(x.z() - u.z(), std::max(horiz, 1e-9));
    const int bin = std::clamp(static_cast<int>(elev / (M_PI / 2.0) * kBins), 0, kBins - 1);
    total[static_cast<std::size_t>(bin)] += 1.0;
    if (los_indicator(map, x, u)) los_count[static_cast<std::size_t>(bin)] += 1.0;
  }

  std::vector<double> angle, freq, weight;
  double all_los = 0.0, all_total = 0.0;
  for (int b = 0; b < kBins; ++b) {
    if (total[static_cast<std::size_t>(b)] == 0.0) continue;
    angle.push_back((b + 0.5) * (M_PI / 2.0) / kBins);
    freq.push_back(los_count[static_cast<std::size_t>(b)] / total[static_cast<std::size_t>(b)]);
    weight.push_back(total[static_cast<std::size_t>(b)]);
    all_los += los_count[static_cast<std::size_t>(b)];
    all_total += total[static_cast<std::size_t>(b)];
  }

  LosProbabilityFit fit;
  const double overall = all_los / all_total;
  if (overall > 0.999 || overall < 0.001) {
    // Degenerate map: clamp to a flat curve at the observed frequency.
    fit.flat_fit = true;
    fit.a_e = overall > 0.5 ? 1e-4 : 1e4;
    fit.b_e = 1e-3;
    fit.rmse = 0.0;
    return fit;
  }

  const auto cost = [&](double a, double b) {
    double s = 0.0, wsum = 0.0;
    LosProbabilityFit trial{a, b, 0.0, false};
    for (std::size_t i = 0; i < angle.size(); ++i) {
      const double d = trial.p_los(angle[i]) - freq[i];
      s += weight[i] * d * d;
      wsum += weight[i];
    }
    return s / wsum;
  };

  // Coarse grid then local pattern refinement; the surface is smooth and the
  // problem is 2D, so this is both robust and deterministic.
  double best_a = 1.0, best_b = 1.0, best_c = std::numeric_limits<double>::infinity();
  for (int ia = 0; ia < 40; ++ia) {
    const double a = 0.02 + ia * 0.05;  // angle offset [rad-ish units]
    for (int ib = 0; ib < 40; ++ib) {
      const double b = std::pow(10.0, -1.0 + ib * 0.075);
      const double c = cost(a, b);
      if (c < best_c) {
        best_c = c;
        best_a = a;
        best_b = b;
      }
    }
  }
  double sa = 0.02, sb = 0.25;
  for (int it = 0; it < 60; ++it) {
    bool improved = false;
    for (const auto& [da, db] : {std::pair{sa, 0.0}, {-sa, 0.0}, {0.0, sb}, {0.0, -sb}}) {
      const double a = best_a + da;
      const double b = best_b * (1.0 + db);
      if (a <= 0.0 || b <= 0.0) continue;
      const double c = cost(a, b);
      if (c < best_c) {
        best_c = c;
        best_a = a;
        best_b = b;
        improved = true;
      }
    }
    if (!improved) {
      sa *= 0.5;
      sb *= 0.5;
    }
  }
  fit.a_e = best_a;
  fit.b_e = best_b;
  fit.rmse = std::sqrt(best_c);
  return fit;
}

EvaluationResult statistical_geometry(const CityMap& map, const Scenario& scenario,
                                      const ChannelParams& channel, double step,
                                      const LosProbabilityFit& fit, int workers) {
  if (!(step > 0.0)) throw ConfigError("statistical_geometry: step must be > 0");
  const auto t0 = std::chrono::steady_clock::now();
  const double ceiling = std::max(map.max_building_height(), map.h_min) + 250.0;
  const LatticeSpec lat = make_lattice(map, step, map.h_min, ceiling);

  // Expected-gain objective: each link's dB gain shifted by (1 - P_L) * phi.
  const auto expected_value = [&](const Vec3& x) {
    GainVector gains;
    gains.gu.resize(scenario.num_users());
    for (int node = 0; node <= scenario.num_users(); ++node) {
      const Vec3 u = scenario.node_position(node);
      const double horiz = std::hypot(x.x() - u.x(), x.y() - u.y());
      const double elev = std::atan2(x.z() - u.z(), std::max(horiz, 1e-9));
      const double pl = fit.p_los(elev);
      const double g_db = los_gain_db(channel, x, u) + (1.0 - pl) * channel.nlos_mean_db;
      const double lin = db_to_linear(g_db) / scenario.noise_power;
      if (node == 0) {
        gains.g0 = lin;
      } else {
        gains.gu(node - 1) = lin;
      }
    }
    const AllocationResult alloc = allocate(gains, scenario);
    return std::min(objective_f0(gains.g0, scenario.p0), alloc.fu_value);
  };

  const Candidate best = scan_lattice(lat, workers, expected_value);
  EvaluationResult res;
  res.scheme = "statis";
  res.best_x = best.x;
  // Actual performance of the chosen position under true LOS gating.
  res.objective = evaluate_objective(map, scenario, channel, best.x);
  res.evaluations = static_cast<long>(lat.nx) * lat.ny * lat.nz;
  res.trajectory_length = lattice_length_proxy(lat);
  res.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

EvaluationResult genius_aided(const CityMap& map, const Scenario& scenario,
                              const ChannelParams& channel, const SearchConfig& config, Rng& rng) {
  SearchConfig genius = config;
  genius.model_source = ModelSource::Exact;
  genius.r_spiral = 0.0;
  const auto t0 = std::chrono::steady_clock::now();
  const SearchResult sr = run_search(map, scenario, channel, genius, rng);
  EvaluationResult res;
  res.scheme = "genius";
  res.best_x = sr.best_x;
  res.objective = sr.best_value;
  res.trajectory_length = sr.trajectory_length;
  res.length_at_convergence = sr.length_at_convergence;
  res.convergence_time = sr.convergence_time;
  res.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

EvaluationResult proposed_scheme(const CityMap& map, const Scenario& scenario,
                                 const ChannelParams& channel, const SearchConfig& config, Rng& rng,
                                 TrajectoryLog* log) {
  const auto t0 = std::chrono::steady_clock::now();
  SearchResult sr = run_search(map, scenario, channel, config, rng);
  EvaluationResult res;
  res.scheme = "proposed";
  res.best_x = sr.best_x;
  res.objective = sr.best_value;
  res.trajectory_length = sr.trajectory_length;
  res.length_at_convergence = sr.length_at_convergence;
  res.convergence_time = sr.convergence_time;
  res.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (log) *log = std::move(sr.log);
  return res;
}

}  // namespace uavsearch
