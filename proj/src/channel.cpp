#include "uavsearch/channel.hpp"

namespace uavsearch {

double los_gain_db(const ChannelParams& params, const Vec3& x, const Vec3& u) {
  const double d = (x - u).norm();
  if (d <= 0.0) throw std::domain_error("los_gain_db: zero distance singularity");
  return params.b0_db + 10.0 * params.a0 * std::log10(d);
}

Vec3 los_gain_gradient_db(const ChannelParams& params, const Vec3& x, const Vec3& u) {
  const Vec3 r = x - u;
  const double d2 = r.squaredNorm();
  if (d2 <= 0.0) throw std::domain_error("los_gain_gradient_db: zero distance singularity");
  // d/dx [10 a0 log10 |x-u|] = (10 a0 / ln10) (x-u)/|x-u|^2
  return (10.0 * params.a0 / kLn10 / d2) * r;
}

namespace {

std::uint64_t position_hash(const Vec3& x, int node_id) {
  // Quantize to 0.25 m so repeated queries at one position agree exactly.
  const auto q = [](double v) {
    return static_cast<std::uint64_t>(static_cast<std::int64_t>(std::llround(v * 4.0)));
  };
  std::uint64_t h = 0x51ed2701ab0cd9f3ULL + static_cast<std::uint64_t>(node_id);
  h = combine_seed(h, q(x.x()));
  h = combine_seed(h, q(x.y()));
  h = combine_seed(h, q(x.z()));
  return h;
}

}  // namespace

double true_gain_db(const ChannelParams& params, const CityMap& map, const Vec3& x, const Vec3& u) {
  const double g = los_gain_db(params, x, u);
  if (los_indicator(map, x, u)) return g;
  double penalty = params.nlos_mean_db;
  if (params.nlos_std_db > 0.0) {
    Rng field(combine_seed(params.nlos_seed, position_hash(x, 0)));
    std::normal_distribution<double> dist(params.nlos_mean_db, params.nlos_std_db);
    penalty = dist(field);
  }
  return g + penalty;
}

Measurement measure(const ChannelParams& params, const CityMap& map, const Vec3& x,
                    const Scenario& scenario, int node_id, double time_s, Rng& rng) {
  const Vec3 u = scenario.node_position(node_id);
  Measurement m;
  m.position = x;
  m.node_id = node_id;
  m.is_los = los_indicator(map, x, u);
  m.time_s = time_s;
  double y = true_gain_db(params, map, x, u);
  if (params.sigma_db > 0.0) {
    std::normal_distribution<double> noise(0.0, params.sigma_db);
    y += noise(rng);
  }
  m.y_db = y;
  return m;
}

double objective_f0(double g0_linear, double p0) {
  if (!(g0_linear > 0.0)) throw std::domain_error("objective_f0: gain must be > 0");
  return std::log2(1.0 + p0 * g0_linear);
}

double objective_fk(double gk_linear, double pk, UserObjective kind, double weight) {
  if (!(gk_linear > 0.0)) throw std::domain_error("objective_fk: gain must be > 0");
  if (pk < 0.0) throw std::domain_error("objective_fk: power must be >= 0");
  switch (kind) {
    case UserObjective::Snr:
      return weight * pk * gk_linear;
    case UserObjective::Capacity:
      return weight * std::log2(1.0 + pk * gk_linear);
  }
  return 0.0;
}

}  // namespace uavsearch
