#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

namespace uavsearch {

using Vec3 = Eigen::Vector3d;
using Rng = std::mt19937_64;

inline constexpr double kLn10 = 2.302585092994045684;
inline constexpr double kLn2 = 0.6931471805599453094;

/// dB <-> linear power ratio. All channel math is additive in dB; capacity
/// and SNR formulas need linear gains. This pair is the only conversion point.
inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
inline double linear_to_db(double lin) { return 10.0 * std::log10(lin); }

inline double dbm_to_watt(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }
inline double watt_to_dbm(double w) { return 10.0 * std::log10(w) + 30.0; }

/// splitmix64 finalizer; used to derive independent substreams from one seed.
inline std::uint64_t mix_seed(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t combine_seed(std::uint64_t a, std::uint64_t b) {
  return mix_seed(a + 0x9e3779b97f4a7c15ULL * (b + 1));
}

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateGeometryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SingularSystemError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ScenarioInfeasibleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace uavsearch
