#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <cstdint>
#include <random>

namespace pfbwd {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;
using cplx = std::complex<double>;

inline constexpr double kSpeedOfLight = 299792458.0;  // m/s
inline constexpr double kPi = 3.14159265358979323846;

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
inline double linear_to_db(double lin) { return 10.0 * std::log10(lin); }
inline double dbm_to_watt(double dbm) { return std::pow(10.0, dbm / 10.0) / 1000.0; }

// splitmix64 finalizer; used to derive independent substream seeds so that
// adding a draw site never perturbs the streams of unrelated sites.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag,
                                 std::uint64_t idx = 0) {
  return mix64(mix64(master ^ tag) + idx);
}

// Uniform in [0,1) with 53 bits, independent of std library distribution
// internals so streams are reproducible across standard libraries.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double gaussian(std::mt19937_64& rng) {
  // Box-Muller; first draw guarded away from 0.
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
}

// Circularly symmetric complex normal with E|x|^2 = 1.
inline cplx complex_normal(std::mt19937_64& rng) {
  const double re = gaussian(rng);
  const double im = gaussian(rng);
  return {re / std::sqrt(2.0), im / std::sqrt(2.0)};
}

}  // namespace pfbwd
