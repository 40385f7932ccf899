#pragma once

#include <cstdio>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pfbwd/common.hpp"

namespace pfbwd {

// Uniform planar array; `cols` elements per horizontal row spaced dx
// wavelengths, `rows` vertical levels spaced dy wavelengths.
struct ArrayGeometry {
  int cols = 1;
  int rows = 1;
  double dx_wl = 0.5;
  double dy_wl = 0.5;

  int size() const { return cols * rows; }
};

struct ChannelParams {
  double carrier_hz = 2.545e9;
  double shadow_sigma_db = 8.0;
  double rician_k = 10.0;
  double noise_dbm = -100.0;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

struct Topology {
  double area_side_m = 4000.0;
  std::vector<Point2> mbs_xy;
  std::vector<Point2> ue_xy;
  bool haps_enabled = true;
  Point2 haps_xy;
  double haps_altitude_m = 20000.0;

  int num_mbs() const { return static_cast<int>(mbs_xy.size()); }
  int num_ue() const { return static_cast<int>(ue_xy.size()); }
  // Transmitters are indexed 0..B-1 for MBSs, with the HAPS (when enabled)
  // occupying the last slot B.
  int num_tx() const { return num_mbs() + (haps_enabled ? 1 : 0); }
};

namespace seed_tag {
inline constexpr std::uint64_t kMbsChannel = 0x6d62735f6368616eULL;
inline constexpr std::uint64_t kHapsChannel = 0x686170735f6368ULL;
inline constexpr std::uint64_t kUePlacement = 0x75655f706c616365ULL;
inline constexpr std::uint64_t kMbsPlacement = 0x6d62735f706c6163ULL;
inline constexpr std::uint64_t kRealization = 0x7265616c697a65ULL;
}  // namespace seed_tag

// Free-space path loss (linear power ratio): (4*pi*f*d/c)^2.
inline double fspl(double f_hz, double d_m) {
  if (f_hz <= 0.0) throw std::domain_error("fspl: carrier frequency must be positive");
  if (d_m <= 0.0) throw std::domain_error("fspl: co-located endpoints (d = 0) are not modeled");
  const double x = 4.0 * kPi * f_hz * d_m / kSpeedOfLight;
  return x * x;
}

// Grid placement accepts counts with a near-square factorization r x c
// (r <= c <= 2r); row-major centers, x varying fastest. Counts without such
// a factorization (e.g. primes >= 3) require random placement.
inline bool grid_supported(int b) {
  if (b <= 0) return false;
  int r = static_cast<int>(std::sqrt(static_cast<double>(b)));
  while (r > 1 && b % r != 0) --r;
  const int c = b / r;
  return c <= 2 * r;
}

inline Topology place_network(std::uint64_t seed, int num_mbs, int num_ue,
                              double area_side_m = 4000.0,
                              double haps_altitude_m = 20000.0,
                              bool haps_enabled = true,
                              bool random_mbs = false) {
  if (num_ue <= 0) throw std::invalid_argument("place_network: need at least one UE");
  if (num_mbs < 0) throw std::invalid_argument("place_network: negative MBS count");
  if (num_mbs == 0 && !haps_enabled)
    throw std::invalid_argument("place_network: no transmitters (B = 0 and HAPS disabled)");
  if (area_side_m <= 0.0) throw std::invalid_argument("place_network: area side must be positive");

  Topology topo;
  topo.area_side_m = area_side_m;
  topo.haps_enabled = haps_enabled;
  topo.haps_xy = {area_side_m / 2.0, area_side_m / 2.0};
  topo.haps_altitude_m = haps_altitude_m;

  if (num_mbs > 0) {
    if (random_mbs) {
      std::mt19937_64 rng(derive_seed(seed, seed_tag::kMbsPlacement));
      for (int b = 0; b < num_mbs; ++b) {
        const double x = uniform01(rng) * area_side_m;
        const double y = uniform01(rng) * area_side_m;
        topo.mbs_xy.push_back({x, y});
      }
    } else {
      if (!grid_supported(num_mbs))
        throw std::invalid_argument(
            "place_network: MBS count has no near-square grid factorization; "
            "use random placement");
      int r = static_cast<int>(std::sqrt(static_cast<double>(num_mbs)));
      while (r > 1 && num_mbs % r != 0) --r;
      const int c = num_mbs / r;
      const double wx = area_side_m / c;
      const double wy = area_side_m / r;
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
          topo.mbs_xy.push_back({(j + 0.5) * wx, (i + 0.5) * wy});
    }
  }

  std::mt19937_64 rng(derive_seed(seed, seed_tag::kUePlacement));
  for (int u = 0; u < num_ue; ++u) {
    const double x = uniform01(rng) * area_side_m;
    const double y = uniform01(rng) * area_side_m;
    topo.ue_xy.push_back({x, y});
  }
  return topo;
}

inline double mbs_ue_distance(const Topology& topo, int b, int u) {
  const double dx = topo.mbs_xy.at(b).x - topo.ue_xy.at(u).x;
  const double dy = topo.mbs_xy.at(b).y - topo.ue_xy.at(u).y;
  return std::hypot(dx, dy);
}

inline double haps_ue_distance(const Topology& topo, int u) {
  const double dx = topo.haps_xy.x - topo.ue_xy.at(u).x;
  const double dy = topo.haps_xy.y - topo.ue_xy.at(u).y;
  return std::sqrt(dx * dx + dy * dy + topo.haps_altitude_m * topo.haps_altitude_m);
}

struct HapsAngles {
  double theta;  // elevation measured from the horizontal plane; nadir = pi/2
  double phi;    // azimuth from the array x-axis, in [-pi, pi)
};

inline HapsAngles haps_angles(const Topology& topo, int u) {
  const double dx = topo.ue_xy.at(u).x - topo.haps_xy.x;
  const double dy = topo.ue_xy.at(u).y - topo.haps_xy.y;
  const double horiz = std::hypot(dx, dy);
  HapsAngles a;
  a.theta = std::atan2(topo.haps_altitude_m, horiz);
  a.phi = (horiz == 0.0) ? 0.0 : std::atan2(dy, dx);
  if (a.phi >= kPi) a.phi -= 2.0 * kPi;
  return a;
}

// UPA steering vector kron(a, b): a over the horizontal axis with phase
// increment dx*cos(theta)*sin(phi), b over the vertical axis with increment
// dy*cos(theta)*cos(phi). Every entry has unit modulus.
inline CVec haps_steering(double theta, double phi, const ArrayGeometry& geom) {
  const double dh = geom.dx_wl * std::cos(theta) * std::sin(phi);
  const double dv = geom.dy_wl * std::cos(theta) * std::cos(phi);
  CVec a(geom.cols), b(geom.rows);
  for (int n = 0; n < geom.cols; ++n)
    a(n) = std::polar(1.0, 2.0 * kPi * n * dh);
  for (int m = 0; m < geom.rows; ++m)
    b(m) = std::polar(1.0, 2.0 * kPi * m * dv);
  CVec v(geom.cols * geom.rows);
  for (int n = 0; n < geom.cols; ++n)
    for (int m = 0; m < geom.rows; ++m)
      v(n * geom.rows + m) = a(n) * b(m);
  return v;
}

// Rayleigh-faded MBS link: per-element small-scale CN(0,1), one lognormal
// shadowing draw per (b,u) applied to the amplitude, free-space path loss.
// Draw order per UE: shadowing first, then antenna elements in order.
inline CMat mbs_channel(std::uint64_t seed, const Topology& topo,
                        const ArrayGeometry& geom, int b,
                        const ChannelParams& params) {
  const int n = geom.size();
  const int num_ue = topo.num_ue();
  CMat h(n, num_ue);
  std::mt19937_64 rng(derive_seed(seed, seed_tag::kMbsChannel, static_cast<std::uint64_t>(b)));
  for (int u = 0; u < num_ue; ++u) {
    const double xi_db = params.shadow_sigma_db * gaussian(rng);
    const double xi = std::pow(10.0, xi_db / 10.0);
    const double pl = fspl(params.carrier_hz, mbs_ue_distance(topo, b, u));
    const double scale = xi / std::sqrt(pl);
    for (int r = 0; r < n; ++r) h(r, u) = complex_normal(rng) * scale;
  }
  return h;
}

// Rician HAPS link: deterministic LoS steering component plus CN(0,1) NLoS
// scatter, mixed with factor K, over free-space path loss.
inline CMat haps_channel(std::uint64_t seed, const Topology& topo,
                         const ArrayGeometry& geom, const ChannelParams& params) {
  const int n = geom.size();
  const int num_ue = topo.num_ue();
  const double k = params.rician_k;
  const double w_los = std::sqrt(k / (1.0 + k));
  const double w_nlos = std::sqrt(1.0 / (1.0 + k));
  CMat h(n, num_ue);
  std::mt19937_64 rng(derive_seed(seed, seed_tag::kHapsChannel));
  for (int u = 0; u < num_ue; ++u) {
    const HapsAngles ang = haps_angles(topo, u);
    const CVec los = haps_steering(ang.theta, ang.phi, geom);
    const double pl = fspl(params.carrier_hz, haps_ue_distance(topo, u));
    const double scale = 1.0 / std::sqrt(pl);
    for (int r = 0; r < n; ++r)
      h(r, u) = (w_nlos * complex_normal(rng) + w_los * los(r)) * scale;
  }
  return h;
}

// Channels for every transmitter of one realization; H[b] is N_b x U.
struct ChannelSet {
  std::vector<CMat> H;
  double noise_variance_w = 0.0;

  int num_tx() const { return static_cast<int>(H.size()); }
  int num_ue() const { return H.empty() ? 0 : static_cast<int>(H[0].cols()); }
};

inline ChannelSet build_channels(std::uint64_t seed, const Topology& topo,
                                 const ArrayGeometry& mbs_geom,
                                 const ArrayGeometry& haps_geom,
                                 const ChannelParams& params) {
  ChannelSet cs;
  for (int b = 0; b < topo.num_mbs(); ++b)
    cs.H.push_back(mbs_channel(seed, topo, mbs_geom, b, params));
  if (topo.haps_enabled)
    cs.H.push_back(haps_channel(seed, topo, haps_geom, params));
  cs.noise_variance_w = dbm_to_watt(params.noise_dbm);
  return cs;
}

// Flat CSV, one row per coefficient: b, r, u, Re, Im.
inline void dump_channels(std::ostream& os, const ChannelSet& cs) {
  os << "b,r,u,re,im\n";
  char buf[128];
  for (int b = 0; b < cs.num_tx(); ++b) {
    const CMat& h = cs.H[b];
    for (int r = 0; r < h.rows(); ++r)
      for (int u = 0; u < h.cols(); ++u) {
        std::snprintf(buf, sizeof(buf), "%d,%d,%d,%.17g,%.17g\n", b, r, u,
                      h(r, u).real(), h(r, u).imag());
        os << buf;
      }
  }
}

inline std::vector<CMat> load_channels(std::istream& is) {
  std::string line;
  std::getline(is, line);  // header
  struct Entry {
    int b, r, u;
    double re, im;
  };
  std::vector<Entry> entries;
  int max_b = -1, max_r = -1, max_u = -1;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    Entry e;
    if (std::sscanf(line.c_str(), "%d,%d,%d,%lg,%lg", &e.b, &e.r, &e.u, &e.re,
                    &e.im) != 5)
      throw std::runtime_error("load_channels: malformed row: " + line);
    max_b = std::max(max_b, e.b);
    max_r = std::max(max_r, e.r);
    max_u = std::max(max_u, e.u);
    entries.push_back(e);
  }
  std::vector<CMat> out;
  // Rows per transmitter are inferred from the largest row index seen.
  std::vector<int> rows(static_cast<std::size_t>(max_b + 1), 0);
  for (const Entry& e : entries)
    rows[e.b] = std::max(rows[e.b], e.r + 1);
  for (int b = 0; b <= max_b; ++b)
    out.emplace_back(CMat::Zero(rows[b], max_u + 1));
  for (const Entry& e : entries) out[e.b](e.r, e.u) = cplx(e.re, e.im);
  return out;
}

}  // namespace pfbwd
