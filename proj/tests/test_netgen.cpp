#include <gtest/gtest.h>

#include <sstream>

#include "pfbwd/netgen.hpp"

namespace pfbwd {
namespace {

// Independently computed with c = 299792458 m/s:
// (4*pi*2.545e9*20000/c)^2 = 4.552121936356e12 (126.582139 dB).
constexpr double kFspl2545MHz20km = 4.552121936356e12;

TEST(Fspl, FrozenReferencePoint) {
  const double pl = fspl(2.545e9, 20000.0);
  EXPECT_NEAR(pl / kFspl2545MHz20km, 1.0, 1e-10);
  EXPECT_NEAR(linear_to_db(pl), 126.582139, 1e-4);
}

TEST(Fspl, SquareLaws) {
  const double base = fspl(1e9, 100.0);
  EXPECT_NEAR(fspl(1e9, 200.0) / base, 4.0, 1e-12);
  EXPECT_NEAR(fspl(2e9, 100.0) / base, 4.0, 1e-12);
  EXPECT_NEAR(fspl(1e9, 1.0), 1.757026542416e3, 1e-8);
}

TEST(Fspl, SymmetricInEndpoints) {
  Topology topo = place_network(7, 1, 2);
  // Distance is a metric; loss depends on the pair only.
  const double d = mbs_ue_distance(topo, 0, 1);
  const double dx = topo.ue_xy[1].x - topo.mbs_xy[0].x;
  const double dy = topo.ue_xy[1].y - topo.mbs_xy[0].y;
  EXPECT_DOUBLE_EQ(d, std::hypot(dx, dy));
  EXPECT_DOUBLE_EQ(fspl(2e9, d), fspl(2e9, std::hypot(-dx, -dy)));
}

TEST(Fspl, DomainErrors) {
  EXPECT_THROW(fspl(2e9, 0.0), std::domain_error);
  EXPECT_THROW(fspl(0.0, 10.0), std::domain_error);
}

TEST(PlaceNetwork, QuadrantCentersForFourMbs) {
  Topology topo = place_network(1, 4, 8, 4000.0);
  ASSERT_EQ(topo.num_mbs(), 4);
  EXPECT_DOUBLE_EQ(topo.mbs_xy[0].x, 1000.0);
  EXPECT_DOUBLE_EQ(topo.mbs_xy[0].y, 1000.0);
  EXPECT_DOUBLE_EQ(topo.mbs_xy[1].x, 3000.0);
  EXPECT_DOUBLE_EQ(topo.mbs_xy[1].y, 1000.0);
  EXPECT_DOUBLE_EQ(topo.mbs_xy[2].x, 1000.0);
  EXPECT_DOUBLE_EQ(topo.mbs_xy[2].y, 3000.0);
  EXPECT_DOUBLE_EQ(topo.mbs_xy[3].x, 3000.0);
  EXPECT_DOUBLE_EQ(topo.mbs_xy[3].y, 3000.0);
  EXPECT_DOUBLE_EQ(topo.haps_xy.x, 2000.0);
  EXPECT_DOUBLE_EQ(topo.haps_xy.y, 2000.0);
}

TEST(PlaceNetwork, TwoMbsRowGrid) {
  Topology topo = place_network(1, 2, 4, 4000.0);
  ASSERT_EQ(topo.num_mbs(), 2);
  EXPECT_DOUBLE_EQ(topo.mbs_xy[0].x, 1000.0);
  EXPECT_DOUBLE_EQ(topo.mbs_xy[0].y, 2000.0);
  EXPECT_DOUBLE_EQ(topo.mbs_xy[1].x, 3000.0);
  EXPECT_DOUBLE_EQ(topo.mbs_xy[1].y, 2000.0);
}

TEST(PlaceNetwork, RejectsNonGridCountsUnlessRandom) {
  EXPECT_THROW(place_network(1, 3, 4), std::invalid_argument);
  EXPECT_THROW(place_network(1, 5, 4), std::invalid_argument);
  Topology topo = place_network(1, 3, 4, 4000.0, 20000.0, true, /*random_mbs=*/true);
  EXPECT_EQ(topo.num_mbs(), 3);
  for (const Point2& p : topo.mbs_xy) {
    EXPECT_GE(p.x, 0.0);
    EXPECT_LE(p.x, 4000.0);
    EXPECT_GE(p.y, 0.0);
    EXPECT_LE(p.y, 4000.0);
  }
}

TEST(PlaceNetwork, HapsOnlyAndDegenerateCases) {
  Topology topo = place_network(1, 0, 4);
  EXPECT_EQ(topo.num_tx(), 1);
  EXPECT_TRUE(topo.haps_enabled);
  EXPECT_THROW(place_network(1, 0, 4, 4000.0, 20000.0, /*haps=*/false),
               std::invalid_argument);
  EXPECT_THROW(place_network(1, 2, 0), std::invalid_argument);
}

TEST(PlaceNetwork, SeededDeterminismAndBounds) {
  Topology a = place_network(42, 2, 16);
  Topology b = place_network(42, 2, 16);
  Topology c = place_network(43, 2, 16);
  ASSERT_EQ(a.num_ue(), 16);
  bool any_diff = false;
  for (int u = 0; u < 16; ++u) {
    EXPECT_DOUBLE_EQ(a.ue_xy[u].x, b.ue_xy[u].x);
    EXPECT_DOUBLE_EQ(a.ue_xy[u].y, b.ue_xy[u].y);
    EXPECT_GE(a.ue_xy[u].x, 0.0);
    EXPECT_LE(a.ue_xy[u].x, 4000.0);
    any_diff |= a.ue_xy[u].x != c.ue_xy[u].x;
  }
  EXPECT_TRUE(any_diff);
}

TEST(HapsAngles, NadirAndCardinalDirections) {
  Topology topo = place_network(1, 0, 1);
  topo.ue_xy[0] = topo.haps_xy;  // directly under the platform
  HapsAngles a = haps_angles(topo, 0);
  EXPECT_DOUBLE_EQ(a.theta, kPi / 2.0);
  EXPECT_DOUBLE_EQ(a.phi, 0.0);

  topo.ue_xy[0] = {topo.haps_xy.x + 20000.0, topo.haps_xy.y};  // due +x, 45 deg down
  a = haps_angles(topo, 0);
  EXPECT_NEAR(a.theta, kPi / 4.0, 1e-12);
  EXPECT_NEAR(a.phi, 0.0, 1e-12);

  topo.ue_xy[0] = {topo.haps_xy.x, topo.haps_xy.y + 5000.0};  // due +y
  a = haps_angles(topo, 0);
  EXPECT_NEAR(a.phi, kPi / 2.0, 1e-12);
}

TEST(HapsSteering, HandComputedTwoByTwo) {
  // theta = 0, phi = pi/2 with half-wavelength spacing: horizontal phase
  // increment 0.5 (half turn), vertical increment 0.
  ArrayGeometry geom{2, 2, 0.5, 0.5};
  CVec v = haps_steering(0.0, kPi / 2.0, geom);
  ASSERT_EQ(v.size(), 4);
  EXPECT_NEAR(std::abs(v(0) - cplx(1, 0)), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(v(1) - cplx(1, 0)), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(v(2) - cplx(-1, 0)), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(v(3) - cplx(-1, 0)), 0.0, 1e-12);
}

TEST(HapsSteering, NadirIsAllOnes) {
  ArrayGeometry geom{4, 4, 0.5, 0.5};
  CVec v = haps_steering(kPi / 2.0, 0.123, geom);
  for (int i = 0; i < v.size(); ++i)
    EXPECT_NEAR(std::abs(v(i) - cplx(1, 0)), 0.0, 1e-12);
}

TEST(HapsSteering, UnitModulusOverAngleGrid) {
  ArrayGeometry geom{8, 8, 0.5, 0.5};
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const double theta = uniform01(rng) * kPi / 2.0;
    const double phi = (uniform01(rng) * 2.0 - 1.0) * kPi;
    CVec v = haps_steering(theta, phi, geom);
    EXPECT_NEAR(std::abs(v(0) - cplx(1, 0)), 0.0, 1e-15);
    for (int i = 0; i < v.size(); ++i)
      EXPECT_NEAR(std::abs(v(i)), 1.0, 1e-12);
  }
}

TEST(MbsChannel, PathLossAssemblyExact) {
  // With zero shadowing the small-scale stream is identical across carriers,
  // so the per-entry ratio isolates the 1/sqrt(PL) assembly: PL scales with
  // f^2, amplitudes with 1/f.
  Topology topo = place_network(5, 2, 3);
  ArrayGeometry geom{2, 2, 0.5, 0.5};
  ChannelParams p1;
  p1.shadow_sigma_db = 0.0;
  ChannelParams p2 = p1;
  p2.carrier_hz = 2.0 * p1.carrier_hz;
  CMat h1 = mbs_channel(11, topo, geom, 0, p1);
  CMat h2 = mbs_channel(11, topo, geom, 0, p2);
  for (int r = 0; r < h1.rows(); ++r)
    for (int u = 0; u < h1.cols(); ++u)
      EXPECT_NEAR(std::abs(h1(r, u) / h2(r, u) - cplx(2, 0)), 0.0, 1e-12);
}

TEST(MbsChannel, UnitSecondMomentAfterPathLossRemoval) {
  Topology topo = place_network(5, 1, 200);
  ArrayGeometry geom{5, 5, 0.5, 0.5};
  ChannelParams params;
  params.shadow_sigma_db = 0.0;
  double acc = 0.0;
  int count = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CMat h = mbs_channel(seed, topo, geom, 0, params);
    for (int u = 0; u < h.cols(); ++u) {
      const double pl = fspl(params.carrier_hz, mbs_ue_distance(topo, 0, u));
      for (int r = 0; r < h.rows(); ++r) {
        acc += std::norm(h(r, u)) * pl;
        ++count;
      }
    }
  }
  EXPECT_GE(count, 100000);
  EXPECT_NEAR(acc / count, 1.0, 0.02);
}

TEST(MbsChannel, ShadowingSharedAcrossElements) {
  // Shadowing is one draw per (b,u): dividing out the sigma=0 realization of
  // the same seed leaves a per-column constant.
  Topology topo = place_network(5, 1, 4);
  ArrayGeometry geom{4, 4, 0.5, 0.5};
  ChannelParams with;
  with.shadow_sigma_db = 8.0;
  ChannelParams without = with;
  without.shadow_sigma_db = 0.0;
  CMat hw = mbs_channel(3, topo, geom, 0, with);
  CMat ho = mbs_channel(3, topo, geom, 0, without);
  for (int u = 0; u < hw.cols(); ++u) {
    const double ratio0 = std::abs(hw(0, u) / ho(0, u));
    for (int r = 1; r < hw.rows(); ++r)
      EXPECT_NEAR(std::abs(hw(r, u) / ho(r, u)), ratio0, 1e-9);
  }
}

TEST(MbsChannel, DeterministicPerSeedAndBs) {
  Topology topo = place_network(5, 2, 3);
  ArrayGeometry geom{2, 2, 0.5, 0.5};
  ChannelParams params;
  CMat a = mbs_channel(7, topo, geom, 0, params);
  CMat b = mbs_channel(7, topo, geom, 0, params);
  CMat c = mbs_channel(7, topo, geom, 1, params);
  CMat d = mbs_channel(8, topo, geom, 0, params);
  EXPECT_EQ((a - b).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT((a - c).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT((a - d).cwiseAbs().maxCoeff(), 0.0);
}

TEST(HapsChannel, LargeRicianKMatchesSteering) {
  Topology topo = place_network(9, 0, 3);
  ArrayGeometry geom{4, 4, 0.5, 0.5};
  ChannelParams params;
  params.rician_k = 1e12;
  CMat h = haps_channel(21, topo, geom, params);
  for (int u = 0; u < h.cols(); ++u) {
    const HapsAngles ang = haps_angles(topo, u);
    const CVec v = haps_steering(ang.theta, ang.phi, geom);
    const double pl = fspl(params.carrier_hz, haps_ue_distance(topo, u));
    for (int r = 0; r < h.rows(); ++r)
      EXPECT_NEAR(std::abs(h(r, u) * std::sqrt(pl) - v(r)), 0.0, 1e-3);
  }
}

TEST(HapsChannel, PureNlosSecondMoment) {
  Topology topo = place_network(9, 0, 300);
  ArrayGeometry geom{8, 8, 0.5, 0.5};
  ChannelParams params;
  params.rician_k = 0.0;
  double acc = 0.0;
  int count = 0;
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    CMat h = haps_channel(seed, topo, geom, params);
    for (int u = 0; u < h.cols(); ++u) {
      const double pl = fspl(params.carrier_hz, haps_ue_distance(topo, u));
      for (int r = 0; r < h.rows(); ++r) {
        acc += std::norm(h(r, u)) * pl;
        ++count;
      }
    }
  }
  EXPECT_GE(count, 100000);
  EXPECT_NEAR(acc / count, 1.0, 0.02);
}

TEST(ChannelSet, AssemblyAndCsvRoundTrip) {
  Topology topo = place_network(13, 2, 3);
  ArrayGeometry mbs{2, 2, 0.5, 0.5};
  ArrayGeometry haps{4, 4, 0.5, 0.5};
  ChannelParams params;
  ChannelSet cs = build_channels(17, topo, mbs, haps, params);
  ASSERT_EQ(cs.num_tx(), 3);
  EXPECT_EQ(cs.H[0].rows(), 4);
  EXPECT_EQ(cs.H[2].rows(), 16);
  EXPECT_EQ(cs.num_ue(), 3);
  EXPECT_NEAR(cs.noise_variance_w, 1e-13, 1e-25);

  std::stringstream ss;
  dump_channels(ss, cs);
  std::vector<CMat> loaded = load_channels(ss);
  ASSERT_EQ(loaded.size(), 3u);
  for (int b = 0; b < 3; ++b)
    EXPECT_EQ((loaded[b] - cs.H[b]).cwiseAbs().maxCoeff(), 0.0);
}

TEST(ChannelSet, NoHapsTopology) {
  Topology topo = place_network(13, 2, 3, 4000.0, 20000.0, /*haps=*/false);
  ChannelSet cs = build_channels(17, topo, {2, 2}, {4, 4}, ChannelParams{});
  EXPECT_EQ(cs.num_tx(), 2);
}

}  // namespace
}  // namespace pfbwd
