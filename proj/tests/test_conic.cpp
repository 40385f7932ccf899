#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "pfbwd/conic/program.hpp"
#include "pfbwd/conic/solver.hpp"

namespace pfbwd::conic {
namespace {

TEST(Solve, BoundedLinearProgram) {
  ConicProgram p;
  const int x = p.add_var(3.0);  // x >= 3
  p.set_objective_coeff(x, 1.0);
  SolveReport rep = solve(p);
  ASSERT_EQ(rep.status, SolveStatus::optimal);
  EXPECT_NEAR(rep.x[x], 3.0, 1e-7);
  EXPECT_NEAR(rep.objective, 3.0, 1e-7);
  EXPECT_LE(rep.max_violation, 1e-7);
}

TEST(Solve, NormMinimizationWithEquality) {
  // minimize ||(x, y)|| subject to x + y = 2 -> (1, 1), objective sqrt(2).
  ConicProgram p;
  const int x = p.add_var();
  const int y = p.add_var();
  const int t = p.add_var();
  p.set_objective_coeff(t, 1.0);
  p.add_eq(LinExpr::variable(x) + LinExpr::variable(y) - 2.0);
  p.add_soc({LinExpr::variable(x), LinExpr::variable(y)}, LinExpr::variable(t));
  SolveReport rep = solve(p);
  ASSERT_EQ(rep.status, SolveStatus::optimal);
  EXPECT_NEAR(rep.x[x], 1.0, 1e-6);
  EXPECT_NEAR(rep.x[y], 1.0, 1e-6);
  EXPECT_NEAR(rep.objective, std::sqrt(2.0), 1e-7);
  EXPECT_LE(rep.max_violation, 1e-7);
}

TEST(Solve, DetectsInfeasibleBoundPair) {
  ConicProgram p;
  const int x = p.add_var(1.0);      // x >= 1
  p.add_ineq(LinExpr::variable(x));  // x <= 0
  p.set_objective_coeff(x, 1.0);
  SolveReport rep = solve(p);
  EXPECT_EQ(rep.status, SolveStatus::infeasible);
}

TEST(Solve, DetectsInfeasibleEqualityAgainstBound) {
  ConicProgram p;
  const int x = p.add_var(0.0);
  p.add_eq(LinExpr::variable(x) + 1.0);  // x = -1 vs x >= 0
  SolveReport rep = solve(p);
  EXPECT_EQ(rep.status, SolveStatus::infeasible);
}

TEST(Solve, DetectsUnboundedDirection) {
  ConicProgram p;
  const int x = p.add_var(-kInf, 5.0);
  p.set_objective_coeff(x, 1.0);  // minimize x, unbounded below
  SolveReport rep = solve(p);
  EXPECT_EQ(rep.status, SolveStatus::unbounded);
}

TEST(Solve, DeterministicAcrossRepeatedCalls) {
  ConicProgram p;
  const int x = p.add_var();
  const int y = p.add_var();
  const int t = p.add_var();
  p.set_objective_coeff(t, 1.0);
  p.add_eq(2.0 * LinExpr::variable(x) + LinExpr::variable(y) - 3.0);
  p.add_soc({LinExpr::variable(x) - 0.3, LinExpr::variable(y) + 0.1},
            LinExpr::variable(t));
  SolveReport a = solve(p);
  SolveReport b = solve(p);
  ASSERT_EQ(a.status, SolveStatus::optimal);
  ASSERT_EQ(b.status, SolveStatus::optimal);
  for (std::size_t j = 0; j < a.x.size(); ++j) EXPECT_EQ(a.x[j], b.x[j]);
}

// Minimal alpha certified by the chain for a fixed t.
double chain_min_alpha(double t, int nu, double tol = 1e-10) {
  ConicProgram p;
  const int tv = p.add_var();
  const int av = p.add_var();
  p.add_eq(LinExpr::variable(tv) - t);
  p.set_objective_coeff(av, 1.0);
  exp_chain(p, LinExpr::variable(tv), LinExpr::variable(av), nu);
  SolverOptions opts;
  opts.tol = tol;
  SolveReport rep = solve(p, opts);
  EXPECT_EQ(rep.status, SolveStatus::optimal) << "t=" << t << " nu=" << nu;
  EXPECT_LE(rep.max_violation, 10 * 1e-8);
  return rep.x[av];
}

TEST(ExpChain, ExactAtZero) {
  // At t = 0 every squaring step is tight, and each one doubles the
  // sensitivity of alpha to per-row residuals, so alpha only resolves to
  // about 2^nu times the solver tolerance.  1e-5 is the chain's accuracy bar.
  EXPECT_NEAR(chain_min_alpha(0.0, 6), 0.0, 1e-5);
}

TEST(ExpChain, RelativeAccuracyOverGridAtNuSix) {
  for (double t = 0.0; t <= 5.0 + 1e-9; t += 0.5) {
    const double alpha = chain_min_alpha(t, 6);
    const double target = std::exp(t);
    EXPECT_NEAR((1.0 + alpha) / target, 1.0, 1e-5) << "t=" << t;
  }
}

TEST(ExpChain, InnerApproximationDirection) {
  // A certified pair never understates exp(t) by more than 1e-4 relative:
  // the minimal alpha satisfies (1 + alpha) >= exp(t) * (1 - 1e-4).  The
  // chain's truncation error grows with t/2^nu, so the certified range
  // shrinks with nu: measured, nu=4 understates by ~1.04e-4 at t=4 and
  // ~2e-4 at t=5, while nu=5 and nu=6 hold the margin across [0, 5].
  for (int nu = 4; nu <= 6; ++nu) {
    const double t_max = nu == 4 ? 3.5 : 5.0;
    for (double t = 0.0; t <= t_max + 1e-9; t += 0.25) {
      const double alpha = chain_min_alpha(t, nu);
      EXPECT_GE(1.0 + alpha, std::exp(t) * (1.0 - 1e-4)) << "t=" << t << " nu=" << nu;
    }
  }
}

TEST(ExpChain, MonotoneInT) {
  double prev = -1.0;
  for (double t = 0.0; t <= 3.0 + 1e-9; t += 0.25) {
    const double alpha = chain_min_alpha(t, 6);
    EXPECT_GT(alpha, prev);
    prev = alpha;
  }
}

TEST(ExpChain, RejectsNonPositiveNu) {
  ConicProgram p;
  const int tv = p.add_var();
  const int av = p.add_var();
  EXPECT_THROW(exp_chain(p, LinExpr::variable(tv), LinExpr::variable(av), 0),
               std::invalid_argument);
}

double geomean_max(const std::vector<double>& t, double tol = 1e-10) {
  ConicProgram p;
  std::vector<int> tv;
  for (double ti : t) {
    const int v = p.add_var();
    p.add_eq(LinExpr::variable(v) - ti);
    tv.push_back(v);
  }
  const int g = p.add_var(0.0);
  p.set_objective_coeff(g, -1.0);  // maximize g
  geomean_hypograph(p, tv, g);
  SolverOptions opts;
  opts.tol = tol;
  SolveReport rep = solve(p, opts);
  EXPECT_EQ(rep.status, SolveStatus::optimal);
  return rep.x[g];
}

TEST(GeomeanHypograph, SingleFactorIsIdentity) {
  EXPECT_NEAR(geomean_max({5.0}), 5.0, 1e-7);
}

TEST(GeomeanHypograph, PairAndPaddedTriple) {
  EXPECT_NEAR(geomean_max({4.0, 1.0}), 2.0, 1e-7);
  // Padding to four leaves reuses g itself, so the bound stays the exact
  // cube-root geometric mean: (8*8*8)^(1/3) = 8.
  EXPECT_NEAR(geomean_max({8.0, 8.0, 8.0}), 8.0, 1e-6);
}

TEST(GeomeanHypograph, MatchesClosedFormOnRandomFactors) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 5);
    std::vector<double> t;
    double logsum = 0.0;
    for (int i = 0; i < n; ++i) {
      const double v = 0.2 + 4.8 * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
      t.push_back(v);
      logsum += std::log(v);
    }
    const double expected = std::exp(logsum / n);
    EXPECT_NEAR(geomean_max(t) / expected, 1.0, 1e-8) << "n=" << n;
  }
}

TEST(QuadEpigraph, ConstantAndVariableBodies) {
  {
    ConicProgram p;
    const int s = p.add_var();
    p.set_objective_coeff(s, 1.0);
    quad_epigraph(p, {LinExpr(3.0), LinExpr(4.0)}, s);
    SolveReport rep = solve(p);
    ASSERT_EQ(rep.status, SolveStatus::optimal);
    EXPECT_NEAR(rep.x[s], 25.0, 1e-6);
  }
  {
    // min s subject to s >= (x - 3)^2 with x free: optimum 0 at x = 3.
    ConicProgram p;
    const int x = p.add_var();
    const int s = p.add_var();
    p.set_objective_coeff(s, 1.0);
    quad_epigraph(p, {LinExpr::variable(x) - 3.0}, s);
    SolveReport rep = solve(p);
    ASSERT_EQ(rep.status, SolveStatus::optimal);
    EXPECT_NEAR(rep.x[s], 0.0, 1e-6);
    EXPECT_NEAR(rep.x[x], 3.0, 1e-4);
  }
  {
    // x pinned away from the vertex: s = 4.
    ConicProgram p;
    const int x = p.add_var();
    const int s = p.add_var();
    p.set_objective_coeff(s, 1.0);
    p.add_eq(LinExpr::variable(x) - 1.0);
    quad_epigraph(p, {LinExpr::variable(x) - 3.0}, s);
    SolveReport rep = solve(p);
    ASSERT_EQ(rep.status, SolveStatus::optimal);
    EXPECT_NEAR(rep.x[s], 4.0, 1e-6);
  }
}

TEST(QuadEpigraph, MixedPenaltyMinimization) {
  // min psi*r + (rho/2)*e with e >= r^2, r = v - 2: quadratic in r with
  // minimizer r* = -psi/rho.
  const double psi = 3.0, rho = 4.0;
  ConicProgram p;
  const int v = p.add_var();
  const int e = p.add_var();
  LinExpr r = LinExpr::variable(v) - 2.0;
  p.add_objective_term(v, psi);
  p.add_objective_constant(-2.0 * psi);
  p.add_objective_term(e, rho / 2.0);
  quad_epigraph(p, {r}, e);
  SolveReport rep = solve(p);
  ASSERT_EQ(rep.status, SolveStatus::optimal);
  // The objective is flat at the vertex, so a coordinate error of sqrt(tol)
  // is the best any solver can certify; the objective itself is tight.
  EXPECT_NEAR(rep.x[v] - 2.0, -psi / rho, 1e-4);
  EXPECT_NEAR(rep.objective, -psi * psi / (2.0 * rho), 1e-7);
}

TEST(VerifyPoint, FlagsViolations) {
  ConicProgram p;
  const int x = p.add_var(0.0, 1.0);
  p.add_eq(LinExpr::variable(x) - 0.5);
  p.add_soc({LinExpr::variable(x)}, LinExpr(0.1));
  EXPECT_GT(verify_point(p, {0.5}).max_violation, 0.1);  // soc violated
  EXPECT_GT(verify_point(p, {2.0}).max_violation, 0.1);  // bound + eq violated
}

TEST(VerifyPoint, AcceptsSolutionsAtTenTimesTol) {
  // Residual re-check of every optimal solve in this fixture set.
  for (double target : {0.5, 1.0, 2.5}) {
    ConicProgram p;
    const int x = p.add_var();
    const int t = p.add_var();
    p.set_objective_coeff(t, 1.0);
    p.add_soc({LinExpr::variable(x) - target}, LinExpr::variable(t));
    p.add_ineq(1.0 - LinExpr::variable(x));  // x >= 1
    SolveReport rep = solve(p);
    ASSERT_EQ(rep.status, SolveStatus::optimal);
    EXPECT_LE(rep.max_violation, 10.0 * 1e-8);
  }
}

TEST(Dump, EmitsAllRowKinds) {
  ConicProgram p;
  const int x = p.add_var(0.0, 2.0);
  const int s = p.add_var();
  p.set_objective_coeff(x, 1.5);
  p.add_eq(LinExpr::variable(x) - 1.0);
  p.add_ineq(LinExpr::variable(x) - 2.0);
  p.add_soc({LinExpr::variable(x)}, LinExpr(3.0));
  quad_epigraph(p, {LinExpr::variable(x) - 1.0}, s);
  std::ostringstream os;
  p.dump(os);
  const std::string text = os.str();
  EXPECT_NE(text.find("vars 2"), std::string::npos);
  EXPECT_NE(text.find("minimize"), std::string::npos);
  EXPECT_NE(text.find("bound x0"), std::string::npos);
  EXPECT_NE(text.find("eq:"), std::string::npos);
  EXPECT_NE(text.find("ineq:"), std::string::npos);
  EXPECT_NE(text.find("soc:"), std::string::npos);
  EXPECT_NE(text.find("rsoc:"), std::string::npos);
}

}  // namespace
}  // namespace pfbwd::conic
