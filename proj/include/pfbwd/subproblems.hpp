#pragma once
// Builders and solvers for the two convex subproblem families of the inner
// sweep.  The global update optimizes per-UE rate bounds (t, alpha, beta),
// the aggregate socket components (p, q), and the per-BS estimates (s, I)
// against a linearized SINR bound; each local update is a per-BS SOCP over
// the beamforming matrix and the global copies (sbar, Ibar).
//
// The proportional-fairness hypograph sum(log t) is handled through the
// geometric mean: maximizing U*g with g <= geomean(t) has the same argmax
// over the rate region as sum(log t) and stays SOC-representable.  The
// reported pf_surrogate converts t (nats) to the spectral-efficiency scale
// via sum(log(t/ln 2)).

#include <pfbwd/common.hpp>
#include <pfbwd/conic/program.hpp>
#include <pfbwd/conic/solver.hpp>
#include <pfbwd/consensus.hpp>
#include <pfbwd/netgen.hpp>

#include <cmath>
#include <future>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pfbwd {

struct SubproblemParams {
  std::vector<double> power_budget;        // per BS, same units as channels
  double noise_variance = 1.0;             // receiver noise in those units
  Vec noise_variance_ue;                   // per-UE override when non-empty
  double sinr_floor = 0.0;                 // per-UE minimum SINR, 0 = off
  // Ceiling on any UE's SINR (0 = off).  Besides modeling a modulation
  // limit, it keeps the exponential-chain variables and the linearization
  // coefficients within double-precision range on very clean links.
  double sinr_cap = 1e4;
  double interference_bound_factor = 1.0;  // multiplies sum_b I in the
                                           // interference-plus-noise bound
  int exp_chain_nu = 6;
  double solver_tol = 1e-8;
  double sca_tol = 1e-4;  // relative objective change
  int sca_max_iters = 20;
};

// Tie-break pressure (in solver units) applied to the per-UE SINR and
// interference-plus-noise variables of the global subproblem.  Large enough
// to dominate interior-point noise on an otherwise-flat optimal face, small
// enough to stay below every stopping tolerance that reads the objective.
inline constexpr double kEnvelopeTilt = 1e-6;

// Tie-break weight, relative to the local penalty weight, on the transmit
// power of the per-BS subproblem.  Once every user saturates its rate bound
// the penalty no longer prefers any point of the power sphere, the sphere
// constraint stays active at zero price, and the consensus iteration creeps
// along the boundary at a harmonic (1/t) rate.  Preferring the least-power
// beamformer among equal-penalty ones moves the local optimum strictly
// inside the ball, which restores a geometric rate.  Scaling by the penalty
// weight keeps the induced copy perturbation at ~2x this constant in socket
// units, orders below the stopping tolerances.
inline constexpr double kBeamPowerTilt = 1e-5;

inline double noise_for(const SubproblemParams& params, int u) {
  if (params.noise_variance_ue.size() > 0) {
    if (u < 0 || u >= params.noise_variance_ue.size())
      throw std::invalid_argument("noise_for: UE index out of range");
    return params.noise_variance_ue(u);
  }
  return params.noise_variance;
}

// Per-UE rescaling that conditions the optimization without changing it.
// Channels are noise-whitened, then each UE's columns are divided by that
// UE's best single-BS matched-filter socket magnitude.  Every socket,
// interference level, and effective noise power the solver sees is then
// O(1), every SINR is exactly preserved, and the beamformers stay in
// physical units.  Feed `noise_variance` to SubproblemParams.
struct SolverScaling {
  ChannelSet cs;       // scaled channels; noise_variance_w is meaningless
  Vec noise_variance;  // per-UE effective noise power in scaled units
  Vec socket_scale;    // scaled socket times this = physical socket / sigma
};

inline SolverScaling scale_for_solver(const ChannelSet& raw,
                                      const std::vector<double>& power_budget) {
  const int num_tx = raw.num_tx();
  const int num_ue = raw.num_ue();
  if (raw.noise_variance_w <= 0.0)
    throw std::invalid_argument("scale_for_solver: noise power must be positive");
  if (static_cast<int>(power_budget.size()) != num_tx)
    throw std::invalid_argument("scale_for_solver: one power budget per transmitter");
  const double sigma = std::sqrt(raw.noise_variance_w);
  SolverScaling out;
  out.noise_variance = Vec::Zero(num_ue);
  out.socket_scale = Vec::Zero(num_ue);
  for (int u = 0; u < num_ue; ++u) {
    double c = 0.0;
    for (int b = 0; b < num_tx; ++b) {
      if (power_budget[static_cast<std::size_t>(b)] <= 0.0)
        throw std::invalid_argument("scale_for_solver: power budgets must be positive");
      c = std::max(c, std::sqrt(power_budget[static_cast<std::size_t>(b)] /
                                num_ue) *
                          raw.H[b].col(u).norm() / sigma);
    }
    if (c == 0.0) c = 1.0;  // unreachable UE: leave its row unscaled
    out.socket_scale(u) = c;
    out.noise_variance(u) = 1.0 / (c * c);
  }
  for (int b = 0; b < num_tx; ++b) {
    CMat h = raw.H[b] / sigma;
    for (int u = 0; u < num_ue; ++u) h.col(u) /= out.socket_scale(u);
    out.cs.H.push_back(std::move(h));
  }
  out.cs.noise_variance_w = 0.0;
  return out;
}

// Linearization anchors for the SINR bound, one entry per UE.
struct ScaAnchors {
  Vec p, q, beta;
};

// First-order expansion of (p^2 + q^2)/beta at (p_m, q_m, beta_m).  The
// ratio is jointly convex for beta > 0, so the expansion under-estimates it
// everywhere; the constant term cancels to zero algebraically.
inline conic::LinExpr taylor_rhs(const conic::LinExpr& p,
                                 const conic::LinExpr& q,
                                 const conic::LinExpr& beta, double p_m,
                                 double q_m, double beta_m) {
  if (!(beta_m > 0.0))
    throw std::domain_error("taylor_rhs anchor requires beta_m > 0");
  const double f_m = (p_m * p_m + q_m * q_m) / beta_m;
  return (2.0 * p_m / beta_m) * p + (2.0 * q_m / beta_m) * q -
         (f_m / beta_m) * beta;
}

// Anchors from the current coupling state: p + jq aggregates the per-BS
// socket estimates, beta the interference estimates plus noise.  Beta is
// floored at the noise level so the expansion stays well-defined, and —
// when the SINR cap is on — at the level where the cap binds, which keeps
// the expansion coefficients bounded by the cap.
inline ScaAnchors anchors_from_state(const ConsensusState& st,
                                     const SubproblemParams& params) {
  const int num_ue = st.num_ue();
  ScaAnchors a;
  a.p = Vec::Zero(num_ue);
  a.q = Vec::Zero(num_ue);
  a.beta = Vec::Zero(num_ue);
  for (const BsConsensus& c : st.bs) {
    for (int u = 0; u < num_ue; ++u) {
      a.p(u) += c.s(u).real();
      a.q(u) += c.s(u).imag();
      a.beta(u) += c.i(u);
    }
  }
  for (int u = 0; u < num_ue; ++u) {
    const double nv = noise_for(params, u);
    a.beta(u) = std::max(a.beta(u) + nv, nv);
    // Keep the anchor SINR within 25% headroom above the cap.  Flooring it
    // at the cap exactly would pinch the linearized SINR between the rate
    // bound and the linearization at a single point, re-coupling saturated
    // users to the anchors; the headroom leaves the linearization slack so
    // only the rate bound is active there.
    if (params.sinr_cap > 0.0)
      a.beta(u) = std::max(a.beta(u), (a.p(u) * a.p(u) + a.q(u) * a.q(u)) /
                                          (1.25 * params.sinr_cap));
  }
  return a;
}

struct Block1Program {
  conic::ConicProgram prog;
  std::vector<int> t, alpha, beta, p, q;           // per-UE variables
  std::vector<std::vector<int>> s_re, s_im, intf;  // [b][u]
  int g = -1;                                      // geometric-mean variable
  // The SINR, interference-plus-noise, and per-BS interference variables are
  // solved in anchor units: physical alpha = alpha_scale * x[alpha], and
  // beta / intf are beta_scale * x[...] (intf shares its UE's beta anchor).
  Vec alpha_scale, beta_scale;
};

// One linearized global subproblem: minimize the penalized surrogate over
// the rate variables and the per-BS estimates, with the local copies, the
// slacks, and the multipliers held fixed.  Terms that depend only on fixed
// quantities are dropped except the psi'r expansion constants, which keep
// the reported objective equal to the true penalized value.
inline Block1Program build_block1(const ConsensusState& st,
                                  const ScaAnchors& anchors,
                                  const SubproblemParams& params) {
  using conic::LinExpr;
  const int num_ue = st.num_ue();
  const int num_bs = st.num_bs();
  Block1Program bp;
  conic::ConicProgram& prog = bp.prog;

  if (params.sinr_cap > 0.0 && params.sinr_floor >= params.sinr_cap)
    throw std::invalid_argument(
        "build_block1: SINR floor must lie below the cap");

  bp.alpha_scale = Vec::Ones(num_ue);
  bp.beta_scale = Vec::Ones(num_ue);
  for (int u = 0; u < num_ue; ++u) {
    if (anchors.beta(u) <= 0.0)
      throw std::domain_error(
          "build_block1: interference-plus-noise anchor must be positive");
    // Solving for alpha in units of the anchor SINR and beta in units of
    // its anchor keeps the linearized bound's coefficients near one even
    // when the anchor SINR is huge; without this the beta coefficient
    // grows with the square of the anchor SINR and stalls the solver.
    const double f_m = (anchors.p(u) * anchors.p(u) +
                        anchors.q(u) * anchors.q(u)) /
                       anchors.beta(u);
    bp.alpha_scale(u) = std::max(f_m, 1.0);
    bp.beta_scale(u) = anchors.beta(u);
  }

  bp.t = prog.add_vars(num_ue, 0.0);
  // The SINR ceiling is a box bound on the SINR variable, and the anchors
  // carry enough headroom that the linearized SINR bound stays slack at
  // saturated users.  Exactly one constraint is then active per variable
  // there -- the box on the SINR, the exponential envelope on the rate --
  // and the optimum stays a nondegenerate vertex.  Enforcing the ceiling
  // on the rate variable instead leaves the envelope and the ceiling active
  // together, and the interior-point iterates collapse onto a ray.
  bp.alpha.reserve(num_ue);
  for (int u = 0; u < num_ue; ++u)
    bp.alpha.push_back(prog.add_var(
        -conic::kInf, params.sinr_cap > 0.0
                          ? params.sinr_cap / bp.alpha_scale(u)
                          : conic::kInf));
  bp.beta = prog.add_vars(num_ue);
  bp.p = prog.add_vars(num_ue);
  bp.q = prog.add_vars(num_ue);
  bp.s_re.resize(num_bs);
  bp.s_im.resize(num_bs);
  bp.intf.resize(num_bs);
  for (int b = 0; b < num_bs; ++b) {
    bp.s_re[b] = prog.add_vars(num_ue);
    bp.s_im[b] = prog.add_vars(num_ue);
    bp.intf[b] = prog.add_vars(num_ue, 0.0);
  }
  bp.g = prog.add_var(0.0);

  prog.set_objective_coeff(bp.g, -static_cast<double>(num_ue));
  geomean_hypograph(prog, bp.t, bp.g);

  for (int u = 0; u < num_ue; ++u) {
    const LinExpr alpha_expr =
        bp.alpha_scale(u) * LinExpr::variable(bp.alpha[u]);
    const LinExpr beta_expr = bp.beta_scale(u) * LinExpr::variable(bp.beta[u]);

    // Build the exponential chain around the anchor: exp(t) <= 1 + alpha is
    // enforced as exp(t - t_m) <= (1 + alpha) / (1 + f_m) with e^{t_m} =
    // 1 + f_m, the anchor SINR.  The chain's squaring tail then stays O(1)
    // at the solution instead of reaching 1 + SINR; a solution of norm
    // 1/eps drives the homogeneous embedding's tau down to eps, and every
    // tau-normalized exit tolerance tightens by the same factor, which is
    // where the iteration used to break down on clean links.
    const double exp_tm = 1.0 + bp.alpha_scale(u);
    exp_chain(prog,
              LinExpr::variable(bp.t[u]) - std::log(exp_tm),
              (1.0 / exp_tm) * (1.0 + alpha_expr) - 1.0,
              params.exp_chain_nu);
    if (params.sinr_floor > 0.0)
      prog.add_ineq(params.sinr_floor - alpha_expr);

    // Interference-plus-noise bound on beta, in units of the beta anchor.
    // The per-BS interference variables live in the same anchor units (the
    // physical value is beta_scale * variable): with them in raw units this
    // row's coefficients span the anchor's magnitude, and the multiplier the
    // row needs to carry an O(1) force on beta grows by the same factor,
    // blowing up the dual norm and collapsing the homogeneous embedding.
    LinExpr beta_lo(noise_for(params, u) / bp.beta_scale(u));
    for (int b = 0; b < num_bs; ++b)
      beta_lo += params.interference_bound_factor *
                 LinExpr::variable(bp.intf[b][u]);
    prog.add_ineq(beta_lo - LinExpr::variable(bp.beta[u]));

    // p, q aggregate the per-BS socket estimates.
    LinExpr p_def = LinExpr::variable(bp.p[u]);
    LinExpr q_def = LinExpr::variable(bp.q[u]);
    for (int b = 0; b < num_bs; ++b) {
      p_def -= LinExpr::variable(bp.s_re[b][u]);
      q_def -= LinExpr::variable(bp.s_im[b][u]);
    }
    prog.add_eq(std::move(p_def));
    prog.add_eq(std::move(q_def));

    prog.add_ineq(LinExpr::variable(bp.alpha[u]) -
                  (1.0 / bp.alpha_scale(u)) *
                      taylor_rhs(LinExpr::variable(bp.p[u]),
                                 LinExpr::variable(bp.q[u]), beta_expr,
                                 anchors.p(u), anchors.q(u), anchors.beta(u)));

    // At rate-saturated users the linearized SINR row goes slack, leaving
    // beta free between its interference floor and the level where the
    // linearization would bind, and any such flat direction degrades the
    // interior-point iterates into stall points far from the optimum.  Tilt
    // the bound variables toward their active envelopes to keep the optimum
    // a vertex.  The tilt sits orders of magnitude below every stopping
    // tolerance that reads the objective.
    prog.add_objective_term(bp.alpha[u], kEnvelopeTilt);
    prog.add_objective_term(bp.beta[u], kEnvelopeTilt);
  }

  // Penalty terms psi'r + (rho/2)||r||^2 with r measured against the fixed
  // targets sbar - z and ibar - z.
  for (int b = 0; b < num_bs; ++b) {
    const BsConsensus& c = st.bs[b];
    std::vector<LinExpr> rs;
    rs.reserve(2 * num_ue);
    std::vector<LinExpr> ri;
    ri.reserve(num_ue);
    for (int u = 0; u < num_ue; ++u) {
      const double c_re = c.s_bar(u).real() - c.z_s(u).real();
      const double c_im = c.s_bar(u).imag() - c.z_s(u).imag();
      rs.push_back(LinExpr::variable(bp.s_re[b][u]) - c_re);
      rs.push_back(LinExpr::variable(bp.s_im[b][u]) - c_im);
      prog.add_objective_term(bp.s_re[b][u], c.psi_s(u).real());
      prog.add_objective_term(bp.s_im[b][u], c.psi_s(u).imag());
      prog.add_objective_constant(-c.psi_s(u).real() * c_re -
                                  c.psi_s(u).imag() * c_im);

      const double c_i = c.i_bar(u) - c.z_i(u);
      ri.push_back(bp.beta_scale(u) * LinExpr::variable(bp.intf[b][u]) - c_i);
      prog.add_objective_term(bp.intf[b][u], c.psi_i(u) * bp.beta_scale(u));
      prog.add_objective_constant(-c.psi_i(u) * c_i);
    }
    const int e_s = prog.add_var(0.0);
    quad_epigraph(prog, std::move(rs), e_s);
    prog.add_objective_term(e_s, st.rho_local / 2.0);
    const int e_i = prog.add_var(0.0);
    quad_epigraph(prog, std::move(ri), e_i);
    prog.add_objective_term(e_i, st.rho_local / 2.0);
  }
  return bp;
}

struct Block1Result {
  Vec t, alpha, beta, p, q;
  std::vector<CVec> s;  // per-BS socket estimates
  std::vector<Vec> i;   // per-BS interference estimates
  double objective = 0.0;
  double pf_surrogate = 0.0;       // sum_u log(t_u / ln 2)
  std::vector<double> objectives;  // one entry per iteration
  ScaAnchors anchors;              // after the final update
  int iterations = 0;
  bool converged = false;
  bool ran = false;
};

// Iterates build/solve with refreshed (p, q) anchors until the relative
// objective change drops below sca_tol, the solution reproduces its own
// anchors, or sca_max_iters is hit.  Zero iterations echoes the anchors
// back with ran = false.
inline Block1Result solve_block1_sca(const ConsensusState& st,
                                     const ScaAnchors& init_anchors,
                                     const SubproblemParams& params) {
  Block1Result out;
  out.anchors = init_anchors;
  if (params.sca_max_iters <= 0) return out;
  out.ran = true;

  conic::SolverOptions opts;
  opts.tol = params.solver_tol;
  const int num_ue = st.num_ue();
  const int num_bs = st.num_bs();
  double prev_obj = 0.0;

  for (int m = 0; m < params.sca_max_iters; ++m) {
    Block1Program bp = build_block1(st, out.anchors, params);
    conic::SolveReport rep = conic::solve(bp.prog, opts);
    if (rep.status != conic::SolveStatus::optimal) {
      std::string what =
          m == 0 ? "global subproblem infeasible at the initial anchors"
                 : "global subproblem failed mid-SCA";
      what += " (iteration " + std::to_string(m) + ", status " +
              std::to_string(static_cast<int>(rep.status)) + "); anchors: p[0]=" +
              std::to_string(out.anchors.p(0)) +
              " beta[0]=" + std::to_string(out.anchors.beta(0));
      throw std::runtime_error(what);
    }
    out.iterations = m + 1;
    out.objective = rep.objective;
    out.objectives.push_back(rep.objective);

    out.t = Vec::Zero(num_ue);
    out.alpha = Vec::Zero(num_ue);
    out.beta = Vec::Zero(num_ue);
    out.p = Vec::Zero(num_ue);
    out.q = Vec::Zero(num_ue);
    for (int u = 0; u < num_ue; ++u) {
      out.t(u) = rep.x[bp.t[u]];
      out.alpha(u) = bp.alpha_scale(u) * rep.x[bp.alpha[u]];
      out.beta(u) = bp.beta_scale(u) * rep.x[bp.beta[u]];
      out.p(u) = rep.x[bp.p[u]];
      out.q(u) = rep.x[bp.q[u]];
    }
    out.s.assign(num_bs, CVec::Zero(num_ue));
    out.i.assign(num_bs, Vec::Zero(num_ue));
    for (int b = 0; b < num_bs; ++b)
      for (int u = 0; u < num_ue; ++u) {
        out.s[b](u) = cplx(rep.x[bp.s_re[b][u]], rep.x[bp.s_im[b][u]]);
        out.i[b](u) = bp.beta_scale(u) * rep.x[bp.intf[b][u]];
      }
    out.pf_surrogate = 0.0;
    for (int u = 0; u < num_ue; ++u)
      out.pf_surrogate += std::log(std::max(out.t(u), 1e-300) / std::log(2.0));

    const double anchor_shift = (out.p - out.anchors.p).cwiseAbs().maxCoeff() +
                                (out.q - out.anchors.q).cwiseAbs().maxCoeff();
    const double scale =
        1.0 + out.p.cwiseAbs().maxCoeff() + out.q.cwiseAbs().maxCoeff();
    out.anchors.p = out.p;
    out.anchors.q = out.q;
    if (anchor_shift <= 1e-9 * scale) {
      out.converged = true;
      break;
    }
    if (m > 0 && std::abs(rep.objective - prev_obj) <=
                     params.sca_tol * std::max(1.0, std::abs(prev_obj))) {
      out.converged = true;
      break;
    }
    prev_obj = rep.objective;
  }
  return out;
}

struct Block2Program {
  conic::ConicProgram prog;
  std::vector<std::vector<int>> w_re, w_im;  // [u][antenna]
  std::vector<int> sbar_re, sbar_im, ibar;
};

// Per-BS local subproblem: penalized tracking of the fixed targets s + z_s
// and i + z_i by the realizable copies (sbar, Ibar) under the power budget,
// the socket definition, and the interference cone.
inline Block2Program build_block2(int b, const ConsensusState& st,
                                  const CMat& h, double power_budget) {
  using conic::LinExpr;
  if (!(power_budget > 0.0))
    throw std::invalid_argument("power budget must be > 0");
  const int num_ue = st.num_ue();
  const int n_ant = static_cast<int>(h.rows());
  if (static_cast<int>(h.cols()) != num_ue)
    throw std::invalid_argument("channel matrix must have one column per UE");

  Block2Program bp;
  conic::ConicProgram& prog = bp.prog;
  bp.w_re.resize(num_ue);
  bp.w_im.resize(num_ue);
  for (int u = 0; u < num_ue; ++u) {
    bp.w_re[u] = prog.add_vars(n_ant);
    bp.w_im[u] = prog.add_vars(n_ant);
  }
  bp.sbar_re = prog.add_vars(num_ue);
  bp.sbar_im = prog.add_vars(num_ue);
  bp.ibar = prog.add_vars(num_ue, 0.0);

  // The beamformer variables are solved in budget units (physical w =
  // sqrt(P) * x[w]): the power cone is then the unit ball regardless of the
  // BS's absolute budget, which keeps the iterate's norm, the tie-break
  // epigraph, and the socket-row coefficients commensurate across BSs.
  const double wscale = std::sqrt(power_budget);

  // ||vec W||_F <= sqrt(P).
  const auto beam_entries = [&] {
    std::vector<LinExpr> body;
    body.reserve(2 * num_ue * n_ant);
    for (int u = 0; u < num_ue; ++u)
      for (int n = 0; n < n_ant; ++n) {
        body.push_back(LinExpr::variable(bp.w_re[u][n]));
        body.push_back(LinExpr::variable(bp.w_im[u][n]));
      }
    return body;
  };
  prog.add_soc(beam_entries(), LinExpr(1.0));

  // Least-power tie-break among equal-penalty beamformers; see kBeamPowerTilt.
  // The epigraph value is the utilization fraction, the same for every BS
  // regardless of its absolute power.
  const int e_w = prog.add_var(0.0);
  quad_epigraph(prog, beam_entries(), e_w);
  prog.add_objective_term(e_w, kBeamPowerTilt * st.rho_local);

  // sbar_u = h_u^H w_u, expanded over real and imaginary parts.
  const auto inner_re = [&](int u, int k) {
    LinExpr e;
    for (int n = 0; n < n_ant; ++n) {
      e += wscale * h(n, u).real() * LinExpr::variable(bp.w_re[k][n]);
      e += wscale * h(n, u).imag() * LinExpr::variable(bp.w_im[k][n]);
    }
    return e;
  };
  const auto inner_im = [&](int u, int k) {
    LinExpr e;
    for (int n = 0; n < n_ant; ++n) {
      e += wscale * h(n, u).real() * LinExpr::variable(bp.w_im[k][n]);
      e -= wscale * h(n, u).imag() * LinExpr::variable(bp.w_re[k][n]);
    }
    return e;
  };
  for (int u = 0; u < num_ue; ++u) {
    prog.add_eq(LinExpr::variable(bp.sbar_re[u]) - inner_re(u, u));
    prog.add_eq(LinExpr::variable(bp.sbar_im[u]) - inner_im(u, u));
    if (num_ue > 1) {
      std::vector<LinExpr> leak;
      leak.reserve(2 * (num_ue - 1));
      for (int k = 0; k < num_ue; ++k) {
        if (k == u) continue;
        leak.push_back(inner_re(u, k));
        leak.push_back(inner_im(u, k));
      }
      prog.add_rsoc(std::move(leak), LinExpr::variable(bp.ibar[u]),
                    LinExpr(1.0));
    }
  }

  // psi'r + (rho/2)||r||^2 against the fixed targets.
  const BsConsensus& c = st.bs[b];
  std::vector<LinExpr> rs;
  rs.reserve(2 * num_ue);
  std::vector<LinExpr> ri;
  ri.reserve(num_ue);
  for (int u = 0; u < num_ue; ++u) {
    const double t_re = c.s(u).real() + c.z_s(u).real();
    const double t_im = c.s(u).imag() + c.z_s(u).imag();
    rs.push_back(t_re - LinExpr::variable(bp.sbar_re[u]));
    rs.push_back(t_im - LinExpr::variable(bp.sbar_im[u]));
    prog.add_objective_term(bp.sbar_re[u], -c.psi_s(u).real());
    prog.add_objective_term(bp.sbar_im[u], -c.psi_s(u).imag());
    prog.add_objective_constant(c.psi_s(u).real() * t_re +
                                c.psi_s(u).imag() * t_im);

    const double t_i = c.i(u) + c.z_i(u);
    ri.push_back(t_i - LinExpr::variable(bp.ibar[u]));
    prog.add_objective_term(bp.ibar[u], -c.psi_i(u));
    prog.add_objective_constant(c.psi_i(u) * t_i);
  }
  const int e_s = prog.add_var(0.0);
  quad_epigraph(prog, std::move(rs), e_s);
  prog.add_objective_term(e_s, st.rho_local / 2.0);
  const int e_i = prog.add_var(0.0);
  quad_epigraph(prog, std::move(ri), e_i);
  prog.add_objective_term(e_i, st.rho_local / 2.0);
  return bp;
}

struct Block2Result {
  CMat w;      // antennas x UEs
  CVec s_bar;  // realized sockets
  Vec i_bar;   // realized interference copies
  double objective = 0.0;
};

// The local penalty value at a given copy assignment (the beamforming
// matrix does not enter the objective, only the constraints).
inline double block2_objective(const ConsensusState& st, int b,
                               const CVec& s_bar, const Vec& i_bar) {
  const BsConsensus& c = st.bs[b];
  double val = 0.0;
  for (int u = 0; u < st.num_ue(); ++u) {
    const cplx r_s = c.s(u) - s_bar(u) + c.z_s(u);
    val += c.psi_s(u).real() * r_s.real() + c.psi_s(u).imag() * r_s.imag();
    val += st.rho_local / 2.0 * std::norm(r_s);
    const double r_i = c.i(u) - i_bar(u) + c.z_i(u);
    val += c.psi_i(u) * r_i + st.rho_local / 2.0 * r_i * r_i;
  }
  return val;
}

inline Block2Result solve_block2(int b, const ConsensusState& st,
                                 const CMat& h, double power_budget,
                                 const SubproblemParams& params) {
  Block2Program bp = build_block2(b, st, h, power_budget);
  conic::SolverOptions opts;
  opts.tol = params.solver_tol;
  conic::SolveReport rep = conic::solve(bp.prog, opts);
  if (rep.status != conic::SolveStatus::optimal)
    throw std::runtime_error(
        "local subproblem failed at BS " + std::to_string(b) + " (status " +
        std::to_string(static_cast<int>(rep.status)) + ")");

  const int num_ue = st.num_ue();
  const int n_ant = static_cast<int>(h.rows());
  Block2Result out;
  out.w = CMat::Zero(n_ant, num_ue);
  out.s_bar = CVec::Zero(num_ue);
  out.i_bar = Vec::Zero(num_ue);
  const double wscale = std::sqrt(power_budget);
  for (int u = 0; u < num_ue; ++u) {
    for (int n = 0; n < n_ant; ++n)
      out.w(n, u) =
          wscale * cplx(rep.x[bp.w_re[u][n]], rep.x[bp.w_im[u][n]]);
    out.s_bar(u) = cplx(rep.x[bp.sbar_re[u]], rep.x[bp.sbar_im[u]]);
    out.i_bar(u) = rep.x[bp.ibar[u]];
  }
  out.objective = rep.objective;
  return out;
}

// All per-BS subproblems; they are independent, so the parallel path must
// reproduce the sequential results exactly.
inline std::vector<Block2Result> solve_block2_all(
    const ConsensusState& st, const ChannelSet& channels,
    const SubproblemParams& params, bool parallel = false) {
  const int num_bs = st.num_bs();
  if (static_cast<int>(channels.H.size()) != num_bs ||
      static_cast<int>(params.power_budget.size()) != num_bs)
    throw std::invalid_argument("one channel matrix and budget per BS");

  std::vector<Block2Result> out(num_bs);
  if (!parallel) {
    for (int b = 0; b < num_bs; ++b)
      out[b] = solve_block2(b, st, channels.H[b], params.power_budget[b],
                            params);
    return out;
  }
  std::vector<std::future<Block2Result>> jobs;
  jobs.reserve(num_bs);
  for (int b = 0; b < num_bs; ++b)
    jobs.push_back(std::async(std::launch::async, [&, b] {
      return solve_block2(b, st, channels.H[b], params.power_budget[b],
                          params);
    }));
  for (int b = 0; b < num_bs; ++b) out[b] = jobs[b].get();
  return out;
}

}  // namespace pfbwd
