#pragma once

// Inner consensus loop.  Each pass alternates three updates: the global
// rate-driven estimate of every socket and interference level, the per-BS
// beamforming fits to those estimates, and the closed-form slack refresh,
// followed by dual ascent on the local multipliers.  The loop stops when
// two dual-change measures and every per-BS residual fall below their
// thresholds.

#include <chrono>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <utility>
#include <vector>

#include "pfbwd/common.hpp"
#include "pfbwd/consensus.hpp"
#include "pfbwd/netgen.hpp"
#include "pfbwd/subproblems.hpp"

namespace pfbwd {

struct InnerConfig {
  double eps_dual_global = 1e-3;  // bound on the global-block dual change
  double eps_dual_slack = 1e-3;   // bound on the slack-block dual change
  double eps_primal = 1e-3;       // per-BS, per-chain residual bound
  int max_iters = 100;
  double delta = 2.0;             // local penalty = delta * outer penalty
  bool parallel_local = false;    // solve the per-BS fits concurrently
};

struct InnerCriteria {
  double dual_global = 0.0;
  double dual_slack = 0.0;
  double max_primal = 0.0;
  bool stop = false;
};

// Dual changes stack the per-UE sums over BSs of both chains into one
// vector; the primal test is per BS and per chain separately.
inline InnerCriteria stopping_check(const ConsensusState& cur,
                                    const ConsensusState& prev,
                                    const Residuals& res,
                                    const InnerConfig& cfg) {
  const int num_bs = cur.num_bs();
  const int num_ue = cur.num_ue();
  if (prev.num_bs() != num_bs || prev.num_ue() != num_ue)
    throw std::invalid_argument("stopping_check: state shape mismatch");
  const double rho = cur.rho_local;
  CVec g_s = CVec::Zero(num_ue);
  Vec g_i = Vec::Zero(num_ue);
  CVec d_s = CVec::Zero(num_ue);
  Vec d_i = Vec::Zero(num_ue);
  for (int b = 0; b < num_bs; ++b) {
    const BsConsensus& c = cur.bs[b];
    const BsConsensus& p = prev.bs[b];
    g_s += rho * ((c.z_s - c.s_bar) - (p.z_s - p.s_bar));
    g_i += rho * ((c.z_i - c.i_bar) - (p.z_i - p.i_bar));
    d_s += rho * (p.z_s - c.z_s);
    d_i += rho * (p.z_i - c.z_i);
  }
  InnerCriteria out;
  out.dual_global = std::sqrt(g_s.squaredNorm() + g_i.squaredNorm());
  out.dual_slack = std::sqrt(d_s.squaredNorm() + d_i.squaredNorm());
  bool primal_ok = true;
  for (int b = 0; b < num_bs; ++b) {
    const double ns = res.norm_s(b);
    const double ni = res.norm_i(b);
    out.max_primal = std::max({out.max_primal, ns, ni});
    primal_ok = primal_ok && ns <= cfg.eps_primal && ni <= cfg.eps_primal;
  }
  out.stop = out.dual_global <= cfg.eps_dual_global &&
             out.dual_slack <= cfg.eps_dual_slack && primal_ok;
  return out;
}

struct InnerTraceRow {
  int outer_iter = 0;
  int inner_iter = 0;
  double sum_residual = 0.0;
  double dual_global = 0.0;
  double dual_slack = 0.0;
  double max_primal = 0.0;
  int sca_iters = 0;
  long long scalars_broadcast = 0;
  double ms_block1 = 0.0;
  double ms_block2 = 0.0;
  double ms_block3 = 0.0;
};

struct InnerResult {
  bool converged = false;
  int iterations = 0;
  int total_sca_iters = 0;
  std::vector<CMat> w;  // final per-BS beamformers; empty if nothing ran
  std::vector<InnerTraceRow> trace;
};

// Runs the loop in place on `st`.  The state must arrive with the globals
// (s, i), slacks, and outer multipliers of the current outer round; local
// penalty and multipliers are (re)initialized here, and the local copies
// start from the globals.  With max_iters <= 0 the state is left untouched.
inline InnerResult run_inner(ConsensusState& st, const ChannelSet& channels,
                             const SubproblemParams& params,
                             const InnerConfig& cfg, int outer_iter = 0) {
  InnerResult out;
  if (cfg.max_iters <= 0) return out;
  init_inner(st, cfg.delta);
  for (BsConsensus& c : st.bs) {
    c.s_bar = c.s;
    c.i_bar = c.i;
  }
  // Each BS reports its socket and interference copies and receives the
  // matching slack-adjusted targets: three scalars per UE per round.
  const long long per_iter_scalars = 3LL * st.num_bs() * st.num_ue();
  using clock = std::chrono::steady_clock;
  const auto ms_since = [](clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(clock::now() - t0)
        .count();
  };

  for (int t = 1; t <= cfg.max_iters; ++t) {
    const ConsensusState prev = st;

    const auto t1 = clock::now();
    const ScaAnchors anchors = anchors_from_state(st, params);
    const Block1Result b1 = solve_block1_sca(st, anchors, params);
    for (int b = 0; b < st.num_bs(); ++b) {
      st.bs[b].s = b1.s[b];
      st.bs[b].i = b1.i[b];
    }
    const double ms1 = ms_since(t1);

    const auto t2 = clock::now();
    std::vector<Block2Result> b2 =
        solve_block2_all(st, channels, params, cfg.parallel_local);
    out.w.resize(st.num_bs());
    for (int b = 0; b < st.num_bs(); ++b) {
      st.bs[b].s_bar = b2[b].s_bar;
      st.bs[b].i_bar = b2[b].i_bar;
      out.w[b] = std::move(b2[b].w);
    }
    const double ms2 = ms_since(t2);

    const auto t3 = clock::now();
    block3_update(st);
    const Residuals res = residuals(st);
    psi_update(st, res);
    const double ms3 = ms_since(t3);

    const InnerCriteria crit = stopping_check(st, prev, res, cfg);
    out.trace.push_back({outer_iter, t, res.sum_norms(), crit.dual_global,
                         crit.dual_slack, crit.max_primal, b1.iterations,
                         per_iter_scalars, ms1, ms2, ms3});
    out.iterations = t;
    out.total_sca_iters += b1.iterations;
    if (crit.stop) {
      out.converged = true;
      break;
    }
  }
  return out;
}

inline void dump_inner_trace(std::ostream& os,
                             const std::vector<InnerTraceRow>& rows,
                             bool header = true) {
  if (header)
    os << "outer_iter,inner_iter,sum_residual,dual_global,dual_slack,"
          "max_primal,sca_iters,scalars_broadcast,ms_block1,ms_block2,"
          "ms_block3\n";
  char buf[64];
  const auto put = [&](std::ostream& o, double v) {
    std::snprintf(buf, sizeof buf, ",%.17g", v);
    o << buf;
  };
  for (const InnerTraceRow& r : rows) {
    os << r.outer_iter << ',' << r.inner_iter;
    put(os, r.sum_residual);
    put(os, r.dual_global);
    put(os, r.dual_slack);
    put(os, r.max_primal);
    os << ',' << r.sca_iters << ',' << r.scalars_broadcast;
    put(os, r.ms_block1);
    put(os, r.ms_block2);
    put(os, r.ms_block3);
    os << '\n';
  }
}

}  // namespace pfbwd
