#pragma once
// Coupling state shared by the two optimization levels: per-BS local
// estimates (s, I), their global copies (sbar, Ibar), slack variables z,
// and the two multiplier families (inner psi, outer lambda), together with
// the closed-form update rules that act on them.
//
// The s-chain is complex (the downstream SINR bound takes real and
// imaginary parts of sums of s), stored as Eigen complex vectors; inner
// products and norms treat each complex entry as a real pair, so
// lambda' z means Re(lambda)'Re(z) + Im(lambda)'Im(z).

#include <pfbwd/common.hpp>

#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <vector>

namespace pfbwd {

// One BS slice; every vector has length U.
struct BsConsensus {
  CVec s, s_bar, z_s, psi_s, lambda_s;  // complex socket chain
  Vec i, i_bar, z_i, psi_i, lambda_i;   // real interference chain
};

struct ConsensusState {
  std::vector<BsConsensus> bs;
  double rho_outer = 10.0;
  double rho_local = 20.0;  // shared across BSs and both chains

  int num_bs() const { return static_cast<int>(bs.size()); }
  int num_ue() const {
    return bs.empty() ? 0 : static_cast<int>(bs[0].s.size());
  }

  static ConsensusState zeros(int num_bs, int num_ue) {
    if (num_bs <= 0 || num_ue <= 0)
      throw std::invalid_argument("consensus state needs num_bs, num_ue > 0");
    ConsensusState st;
    st.bs.resize(num_bs);
    for (BsConsensus& c : st.bs) {
      c.s = CVec::Zero(num_ue);
      c.s_bar = CVec::Zero(num_ue);
      c.z_s = CVec::Zero(num_ue);
      c.psi_s = CVec::Zero(num_ue);
      c.lambda_s = CVec::Zero(num_ue);
      c.i = Vec::Zero(num_ue);
      c.i_bar = Vec::Zero(num_ue);
      c.z_i = Vec::Zero(num_ue);
      c.psi_i = Vec::Zero(num_ue);
      c.lambda_i = Vec::Zero(num_ue);
    }
    return st;
  }
};

// Consensus residuals r_s = s - sbar + z_s and r_i = i - ibar + z_i.
struct Residuals {
  std::vector<CVec> r_s;
  std::vector<Vec> r_i;

  double norm_s(int b) const { return r_s[b].norm(); }
  double norm_i(int b) const { return r_i[b].norm(); }
  double sum_norms() const {
    double total = 0.0;
    for (std::size_t b = 0; b < r_s.size(); ++b)
      total += r_s[b].norm() + r_i[b].norm();
    return total;
  }
};

inline Residuals residuals(const ConsensusState& st) {
  Residuals r;
  r.r_s.reserve(st.bs.size());
  r.r_i.reserve(st.bs.size());
  for (const BsConsensus& c : st.bs) {
    r.r_s.push_back(c.s - c.s_bar + c.z_s);
    r.r_i.push_back(c.i - c.i_bar + c.z_i);
  }
  return r;
}

// Third-block minimizer of the per-BS augmented Lagrangian in z alone:
//   minimize  lambda'z + (rho_o/2)||z||^2 + psi'(c + z) + (rho_l/2)||c + z||^2
// with c = s - sbar (or i - ibar).  Strictly convex quadratic; stationarity
// gives z* = -(lambda + psi + rho_l c) / (rho_o + rho_l), componentwise.
inline void block3_update(ConsensusState& st) {
  const double denom = st.rho_outer + st.rho_local;
  if (!(denom > 0.0))
    throw std::invalid_argument("block3_update needs rho_outer + rho_local > 0");
  for (BsConsensus& c : st.bs) {
    c.z_s = -(c.lambda_s + c.psi_s + st.rho_local * (c.s - c.s_bar)) / denom;
    c.z_i = -(c.lambda_i + c.psi_i + st.rho_local * (c.i - c.i_bar)) / denom;
  }
}

// Inner multiplier ascent: psi <- psi + rho_l * r, both chains.
inline void psi_update(ConsensusState& st, const Residuals& r) {
  for (std::size_t b = 0; b < st.bs.size(); ++b) {
    st.bs[b].psi_s += st.rho_local * r.r_s[b];
    st.bs[b].psi_i += st.rho_local * r.r_i[b];
  }
}

// Inner-level initialization: penalty ratio delta sets rho_l = delta*rho_o,
// and psi is chosen so that lambda + rho_o z + psi = 0 holds exactly.
inline void init_inner(ConsensusState& st, double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("delta must be > 0");
  st.rho_local = delta * st.rho_outer;
  for (BsConsensus& c : st.bs) {
    c.psi_s = -(c.lambda_s + st.rho_outer * c.z_s);
    c.psi_i = -(c.lambda_i + st.rho_outer * c.z_i);
  }
}

// Stacked slack norm ||Z_b|| over both chains for one BS.
inline double slack_norm(const BsConsensus& c) {
  return std::sqrt(c.z_s.squaredNorm() + c.z_i.squaredNorm());
}

inline std::vector<double> slack_norms(const ConsensusState& st) {
  std::vector<double> n;
  n.reserve(st.bs.size());
  for (const BsConsensus& c : st.bs) n.push_back(slack_norm(c));
  return n;
}

struct LambdaUpdate {
  bool penalty_grew = false;
  bool clamped = false;  // any multiplier component hit the box
};

// Outer multiplier step lambda <- clamp(lambda + rho_o z, [-lmax, lmax])
// followed by the penalty growth test: rho_o grows by gamma_growth iff every
// BS shows insufficient slack decrease ||Z_b|| >= omega*||Z_b_prev||.  A BS
// whose slack was zero and stayed zero counts as converged and blocks growth.
inline LambdaUpdate lambda_update(ConsensusState& st,
                                  const std::vector<double>& prev_slack_norms,
                                  double omega, double gamma_growth,
                                  double lambda_max = 1e6) {
  if (!(omega >= 0.0 && omega < 1.0))
    throw std::invalid_argument("omega must lie in [0, 1)");
  if (!(gamma_growth > 1.0))
    throw std::invalid_argument("gamma_growth must be > 1");
  if (prev_slack_norms.size() != st.bs.size())
    throw std::invalid_argument("one previous slack norm per BS required");

  LambdaUpdate out;
  const auto clamp_re_im = [&](cplx& v) {
    double re = v.real(), im = v.imag();
    if (std::abs(re) > lambda_max) {
      re = re > 0 ? lambda_max : -lambda_max;
      out.clamped = true;
    }
    if (std::abs(im) > lambda_max) {
      im = im > 0 ? lambda_max : -lambda_max;
      out.clamped = true;
    }
    v = cplx(re, im);
  };
  const auto clamp_real = [&](double& v) {
    if (std::abs(v) > lambda_max) {
      v = v > 0 ? lambda_max : -lambda_max;
      out.clamped = true;
    }
  };

  bool grow = !st.bs.empty();
  for (BsConsensus& c : st.bs) {
    c.lambda_s += st.rho_outer * c.z_s;
    for (int u = 0; u < c.lambda_s.size(); ++u) clamp_re_im(c.lambda_s(u));
    c.lambda_i += st.rho_outer * c.z_i;
    for (int u = 0; u < c.lambda_i.size(); ++u) clamp_real(c.lambda_i(u));
  }
  for (std::size_t b = 0; b < st.bs.size(); ++b) {
    const double now = slack_norm(st.bs[b]);
    const double before = prev_slack_norms[b];
    const bool converged = now == 0.0 && before == 0.0;
    if (converged || now < omega * before) grow = false;
  }
  if (grow) {
    st.rho_outer *= gamma_growth;
    out.penalty_grew = true;
  }
  return out;
}

// Snapshot rows (k, t, b, l, u, component, value) for convergence plots.
inline void dump_state(std::ostream& os, const ConsensusState& st, int k,
                       int t, bool header = false) {
  if (header) os << "k,t,b,l,u,component,value\n";
  char buf[64];
  const auto put = [&](int b, const char* l, int u, const char* comp,
                       double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    os << k << ',' << t << ',' << b << ',' << l << ',' << u << ',' << comp
       << ',' << buf << '\n';
  };
  for (int b = 0; b < st.num_bs(); ++b) {
    const BsConsensus& c = st.bs[b];
    for (int u = 0; u < st.num_ue(); ++u) {
      put(b, "s", u, "s_re", c.s(u).real());
      put(b, "s", u, "s_im", c.s(u).imag());
      put(b, "s", u, "sbar_re", c.s_bar(u).real());
      put(b, "s", u, "sbar_im", c.s_bar(u).imag());
      put(b, "s", u, "z_re", c.z_s(u).real());
      put(b, "s", u, "z_im", c.z_s(u).imag());
      put(b, "s", u, "psi_re", c.psi_s(u).real());
      put(b, "s", u, "psi_im", c.psi_s(u).imag());
      put(b, "s", u, "lambda_re", c.lambda_s(u).real());
      put(b, "s", u, "lambda_im", c.lambda_s(u).imag());
      put(b, "I", u, "i", c.i(u));
      put(b, "I", u, "ibar", c.i_bar(u));
      put(b, "I", u, "z", c.z_i(u));
      put(b, "I", u, "psi", c.psi_i(u));
      put(b, "I", u, "lambda", c.lambda_i(u));
    }
  }
}

}  // namespace pfbwd
