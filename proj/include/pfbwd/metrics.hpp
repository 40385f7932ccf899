#pragma once

#include <limits>
#include <vector>

#include "pfbwd/netgen.hpp"

namespace pfbwd {

// Per-transmitter precoding matrices; W[b] is N_b x U, column u serving UE u.
struct BeamformingSolution {
  std::vector<CMat> W;
};

// Effective scalar links g(u, k) = sum_b h_{b,u}^H w_{b,k}: the signal UE u
// receives on the stream intended for UE k, combined over all transmitters.
inline CMat effective_links(const ChannelSet& cs, const BeamformingSolution& sol) {
  const int num_ue = cs.num_ue();
  CMat g = CMat::Zero(num_ue, num_ue);
  for (int b = 0; b < cs.num_tx(); ++b) {
    const CMat& h = cs.H[b];
    const CMat& w = sol.W[b];
    for (int u = 0; u < num_ue; ++u)
      for (int k = 0; k < num_ue; ++k)
        g(u, k) += h.col(u).dot(w.col(k));  // Eigen dot conjugates the left factor
  }
  return g;
}

inline Vec sinr(const ChannelSet& cs, const BeamformingSolution& sol) {
  const int num_ue = cs.num_ue();
  const CMat g = effective_links(cs, sol);
  Vec out(num_ue);
  for (int u = 0; u < num_ue; ++u) {
    double interf = 0.0;
    for (int k = 0; k < num_ue; ++k)
      if (k != u) interf += std::norm(g(u, k));
    out(u) = std::norm(g(u, u)) / (interf + cs.noise_variance_w);
  }
  return out;
}

inline Vec spectral_efficiency(const ChannelSet& cs, const BeamformingSolution& sol) {
  Vec se = sinr(cs, sol);
  for (int u = 0; u < se.size(); ++u) se(u) = std::log2(1.0 + se(u));
  return se;
}

// Proportional-fairness utility: sum of natural logs of per-UE spectral
// efficiency. Any UE at zero rate sends the utility to -inf.
inline double pf_objective(const ChannelSet& cs, const BeamformingSolution& sol) {
  const Vec se = spectral_efficiency(cs, sol);
  double pf = 0.0;
  for (int u = 0; u < se.size(); ++u) {
    if (se(u) <= 0.0) return -std::numeric_limits<double>::infinity();
    pf += std::log(se(u));
  }
  return pf;
}

// Per-transmitter leakage: I(b, u) = sum_{k != u} |h_{b,u}^H w_{b,k}|^2.
inline Mat interference_terms(const ChannelSet& cs, const BeamformingSolution& sol) {
  const int num_ue = cs.num_ue();
  Mat out = Mat::Zero(cs.num_tx(), num_ue);
  for (int b = 0; b < cs.num_tx(); ++b) {
    const CMat& h = cs.H[b];
    const CMat& w = sol.W[b];
    for (int u = 0; u < num_ue; ++u)
      for (int k = 0; k < num_ue; ++k)
        if (k != u) out(b, u) += std::norm(h.col(u).dot(w.col(k)));
  }
  return out;
}

struct FeasibilityReport {
  Vec power_used;    // per transmitter, watts
  Vec power_budget;  // per transmitter, watts
  Vec sinr_values;   // per UE
  double sinr_floor = 0.0;
  double worst_power_violation = 0.0;  // max over b of used - budget
  double worst_sinr_violation = 0.0;   // max over u of floor - sinr

  bool ok(double tol = 1e-9) const {
    return worst_power_violation <= tol && worst_sinr_violation <= tol;
  }
};

inline FeasibilityReport check_feasibility(const ChannelSet& cs,
                                           const BeamformingSolution& sol,
                                           const Vec& power_budget_w,
                                           double sinr_floor = 0.0) {
  FeasibilityReport rep;
  const int num_tx = cs.num_tx();
  rep.power_used.resize(num_tx);
  rep.power_budget = power_budget_w;
  for (int b = 0; b < num_tx; ++b)
    rep.power_used(b) = sol.W[b].squaredNorm();
  rep.sinr_values = sinr(cs, sol);
  rep.sinr_floor = sinr_floor;
  rep.worst_power_violation = -std::numeric_limits<double>::infinity();
  for (int b = 0; b < num_tx; ++b)
    rep.worst_power_violation =
        std::max(rep.worst_power_violation, rep.power_used(b) - power_budget_w(b));
  rep.worst_sinr_violation = -std::numeric_limits<double>::infinity();
  for (int u = 0; u < rep.sinr_values.size(); ++u)
    rep.worst_sinr_violation =
        std::max(rep.worst_sinr_violation, sinr_floor - rep.sinr_values(u));
  return rep;
}

}  // namespace pfbwd
