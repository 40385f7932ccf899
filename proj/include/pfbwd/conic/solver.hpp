#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <chrono>
#include <vector>

#include "pfbwd/conic/program.hpp"

namespace pfbwd::conic {

enum class SolveStatus { optimal, infeasible, unbounded, numerical_limit };

struct SolveReport {
  SolveStatus status = SolveStatus::numerical_limit;
  std::vector<double> x;
  double objective = 0.0;
  int iterations = 0;
  bool reduced_accuracy = false;  // accepted at relaxed tolerances
  double max_violation = 0.0;     // from the independent IR re-check
  double solve_time_ms = 0.0;
};

namespace detail {

using SpMat = Eigen::SparseMatrix<double>;
using Eigen::VectorXd;

struct Settings {
  double feastol = 1e-8;
  double abstol = 1e-8;
  double reltol = 1e-8;
  double feastol_inacc = 1e-4;
  double abstol_inacc = 5e-5;
  double reltol_inacc = 5e-5;
  double gamma = 0.99;       // step scaling
  double deltastat = 7e-8;   // static KKT regularization
  double linsysacc = 1e-14;  // refinement target
  double irerrfact = 30.0;   // minimum refinement improvement factor
  double stepmin = 1e-6;
  double stepmax = 0.999;
  double sigmamin = 1e-4;
  double sigmamax = 1.0;
  double safeguard = 500.0;
  int nitref = 9;
  int maxit = 100;
  int equil_iters = 3;
};

// min c'x  s.t.  Ax = b,  Gx + s = h,  s in R+^l x SOC(q_0) x SOC(q_1) x ...
struct StandardForm {
  int n = 0;  // variables
  int p = 0;  // equalities
  int m = 0;  // total cone rows
  int l = 0;  // nonnegative rows
  std::vector<int> q;  // SOC dimensions
  SpMat A, G;
  VectorXd c, b, h;
};

enum class IpmStatus {
  optimal,
  close_to_optimal,
  primal_infeasible,
  close_to_primal_infeasible,
  dual_infeasible,
  close_to_dual_infeasible,
  maxit,
  numerics
};

struct IpmResult {
  IpmStatus status = IpmStatus::numerics;
  VectorXd x, y, z, s;
  double tau = 1.0;
  int iterations = 0;
};

// Nesterov-Todd scaling for one second-order cone.
struct SocScaling {
  double eta_square = 1.0;
  double a = 1.0;
  double d1 = 0.0;
  double u0 = 0.0, u1 = 0.0, v1 = 0.0;
  VectorXd qv;  // dimension dim-1
};

class Ipm {
 public:
  Ipm(const StandardForm& sf, const Settings& st) : d_(sf), st_(st) {
    nsoc_ = static_cast<int>(d_.q.size());
    lp_w2_.resize(d_.l);
    soc_.resize(nsoc_);
    for (int i = 0; i < nsoc_; ++i) soc_[i].qv = VectorXd::Zero(d_.q[i] - 1);
    lambda_.resize(d_.m);
    degree_ = d_.l + nsoc_;
    dim_k_ = d_.n + d_.p + d_.m + 2 * nsoc_;
    expanded_col_.resize(d_.m);
    int off = 0, extra = 0;
    for (int r = 0; r < d_.l; ++r) expanded_col_[off++] = d_.n + d_.p + r + extra;
    for (int i = 0; i < nsoc_; ++i) {
      for (int k = 0; k < d_.q[i]; ++k)
        expanded_col_[off + k] = d_.n + d_.p + off + extra + k;
      off += d_.q[i];
      extra += 2;
    }
    build_kkt_pattern();
  }

  IpmResult run() {
    IpmResult res;
    if (!initialize()) {
      res.status = IpmStatus::numerics;
      return res;
    }
    double prev_pres = 1e99;
    Best best;
    for (iter_ = 0; iter_ <= st_.maxit; ++iter_) {
      compute_residuals();
      update_statistics();

#ifdef PFBWD_IPM_TRACE
      std::fprintf(stderr,
                   "it=%2d pres=%.2e dres=%.2e gap=%.2e relgap=%.2e tau=%.2e "
                   "kap=%.2e mu=%.2e\n",
                   iter_, pres_, dres_, gap_, relgap_, tau_, kap_, mu_);
#endif
      // A breakdown can poison the iterate with NaNs, which would slip
      // through every ordered comparison below; fall back to the best
      // stored iterate instead.
      if (!std::isfinite(pres_) || !std::isfinite(dres_) ||
          !std::isfinite(gap_) || !std::isfinite(tau_)) {
        if (iter_ == 0) {
          res.status = IpmStatus::numerics;
          return res;
        }
        restore(best);
        compute_residuals();
        update_statistics();
        IpmStatus exn = check_exit(false);
        if (exn == IpmStatus::maxit) exn = check_exit(true);
        save(res, exn == IpmStatus::maxit ? IpmStatus::numerics : exn);
        return res;
      }
      IpmStatus ex = check_exit(false);
      if (ex != IpmStatus::maxit) {  // converged at full accuracy
        save(res, ex);
        return res;
      }
      // Divergence safeguard.  The primal residual is floored at feastol
      // before the ratio test: once pres sits below the full-accuracy
      // tolerance it is numerical noise, and a relative jump there (e.g.
      // 1e-10 -> 1e-7) says nothing about divergence while a restore would
      // resurrect an older iterate with a worse duality gap.
      if (iter_ > 0 && (pres_ > st_.safeguard * std::max(prev_pres, st_.feastol) ||
                        gap_ < -st_.abstol)) {
        restore(best);
        compute_residuals();
        update_statistics();
        ex = check_exit(false);
        if (ex == IpmStatus::maxit) ex = check_exit(true);
        save(res, ex == IpmStatus::maxit ? IpmStatus::numerics : ex);
        return res;
      }
      if (iter_ == st_.maxit) {
        ex = check_exit(true);
        if (ex == IpmStatus::maxit) {
          if (!(fallback_merit() <= best.merit)) {  // NaN-safe: restore on NaN too
            restore(best);
            compute_residuals();
            update_statistics();
            ex = check_exit(true);
          }
        }
#ifdef PFBWD_IPM_TRACE
        dump_cones();
#endif
        save(res, ex);
        return res;
      }
      if (iter_ == 0 || fallback_merit() < best.merit) stash(best);
      prev_pres = pres_;

      if (!update_scalings()) {  // iterate left the cone: numerics
        restore(best);
        compute_residuals();
        update_statistics();
        IpmStatus ex2 = check_exit(false);
        if (ex2 == IpmStatus::maxit) ex2 = check_exit(true);
        save(res, ex2 == IpmStatus::maxit ? IpmStatus::numerics : ex2);
        return res;
      }
      update_kkt_values(false);
      if (!factorize()) {  // singular KKT system: numerics
        restore(best);
        compute_residuals();
        update_statistics();
        IpmStatus ex3 = check_exit(false);
        if (ex3 == IpmStatus::maxit) ex3 = check_exit(true);
        save(res, ex3 == IpmStatus::maxit ? IpmStatus::numerics : ex3);
        return res;
      }

      // Static part [ -c; b; h ].
      VectorXd r1(dim_k_);
      r1.head(d_.n) = -d_.c;
      r1.segment(d_.n, d_.p) = d_.b;
      r1.tail(dim_k_ - d_.n - d_.p) = expand(d_.h);
      VectorXd sol1 = solve_kkt(r1);
      VectorXd dx1 = sol1.head(d_.n);
      VectorXd dy1 = sol1.segment(d_.n, d_.p);
      VectorXd dz1 = contract(sol1.tail(dim_k_ - d_.n - d_.p));

      const double dtau_denom =
          kap_ / tau_ - d_.c.dot(dx1) - d_.b.dot(dy1) - d_.h.dot(dz1);

      // Affine predictor.
      VectorXd r2(dim_k_);
      r2.head(d_.n) = rx_;
      r2.segment(d_.n, d_.p) = -ry_;
      r2.tail(dim_k_ - d_.n - d_.p) = expand(s_ - rz_);
      VectorXd sol2 = solve_kkt(r2);
      VectorXd dx2 = sol2.head(d_.n);
      VectorXd dy2 = sol2.segment(d_.n, d_.p);
      VectorXd dz2 = contract(sol2.tail(dim_k_ - d_.n - d_.p));

      const double dtauaff =
          (rt_ - kap_ + d_.c.dot(dx2) + d_.b.dot(dy2) + d_.h.dot(dz2)) / dtau_denom;
      VectorXd dzaff = dz2 + dtauaff * dz1;
      VectorXd w_dzaff = scale(dzaff);
      VectorXd dsaff_by_w = -w_dzaff - lambda_;
      const double dkapaff = -kap_ - kap_ / tau_ * dtauaff;

      const double step_aff =
          line_search(dsaff_by_w, w_dzaff, tau_, dtauaff, kap_, dkapaff);
      const double sigma = std::clamp(std::pow(1.0 - step_aff, 3.0), st_.sigmamin,
                                      st_.sigmamax);

      // Combined corrector.
      VectorXd ds_vec = conic_product(lambda_, lambda_) +
                        conic_product(dsaff_by_w, w_dzaff);
      subtract_identity(ds_vec, sigma * mu_);
      VectorXd lam_div_ds = conic_division(lambda_, ds_vec);
      VectorXd r3(dim_k_);
      r3.head(d_.n) = (1.0 - sigma) * rx_;
      r3.segment(d_.n, d_.p) = -(1.0 - sigma) * ry_;
      r3.tail(dim_k_ - d_.n - d_.p) =
          expand(-(1.0 - sigma) * rz_ + scale(lam_div_ds));
      VectorXd sol3 = solve_kkt(r3);
      VectorXd dx = sol3.head(d_.n);
      VectorXd dy = sol3.segment(d_.n, d_.p);
      VectorXd dz = contract(sol3.tail(dim_k_ - d_.n - d_.p));

      const double bkap = kap_ * tau_ + dkapaff * dtauaff - sigma * mu_;
      const double dtau = ((1.0 - sigma) * rt_ - bkap / tau_ + d_.c.dot(dx) +
                           d_.b.dot(dy) + d_.h.dot(dz)) /
                          dtau_denom;
      dx += dtau * dx1;
      dy += dtau * dy1;
      dz += dtau * dz1;
      VectorXd w_dz = scale(dz);
      VectorXd ds_by_w = -(lam_div_ds + w_dz);
      const double dkap = -(bkap + kap_ * dtau) / tau_;

      double step = st_.gamma * line_search(ds_by_w, w_dz, tau_, dtau, kap_, dkap);
      step = std::clamp(step, st_.stepmin, st_.stepmax);

      x_ += step * dx;
      y_ += step * dy;
      z_ += step * dz;
      s_ = scale(lambda_ + step * ds_by_w);
      tau_ += step * dtau;
      kap_ += step * dkap;
    }
    res.status = IpmStatus::maxit;
    return res;
  }

 private:
  struct Best {
    VectorXd x, y, z, s;
    double tau = 1.0, kap = 1.0;
    double merit = 1e99;
  };

  // Worst violation relative to the reduced-accuracy exit test.  The stash
  // is only ever consulted as a fallback when the iteration breaks down, so
  // rank candidates by their chance of passing that test: an iterate with
  // record-low primal residual but a still-large gap is a worse fallback
  // than a slightly less feasible one whose gap has already closed.
  double fallback_merit() const {
    if (!(-ct_x_ > 0.0 || -bt_y_ - ht_z_ >= -st_.abstol_inacc))
      return std::numeric_limits<double>::infinity();
    double g = gap_ / st_.abstol_inacc;
    if (!std::isnan(relgap_)) g = std::min(g, relgap_ / st_.reltol_inacc);
    return std::max({pres_ / st_.feastol_inacc, dres_ / st_.feastol_inacc, g});
  }

  void stash(Best& b) const {
    b.x = x_;
    b.y = y_;
    b.z = z_;
    b.s = s_;
    b.tau = tau_;
    b.kap = kap_;
    b.merit = fallback_merit();
  }
  void restore(const Best& b) {
    x_ = b.x;
    y_ = b.y;
    z_ = b.z;
    s_ = b.s;
    tau_ = b.tau;
    kap_ = b.kap;
  }
  void save(IpmResult& r, IpmStatus st) const {
    r.status = st;
    r.x = x_;
    r.y = y_;
    r.z = z_;
    r.s = s_;
    r.tau = tau_;
    r.iterations = iter_;
  }

  // --- cone algebra -------------------------------------------------------

  static double soc_residual(const Eigen::Ref<const VectorXd>& v) {
    return v(0) * v(0) - v.tail(v.size() - 1).squaredNorm();
  }

  VectorXd bring_to_cone(const VectorXd& r) const {
    double alpha = -st_.gamma;
    for (int i = 0; i < d_.l; ++i)
      if (r(i) <= 0.0) alpha = std::max(alpha, -r(i));
    int off = d_.l;
    for (int i = 0; i < nsoc_; ++i) {
      const auto v = r.segment(off, d_.q[i]);
      const double res = v(0) - v.tail(d_.q[i] - 1).norm();
      if (res <= 0.0) alpha = std::max(alpha, -res);
      off += d_.q[i];
    }
    VectorXd s = r;
    const double shift = 1.0 + alpha;
    for (int i = 0; i < d_.l; ++i) s(i) += shift;
    off = d_.l;
    for (int i = 0; i < nsoc_; ++i) {
      s(off) += shift;
      off += d_.q[i];
    }
    return s;
  }

  void subtract_identity(VectorXd& v, double c) const {
    for (int i = 0; i < d_.l; ++i) v(i) -= c;
    int off = d_.l;
    for (int i = 0; i < nsoc_; ++i) {
      v(off) -= c;
      off += d_.q[i];
    }
  }

  VectorXd conic_product(const VectorXd& u, const VectorXd& v) const {
    VectorXd w(d_.m);
    for (int i = 0; i < d_.l; ++i) w(i) = u(i) * v(i);
    int off = d_.l;
    for (int i = 0; i < nsoc_; ++i) {
      const int q = d_.q[i];
      const auto u1 = u.segment(off + 1, q - 1);
      const auto v1 = v.segment(off + 1, q - 1);
      w(off) = u.segment(off, q).dot(v.segment(off, q));
      w.segment(off + 1, q - 1) = u(off) * v1 + v(off) * u1;
      off += q;
    }
    return w;
  }

  // w = lambda \ v (inverse of the Jordan product by lambda).
  VectorXd conic_division(const VectorXd& lam, const VectorXd& v) const {
    VectorXd w(d_.m);
    for (int i = 0; i < d_.l; ++i) w(i) = v(i) / lam(i);
    int off = d_.l;
    for (int i = 0; i < nsoc_; ++i) {
      const int q = d_.q[i];
      const auto l1 = lam.segment(off + 1, q - 1);
      const auto v1 = v.segment(off + 1, q - 1);
      const double l0 = lam(off), v0 = v(off);
      const double rho = l0 * l0 - l1.squaredNorm();
      const double zeta = l1.dot(v1);
      const double factor = (zeta / l0 - v0) / rho;
      w(off) = (l0 * v0 - zeta) / rho;
      w.segment(off + 1, q - 1) = factor * l1 + v1 / l0;
      off += q;
    }
    return w;
  }

  // y = W v with the current NT scaling.
  VectorXd scale(const VectorXd& v) const {
    VectorXd y(d_.m);
    for (int i = 0; i < d_.l; ++i) y(i) = std::sqrt(lp_w2_(i)) * v(i);
    int off = d_.l;
    for (int i = 0; i < nsoc_; ++i) {
      const int q = d_.q[i];
      const SocScaling& sc = soc_[i];
      const double eta = std::sqrt(sc.eta_square);
      const auto v1 = v.segment(off + 1, q - 1);
      const double zeta = sc.qv.dot(v1);
      y(off) = eta * (sc.a * v(off) + zeta);
      y.segment(off + 1, q - 1) =
          eta * (v1 + (v(off) + zeta / (1.0 + sc.a)) * sc.qv);
      off += q;
    }
    return y;
  }

  bool update_scalings() {
    for (int i = 0; i < d_.l; ++i) {
      if (z_(i) == 0.0 || s_(i) / z_(i) <= 0.0) return false;
      lp_w2_(i) = s_(i) / z_(i);
      lambda_(i) = std::sqrt(s_(i) * z_(i));
    }
    int off = d_.l;
    for (int i = 0; i < nsoc_; ++i) {
      const int q = d_.q[i];
      const auto sk = s_.segment(off, q);
      const auto zk = z_.segment(off, q);
      const double sres = soc_residual(sk);
      const double zres = soc_residual(zk);
      if (sres <= 0.0 || zres <= 0.0) return false;
      const double snorm = std::sqrt(sres), znorm = std::sqrt(zres);
      SocScaling& sc = soc_[i];
      sc.eta_square = snorm / znorm;
      VectorXd sbar = sk / snorm, zbar = zk / znorm;
      const double gamma =
          std::sqrt(0.5 * (1.0 + sbar(0) * zbar(0) + sbar.tail(q - 1).dot(zbar.tail(q - 1))));
      sc.a = (0.5 / gamma) * (sbar(0) + zbar(0));
      sc.qv = (0.5 / gamma) * (sbar.tail(q - 1) - zbar.tail(q - 1));
      const double w = sc.qv.squaredNorm();
      const double c = (1.0 + sc.a) + w / (1.0 + sc.a);
      const double d = 1.0 + 2.0 / (1.0 + sc.a) + w / ((1.0 + sc.a) * (1.0 + sc.a));
      sc.d1 = std::max(0.0, 0.5 * (sc.a * sc.a + w * (1.0 - (c * c) / (1.0 + w * d))));
      const double u0_square = sc.a * sc.a + w - sc.d1;
      const double c2byu02 = (c * c) / u0_square;
      if (c2byu02 - d <= 0.0) return false;
      sc.u0 = std::sqrt(u0_square);
      sc.u1 = std::sqrt(c2byu02);
      sc.v1 = std::sqrt(c2byu02 - d);
      // lambda = W z for this cone.
      const double eta = std::sqrt(sc.eta_square);
      const auto z1 = zk.tail(q - 1);
      const double zeta = sc.qv.dot(z1);
      lambda_(off) = eta * (sc.a * zk(0) + zeta);
      lambda_.segment(off + 1, q - 1) =
          eta * (z1 + (zk(0) + zeta / (1.0 + sc.a)) * sc.qv);
      off += q;
    }
    return true;
  }

  // --- expanded KKT system -------------------------------------------------
  //
  // K = [ dI   A'   G'  ]   with the (3,3) block carrying -W'W in expanded
  //     [ A   -dI   0   ]   form: each SOC contributes two auxiliary rows so
  //     [ G    0   -V   ]   the block stays sparse (diag + two rank-1 cols).

  void build_kkt_pattern() {
    std::vector<Eigen::Triplet<double>> trips;
    for (int i = 0; i < d_.n; ++i) trips.emplace_back(i, i, st_.deltastat);
    for (int col = 0; col < d_.A.outerSize(); ++col)
      for (SpMat::InnerIterator it(d_.A, col); it; ++it)
        trips.emplace_back(col, d_.n + it.row(), it.value());
    for (int col = 0; col < d_.G.outerSize(); ++col)
      for (SpMat::InnerIterator it(d_.G, col); it; ++it)
        trips.emplace_back(col, expanded_col_[it.row()], it.value());
    for (int i = 0; i < d_.p; ++i)
      trips.emplace_back(d_.n + i, d_.n + i, -st_.deltastat);

    dyn_entries_.clear();
    for (int r = 0; r < d_.l; ++r) {
      dyn_entries_.push_back({expanded_col_[r], expanded_col_[r]});
      trips.emplace_back(expanded_col_[r], expanded_col_[r], -1.0);
    }
    int off = d_.l;
    for (int i = 0; i < nsoc_; ++i) {
      const int q = d_.q[i];
      const int base = expanded_col_[off];
      for (int k = 0; k < q; ++k) {  // D diagonal
        dyn_entries_.push_back({base + k, base + k});
        trips.emplace_back(base + k, base + k, -1.0);
      }
      for (int k = 1; k < q; ++k) {  // v column (first entry is zero)
        dyn_entries_.push_back({base + k, base + q});
        trips.emplace_back(base + k, base + q, 0.0);
      }
      dyn_entries_.push_back({base + q, base + q});
      trips.emplace_back(base + q, base + q, -1.0);
      for (int k = 0; k < q; ++k) {  // u column
        dyn_entries_.push_back({base + k, base + q + 1});
        trips.emplace_back(base + k, base + q + 1, 0.0);
      }
      dyn_entries_.push_back({base + q + 1, base + q + 1});
      trips.emplace_back(base + q + 1, base + q + 1, 1.0);
      off += q;
    }

    kkt_.resize(dim_k_, dim_k_);
    kkt_.setFromTriplets(trips.begin(), trips.end());
    kkt_.makeCompressed();
    dyn_index_.clear();
    for (const auto& [row, col] : dyn_entries_)
      dyn_index_.push_back(value_slot(row, col));

    // Static regularization pattern (sign of each diagonal block).
    reg_ = VectorXd::Zero(dim_k_);
    reg_.head(d_.n).setConstant(st_.deltastat);
    reg_.segment(d_.n, d_.p).setConstant(-st_.deltastat);
    for (int r = 0; r < d_.l; ++r) reg_(expanded_col_[r]) = -st_.deltastat;
    off = d_.l;
    for (int i = 0; i < nsoc_; ++i) {
      const int base = expanded_col_[off];
      for (int k = 0; k < d_.q[i]; ++k) reg_(base + k) = -st_.deltastat;
      reg_(base + d_.q[i] + 1) = st_.deltastat;
      off += d_.q[i];
    }
    ldlt_.analyzePattern(kkt_);
    pattern_ready_ = true;
  }

  int value_slot(int row, int col) const {
    for (int idx = kkt_.outerIndexPtr()[col]; idx < kkt_.outerIndexPtr()[col + 1]; ++idx)
      if (kkt_.innerIndexPtr()[idx] == row) return idx;
    throw std::logic_error("kkt entry not found");
  }

  void update_kkt_values(bool identity) {
    double* vals = kkt_.valuePtr();
    std::size_t slot = 0;
    for (int r = 0; r < d_.l; ++r)
      vals[dyn_index_[slot++]] = (identity ? -1.0 : -lp_w2_(r)) - st_.deltastat;
    for (int i = 0; i < nsoc_; ++i) {
      const int q = d_.q[i];
      const SocScaling& sc = soc_[i];
      const double e2 = identity ? 1.0 : sc.eta_square;
      vals[dyn_index_[slot++]] =
          -e2 * (identity ? 1.0 : sc.d1) - st_.deltastat;  // D(0,0)
      for (int k = 1; k < q; ++k)
        vals[dyn_index_[slot++]] = -e2 - st_.deltastat;  // D(k,k)
      for (int k = 1; k < q; ++k)
        vals[dyn_index_[slot++]] = identity ? 0.0 : -e2 * sc.v1 * sc.qv(k - 1);
      vals[dyn_index_[slot++]] = -e2;  // first auxiliary diagonal
      vals[dyn_index_[slot++]] = identity ? 0.0 : -e2 * sc.u0;
      for (int k = 1; k < q; ++k)
        vals[dyn_index_[slot++]] = identity ? 0.0 : -e2 * sc.u1 * sc.qv(k - 1);
      vals[dyn_index_[slot++]] = e2 + st_.deltastat;  // second auxiliary diagonal
    }
  }

  bool factorize() {
    ldlt_.factorize(kkt_);
    return ldlt_.info() == Eigen::Success;
  }

  // Expand/contract between plain cone rows (m) and the auxiliary layout.
  VectorXd expand(const VectorXd& v) const {
    VectorXd out = VectorXd::Zero(dim_k_ - d_.n - d_.p);
    for (int r = 0; r < d_.m; ++r) out(expanded_col_[r] - d_.n - d_.p) = v(r);
    return out;
  }
  VectorXd contract(const VectorXd& v) const {
    VectorXd out(d_.m);
    for (int r = 0; r < d_.m; ++r) out(r) = v(expanded_col_[r] - d_.n - d_.p);
    return out;
  }

  // Solve against the true (unregularized) KKT matrix via iterative
  // refinement around the factorization of the regularized one.
  VectorXd solve_kkt(const VectorXd& rhs) const {
    VectorXd x = ldlt_.solve(rhs);
    const double rhs_norm = rhs.lpNorm<Eigen::Infinity>();
    double prev_err = std::numeric_limits<double>::max();
    VectorXd best = x;
    for (int it = 0; it < st_.nitref; ++it) {
      VectorXd err = rhs - (kkt_.selfadjointView<Eigen::Upper>() * x -
                            reg_.cwiseProduct(x));
      const double nerr = err.lpNorm<Eigen::Infinity>();
      if (nerr < st_.linsysacc * (1.0 + rhs_norm)) return x;
      if (it > 0 && nerr > prev_err / st_.irerrfact) return best;
      if (nerr < prev_err) {
        best = x;
        prev_err = nerr;
      }
      x += ldlt_.solve(err);
    }
    VectorXd err = rhs - (kkt_.selfadjointView<Eigen::Upper>() * x -
                          reg_.cwiseProduct(x));
    return err.lpNorm<Eigen::Infinity>() < prev_err ? x : best;
  }

  bool initialize() {
    update_kkt_values(true);
    if (!factorize()) return false;

    VectorXd r1 = VectorXd::Zero(dim_k_);
    r1.segment(d_.n, d_.p) = d_.b;
    r1.tail(dim_k_ - d_.n - d_.p) = expand(d_.h);
    VectorXd sol1 = solve_kkt(r1);
    x_ = sol1.head(d_.n);
    s_ = bring_to_cone(-contract(sol1.tail(dim_k_ - d_.n - d_.p)));

    VectorXd r2 = VectorXd::Zero(dim_k_);
    r2.head(d_.n) = -d_.c;
    VectorXd sol2 = solve_kkt(r2);
    y_ = sol2.segment(d_.n, d_.p);
    z_ = bring_to_cone(contract(sol2.tail(dim_k_ - d_.n - d_.p)));

    tau_ = 1.0;
    kap_ = 1.0;
    resx0_ = std::max(1.0, d_.c.norm());
    resy0_ = std::max(1.0, d_.b.norm());
    resz0_ = std::max(1.0, d_.h.norm());
    return true;
  }

  void compute_residuals() {
    rx_ = -d_.A.transpose() * y_ - d_.G.transpose() * z_;
    hresx_ = rx_.norm();
    rx_ -= tau_ * d_.c;
    ry_ = d_.A * x_;
    hresy_ = ry_.norm();
    ry_ -= tau_ * d_.b;
    rz_ = s_ + d_.G * x_;
    hresz_ = rz_.norm();
    rz_ -= tau_ * d_.h;
    ct_x_ = d_.c.dot(x_);
    bt_y_ = d_.b.dot(y_);
    ht_z_ = d_.h.dot(z_);
    rt_ = kap_ + ct_x_ + bt_y_ + ht_z_;
  }

  void update_statistics() {
    const double sz = s_.dot(z_);
    mu_ = (sz + kap_ * tau_) / (degree_ + 1);
    kapovert_ = kap_ / tau_;
    pcost_ = ct_x_ / tau_;
    dcost_ = -(ht_z_ + bt_y_) / tau_;
    // Complementarity of the candidate solution (x, s, z) / tau, not of the
    // homogeneous iterate: when tau drifts far below one the raw product
    // understates the candidate's duality gap by tau^2, and a breakdown that
    // collapses tau can then masquerade as convergence.
    gap_ = sz / (tau_ * tau_);
    if (pcost_ < 0.0)
      relgap_ = gap_ / (-pcost_);
    else if (dcost_ > 0.0)
      relgap_ = gap_ / dcost_;
    else
      relgap_ = std::numeric_limits<double>::quiet_NaN();

    const double nx = x_.norm(), ny = y_.norm(), nz = z_.norm(), ns = s_.norm();
    const double nry = d_.p > 0 ? ry_.norm() / std::max(resy0_ + nx, 1.0) : 0.0;
    const double nrz = rz_.norm() / std::max(resz0_ + nx + ns, 1.0);
    pres_ = std::max(nry, nrz) / tau_;
    dres_ = rx_.norm() / std::max(resx0_ + ny + nz, 1.0) / tau_;

    pinfres_ = std::numeric_limits<double>::quiet_NaN();
    if ((bt_y_ + ht_z_) / std::max(ny + nz, 1.0) < -st_.reltol)
      pinfres_ = hresx_ / std::max(ny + nz, 1.0);
    dinfres_ = std::numeric_limits<double>::quiet_NaN();
    if (ct_x_ / std::max(nx, 1.0) < -st_.reltol)
      dinfres_ = std::max(hresy_ / std::max(nx, 1.0),
                          hresz_ / std::max(nx + ns, 1.0));
  }

#ifdef PFBWD_IPM_TRACE
  // Strict-complementarity scan of the current iterate: a cone where both
  // the primal slack and the dual sit on the boundary marks the degeneracy
  // that breaks the KKT conditioning as mu shrinks.
  void dump_cones() const {
    for (int i = 0; i < d_.l; ++i) {
      const double si = s_(i), zi = z_(i);
      if (std::max(si, zi) < 1e-3 * tau_)
        std::fprintf(stderr, "  lp[%3d]: s=%.2e z=%.2e  (both ~0)\n", i, si, zi);
    }
    int off = d_.l;
    for (int j = 0; j < nsoc_; ++j) {
      const int q = d_.q[j];
      const auto sk = s_.segment(off, q);
      const auto zk = z_.segment(off, q);
      const double sres = sk(0) - sk.tail(q - 1).norm();
      const double zres = zk(0) - zk.tail(q - 1).norm();
      std::fprintf(stderr,
                   "  soc[%2d] dim=%d: sres=%.2e zres=%.2e s0=%.2e z0=%.2e\n",
                   j, q, sres, zres, sk(0), zk(0));
      off += q;
    }
  }
#endif

  IpmStatus check_exit(bool reduced) const {
    const double feastol = reduced ? st_.feastol_inacc : st_.feastol;
    const double abstol = reduced ? st_.abstol_inacc : st_.abstol;
    const double reltol = reduced ? st_.reltol_inacc : st_.reltol;
    if ((-ct_x_ > 0.0 || -bt_y_ - ht_z_ >= -abstol) && pres_ < feastol &&
        dres_ < feastol && (gap_ < abstol || (!std::isnan(relgap_) && relgap_ < reltol)))
      return reduced ? IpmStatus::close_to_optimal : IpmStatus::optimal;
    if (!std::isnan(pinfres_) && pinfres_ < feastol && tau_ < kap_)
      return reduced ? IpmStatus::close_to_primal_infeasible
                     : IpmStatus::primal_infeasible;
    if (!std::isnan(dinfres_) && dinfres_ < feastol && tau_ < kap_)
      return reduced ? IpmStatus::close_to_dual_infeasible
                     : IpmStatus::dual_infeasible;
    return IpmStatus::maxit;  // keep iterating
  }

  double line_search(const VectorXd& ds_by_w, const VectorXd& w_dz, double tau,
                     double dtau, double kap, double dkap) const {
    double alpha = 2.0;
    for (int i = 0; i < d_.l; ++i) {
      if (ds_by_w(i) < 0.0) alpha = std::min(alpha, -lambda_(i) / ds_by_w(i));
      if (w_dz(i) < 0.0) alpha = std::min(alpha, -lambda_(i) / w_dz(i));
    }
    if (dtau < 0.0) alpha = std::min(alpha, -tau / dtau);
    if (dkap < 0.0) alpha = std::min(alpha, -kap / dkap);

    int off = d_.l;
    double conic_step = 0.0;
    for (int i = 0; i < nsoc_; ++i) {
      const int q = d_.q[i];
      const auto lk = lambda_.segment(off, q);
      const auto dsk = ds_by_w.segment(off, q);
      const auto dzk = w_dz.segment(off, q);
      const double lknorm2 = soc_residual(lk);
      if (lknorm2 <= 0.0) return st_.stepmin;
      const double lknorm = std::sqrt(lknorm2);
      VectorXd lkbar = lk / lknorm;
      const auto project = [&](const Eigen::Ref<const VectorXd>& dk) {
        const double lkbar_times_dk =
            lkbar(0) * dk(0) - lkbar.tail(q - 1).dot(dk.tail(q - 1));
        const double factor = (lkbar_times_dk + dk(0)) / (lkbar(0) + 1.0);
        const double rho0 = lkbar_times_dk / lknorm;
        const double rho1 =
            (dk.tail(q - 1) - factor * lkbar.tail(q - 1)).norm() / lknorm;
        return rho1 - rho0;
      };
      conic_step = std::max({conic_step, project(dsk), project(dzk)});
      off += q;
    }
    if (conic_step > 0.0) alpha = std::min(alpha, 1.0 / conic_step);
    return std::min(alpha, 1.0);
  }

  const StandardForm& d_;
  Settings st_;
  int nsoc_ = 0, degree_ = 0, dim_k_ = 0, iter_ = 0;
  std::vector<int> expanded_col_;
  std::vector<std::pair<int, int>> dyn_entries_;
  std::vector<int> dyn_index_;
  SpMat kkt_;
  VectorXd reg_;
  Eigen::SimplicialLDLT<SpMat, Eigen::Upper> ldlt_;
  bool pattern_ready_ = false;

  VectorXd lp_w2_, lambda_;
  std::vector<SocScaling> soc_;
  VectorXd x_, y_, z_, s_;
  double tau_ = 1.0, kap_ = 1.0;
  VectorXd rx_, ry_, rz_;
  double hresx_ = 0, hresy_ = 0, hresz_ = 0, rt_ = 0;
  double ct_x_ = 0, bt_y_ = 0, ht_z_ = 0;
  double resx0_ = 1, resy0_ = 1, resz0_ = 1;
  double gap_ = 0, mu_ = 0, kapovert_ = 0, pcost_ = 0, dcost_ = 0;
  double relgap_ = 0, pres_ = 0, dres_ = 0, pinfres_ = 0, dinfres_ = 0;
};

// --- lowering and equilibration ---------------------------------------------

struct Lowered {
  StandardForm sf;
  std::vector<double> xe;  // column scalings applied (divisors on x)
};

inline void append_expr_rows(std::vector<Eigen::Triplet<double>>& trips, int row,
                             const LinExpr& e, double sign) {
  for (const LinTerm& t : e.terms) trips.emplace_back(row, t.var, sign * t.coeff);
}

inline StandardForm lower(const ConicProgram& p) {
  StandardForm sf;
  sf.n = p.num_vars();
  sf.p = static_cast<int>(p.equalities().size());

  std::vector<Eigen::Triplet<double>> at, gt;
  std::vector<double> bvals, hvals;
  int arow = 0;
  for (const LinExpr& e : p.equalities()) {
    append_expr_rows(at, arow, e, 1.0);
    bvals.push_back(-e.constant);
    ++arow;
  }

  int grow = 0;
  auto push_lp = [&](const LinExpr& e) {  // e <= 0  =>  s = -e >= 0
    append_expr_rows(gt, grow, e, 1.0);
    hvals.push_back(-e.constant);
    ++grow;
  };
  for (const LinExpr& e : p.inequalities()) push_lp(e);
  for (int j = 0; j < sf.n; ++j) {
    if (p.lower_bounds()[j] > -kInf)
      push_lp(LinExpr::variable(j, -1.0) + LinExpr(p.lower_bounds()[j]));
    if (p.upper_bounds()[j] < kInf)
      push_lp(LinExpr::variable(j) - LinExpr(p.upper_bounds()[j]));
  }
  sf.l = grow;

  auto push_cone_row = [&](const LinExpr& e) {  // s_row = e
    append_expr_rows(gt, grow, e, -1.0);
    hvals.push_back(e.constant);
    ++grow;
  };
  for (const SocConstraint& c : p.socs()) {
    push_cone_row(c.rhs);
    for (const LinExpr& e : c.body) push_cone_row(e);
    sf.q.push_back(static_cast<int>(c.body.size()) + 1);
  }
  for (const RsocConstraint& c : p.rsocs()) {
    push_cone_row(c.a + c.b);
    push_cone_row(c.a - c.b);
    for (const LinExpr& e : c.body) push_cone_row(2.0 * e);
    sf.q.push_back(static_cast<int>(c.body.size()) + 2);
  }
  sf.m = grow;

  sf.A.resize(sf.p, sf.n);
  sf.A.setFromTriplets(at.begin(), at.end());
  sf.A.makeCompressed();
  sf.G.resize(sf.m, sf.n);
  sf.G.setFromTriplets(gt.begin(), gt.end());
  sf.G.makeCompressed();
  sf.b = VectorXd::Zero(sf.p);
  for (int i = 0; i < sf.p; ++i) sf.b(i) = bvals[i];
  sf.h = VectorXd::Zero(sf.m);
  for (int i = 0; i < sf.m; ++i) sf.h(i) = hvals[i];
  sf.c = VectorXd::Zero(sf.n);
  for (int j = 0; j < sf.n; ++j) sf.c(j) = p.objective()[j];
  return sf;
}

// Ruiz-style equilibration; SOC rows share one scaling factor so cones are
// preserved. Returns the divisor vectors applied to x-columns.
inline std::vector<double> equilibrate(StandardForm& sf, int iters) {
  VectorXd xe = VectorXd::Ones(sf.n);
  VectorXd ae = VectorXd::Ones(sf.p);
  VectorXd ge = VectorXd::Ones(sf.m);

  for (int it = 0; it < iters; ++it) {
    VectorXd colmax = VectorXd::Zero(sf.n);
    VectorXd arowmax = VectorXd::Zero(sf.p);
    VectorXd growmax = VectorXd::Zero(sf.m);
    for (int col = 0; col < sf.n; ++col) {
      for (SpMat::InnerIterator itr(sf.A, col); itr; ++itr) {
        const double v = std::abs(itr.value());
        colmax(col) = std::max(colmax(col), v);
        arowmax(itr.row()) = std::max(arowmax(itr.row()), v);
      }
      for (SpMat::InnerIterator itr(sf.G, col); itr; ++itr) {
        const double v = std::abs(itr.value());
        colmax(col) = std::max(colmax(col), v);
        growmax(itr.row()) = std::max(growmax(itr.row()), v);
      }
    }
    // One factor per SOC block.
    int off = sf.l;
    for (int q : sf.q) {
      const double blockmax = growmax.segment(off, q).maxCoeff();
      growmax.segment(off, q).setConstant(blockmax);
      off += q;
    }
    auto factor = [](double v) { return v > 0.0 ? std::sqrt(v) : 1.0; };
    VectorXd cf = colmax.unaryExpr(factor);
    VectorXd af = arowmax.unaryExpr(factor);
    VectorXd gf = growmax.unaryExpr(factor);
    for (int col = 0; col < sf.n; ++col) {
      for (SpMat::InnerIterator itr(sf.A, col); itr; ++itr)
        itr.valueRef() /= af(itr.row()) * cf(col);
      for (SpMat::InnerIterator itr(sf.G, col); itr; ++itr)
        itr.valueRef() /= gf(itr.row()) * cf(col);
    }
    xe = xe.cwiseProduct(cf);
    ae = ae.cwiseProduct(af);
    ge = ge.cwiseProduct(gf);
  }
  sf.c = sf.c.cwiseQuotient(xe);
  sf.b = sf.b.cwiseQuotient(ae);
  sf.h = sf.h.cwiseQuotient(ge);
  return {xe.data(), xe.data() + sf.n};
}

}  // namespace detail

struct SolverOptions {
  double tol = 1e-8;
  int max_iterations = 100;
  bool equilibrate = true;
};

// Warm-start hints are accepted for interface compatibility but ignored: the
// interior-point backend always cold-starts, which keeps solves reproducible.
inline SolveReport solve(const ConicProgram& prog, const SolverOptions& opts = {},
                         const std::vector<double>* /*warm_start_hint*/ = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  detail::StandardForm sf = detail::lower(prog);
  std::vector<double> xe(sf.n, 1.0);
  if (opts.equilibrate) xe = detail::equilibrate(sf, 3);

  detail::Settings st;
  st.feastol = opts.tol;
  st.abstol = opts.tol;
  st.reltol = opts.tol;
  st.feastol_inacc = std::max(1e-4, std::sqrt(opts.tol));
  st.abstol_inacc = std::max(5e-5, std::sqrt(opts.tol));
  st.reltol_inacc = std::max(5e-5, std::sqrt(opts.tol));
  st.maxit = opts.max_iterations;

  detail::Ipm ipm(sf, st);
  detail::IpmResult res = ipm.run();

  SolveReport rep;
  rep.iterations = res.iterations;
  using detail::IpmStatus;
  switch (res.status) {
    case IpmStatus::optimal:
      rep.status = SolveStatus::optimal;
      break;
    case IpmStatus::close_to_optimal:
      rep.status = SolveStatus::optimal;
      rep.reduced_accuracy = true;
      break;
    case IpmStatus::primal_infeasible:
    case IpmStatus::close_to_primal_infeasible:
      rep.status = SolveStatus::infeasible;
      rep.reduced_accuracy = res.status == IpmStatus::close_to_primal_infeasible;
      break;
    case IpmStatus::dual_infeasible:
    case IpmStatus::close_to_dual_infeasible:
      rep.status = SolveStatus::unbounded;
      rep.reduced_accuracy = res.status == IpmStatus::close_to_dual_infeasible;
      break;
    default:
      rep.status = SolveStatus::numerical_limit;
  }

  if (rep.status == SolveStatus::optimal) {
    rep.x.resize(sf.n);
    for (int j = 0; j < sf.n; ++j) rep.x[j] = res.x(j) / xe[j] / res.tau;
    rep.objective = prog.objective_value(rep.x);
    rep.max_violation = verify_point(prog, rep.x).max_violation;
  }
  rep.solve_time_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
  return rep;
}

}  // namespace pfbwd::conic
