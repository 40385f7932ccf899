#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pfbwd::conic {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct LinTerm {
  int var;
  double coeff;
};

// Sparse affine expression sum_i coeff_i * x_{var_i} + constant.
struct LinExpr {
  std::vector<LinTerm> terms;
  double constant = 0.0;

  LinExpr() = default;
  /*implicit*/ LinExpr(double c) : constant(c) {}

  static LinExpr variable(int v, double coeff = 1.0) {
    LinExpr e;
    e.terms.push_back({v, coeff});
    return e;
  }

  LinExpr& operator+=(const LinExpr& o) {
    terms.insert(terms.end(), o.terms.begin(), o.terms.end());
    constant += o.constant;
    return *this;
  }
  LinExpr& operator-=(const LinExpr& o) {
    for (const LinTerm& t : o.terms) terms.push_back({t.var, -t.coeff});
    constant -= o.constant;
    return *this;
  }
  LinExpr& operator*=(double a) {
    for (LinTerm& t : terms) t.coeff *= a;
    constant *= a;
    return *this;
  }

  double evaluate(const std::vector<double>& x) const {
    double v = constant;
    for (const LinTerm& t : terms) v += t.coeff * x.at(t.var);
    return v;
  }
  double term_magnitude(const std::vector<double>& x) const {
    double v = std::abs(constant);
    for (const LinTerm& t : terms) v += std::abs(t.coeff * x.at(t.var));
    return v;
  }
};

inline LinExpr operator+(LinExpr a, const LinExpr& b) { return a += b; }
inline LinExpr operator-(LinExpr a, const LinExpr& b) { return a -= b; }
inline LinExpr operator*(double a, LinExpr e) { return e *= a; }
inline LinExpr operator-(LinExpr e) { return e *= -1.0; }

// Second-order cone membership ||body|| <= rhs.
struct SocConstraint {
  std::vector<LinExpr> body;
  LinExpr rhs;
};

// Rotated cone ||body||^2 <= a * b with a, b >= 0.
struct RsocConstraint {
  std::vector<LinExpr> body;
  LinExpr a;
  LinExpr b;
};

// Conic program over real variables:
//   minimize    obj' x + obj_const
//   subject to  eq_i(x)  = 0
//               ineq_i(x) <= 0
//               SOC / rotated-SOC memberships
//               lb <= x <= ub (infinite bounds allowed)
class ConicProgram {
 public:
  int add_var(double lb = -kInf, double ub = kInf) {
    lb_.push_back(lb);
    ub_.push_back(ub);
    obj_.push_back(0.0);
    return static_cast<int>(lb_.size()) - 1;
  }
  std::vector<int> add_vars(int n, double lb = -kInf, double ub = kInf) {
    std::vector<int> ids;
    for (int i = 0; i < n; ++i) ids.push_back(add_var(lb, ub));
    return ids;
  }

  int num_vars() const { return static_cast<int>(lb_.size()); }

  void set_objective_coeff(int var, double c) { obj_.at(var) = c; }
  void add_objective_term(int var, double c) { obj_.at(var) += c; }
  void add_objective_constant(double c) { obj_const_ += c; }

  void add_eq(LinExpr e) { eqs_.push_back(std::move(e)); }           // e == 0
  void add_ineq(LinExpr e) { ineqs_.push_back(std::move(e)); }       // e <= 0
  void add_soc(std::vector<LinExpr> body, LinExpr rhs) {
    socs_.push_back({std::move(body), std::move(rhs)});
  }
  void add_rsoc(std::vector<LinExpr> body, LinExpr a, LinExpr b) {
    rsocs_.push_back({std::move(body), std::move(a), std::move(b)});
  }

  const std::vector<double>& objective() const { return obj_; }
  double objective_constant() const { return obj_const_; }
  const std::vector<double>& lower_bounds() const { return lb_; }
  const std::vector<double>& upper_bounds() const { return ub_; }
  const std::vector<LinExpr>& equalities() const { return eqs_; }
  const std::vector<LinExpr>& inequalities() const { return ineqs_; }
  const std::vector<SocConstraint>& socs() const { return socs_; }
  const std::vector<RsocConstraint>& rsocs() const { return rsocs_; }

  double objective_value(const std::vector<double>& x) const {
    double v = obj_const_;
    for (int j = 0; j < num_vars(); ++j) v += obj_[j] * x.at(j);
    return v;
  }

  void dump(std::ostream& os) const;

 private:
  std::vector<double> obj_;
  double obj_const_ = 0.0;
  std::vector<double> lb_, ub_;
  std::vector<LinExpr> eqs_;
  std::vector<LinExpr> ineqs_;
  std::vector<SocConstraint> socs_;
  std::vector<RsocConstraint> rsocs_;
};

// ---------------------------------------------------------------------------
// Builders

// Appends slack variables and rows enforcing exp(t) <= 1 + alpha through a
// chain of nu+4 three-dimensional second-order cones plus two linear rows.
// The chain squares a degree-4 base approximation nu times, so the modeling
// error shrinks like (t/2^nu)^5; nu = 6 keeps it below 1e-5 relative for
// t in [0, 5].
inline std::vector<int> exp_chain(ConicProgram& p, const LinExpr& t,
                                  const LinExpr& alpha, int nu = 6) {
  if (nu < 1) throw std::invalid_argument("exp_chain: nu must be >= 1");
  const std::vector<int> k = p.add_vars(nu + 4);
  auto kv = [&](int i) { return LinExpr::variable(k.at(i - 1)); };  // 1-based
  const double p2nm1 = std::pow(2.0, nu - 1);
  const double p2n = std::pow(2.0, nu);

  // ||[2 + t/2^(nu-1), 1 - k1]|| <= 1 + k1
  p.add_soc({2.0 + (1.0 / p2nm1) * t, 1.0 - kv(1)}, 1.0 + kv(1));
  // ||[5/3 + t/2^nu, 1 - k2]|| <= 1 + k2
  p.add_soc({5.0 / 3.0 + (1.0 / p2n) * t, 1.0 - kv(2)}, 1.0 + kv(2));
  // ||[2 k1, 1 - k3]|| <= 1 + k3
  p.add_soc({2.0 * kv(1), 1.0 - kv(3)}, 1.0 + kv(3));
  // 19/72 + k2 + k3/24 <= k4
  p.add_ineq(19.0 / 72.0 + kv(2) + (1.0 / 24.0) * kv(3) - kv(4));
  // Repeated squaring: k_{i-1}^2 <= k_i for i = 5 .. nu+4.
  for (int i = 5; i <= nu + 4; ++i)
    p.add_soc({2.0 * kv(i - 1), 1.0 - kv(i)}, 1.0 + kv(i));
  // k_{nu+4} <= 1 + alpha
  p.add_ineq(kv(nu + 4) - 1.0 - alpha);
  return k;
}

// Appends the hypograph of the geometric mean: g <= (prod_i t_i)^(1/n).
// The factor list is padded to a power of two with copies of g itself, which
// keeps the bound exact (g^(2^L) <= prod t_i * g^(pad) iff g^n <= prod t_i).
inline void geomean_hypograph(ConicProgram& p, const std::vector<int>& t_vars,
                              int g_var) {
  if (t_vars.empty()) throw std::invalid_argument("geomean_hypograph: no factors");
  if (t_vars.size() == 1) {
    p.add_ineq(LinExpr::variable(g_var) - LinExpr::variable(t_vars[0]));
    return;
  }
  std::size_t padded = 1;
  while (padded < t_vars.size()) padded *= 2;
  std::vector<int> level = t_vars;
  level.resize(padded, g_var);
  while (level.size() > 2) {
    std::vector<int> next;
    for (std::size_t i = 0; i < level.size(); i += 2) {
      const int y = p.add_var(0.0);
      p.add_rsoc({LinExpr::variable(y)}, LinExpr::variable(level[i]),
                 LinExpr::variable(level[i + 1]));
      next.push_back(y);
    }
    level = std::move(next);
  }
  p.add_rsoc({LinExpr::variable(g_var)}, LinExpr::variable(level[0]),
             LinExpr::variable(level[1]));
}

// Appends s >= ||expr||^2 as the rotated cone ||expr||^2 <= s * 1.
inline void quad_epigraph(ConicProgram& p, std::vector<LinExpr> expr, int s_var) {
  p.add_rsoc(std::move(expr), LinExpr::variable(s_var), LinExpr(1.0));
}

// ---------------------------------------------------------------------------
// Independent feasibility re-check: walks the IR and measures the worst
// scaled violation of the candidate point. Deliberately shares no code with
// the solver's standard-form lowering.

struct VerifyReport {
  double max_violation = 0.0;
  bool ok(double tol) const { return max_violation <= tol; }
};

inline VerifyReport verify_point(const ConicProgram& p, const std::vector<double>& x) {
  VerifyReport rep;
  auto track = [&rep](double viol) { rep.max_violation = std::max(rep.max_violation, viol); };

  for (const LinExpr& e : p.equalities())
    track(std::abs(e.evaluate(x)) / (1.0 + e.term_magnitude(x)));
  for (const LinExpr& e : p.inequalities())
    track(e.evaluate(x) / (1.0 + e.term_magnitude(x)));
  for (int j = 0; j < p.num_vars(); ++j) {
    const double scale = 1.0 + std::abs(x[j]);
    if (p.lower_bounds()[j] > -kInf)
      track((p.lower_bounds()[j] - x[j]) / (scale + std::abs(p.lower_bounds()[j])));
    if (p.upper_bounds()[j] < kInf)
      track((x[j] - p.upper_bounds()[j]) / (scale + std::abs(p.upper_bounds()[j])));
  }
  for (const SocConstraint& c : p.socs()) {
    double nrm = 0.0;
    for (const LinExpr& e : c.body) {
      const double v = e.evaluate(x);
      nrm += v * v;
    }
    nrm = std::sqrt(nrm);
    track((nrm - c.rhs.evaluate(x)) / (1.0 + nrm));
  }
  for (const RsocConstraint& c : p.rsocs()) {
    double nrm2 = 0.0;
    for (const LinExpr& e : c.body) {
      const double v = e.evaluate(x);
      nrm2 += v * v;
    }
    const double a = c.a.evaluate(x);
    const double b = c.b.evaluate(x);
    const double scale = 1.0 + nrm2 + std::abs(a * b);
    track((nrm2 - a * b) / scale);
    track(-a / (1.0 + std::abs(a)));
    track(-b / (1.0 + std::abs(b)));
  }
  return rep;
}

inline void write_expr(std::ostream& os, const LinExpr& e) {
  char buf[64];
  bool first = true;
  for (const LinTerm& t : e.terms) {
    std::snprintf(buf, sizeof(buf), "%s%.12g*x%d", first ? "" : " + ", t.coeff, t.var);
    os << buf;
    first = false;
  }
  if (e.constant != 0.0 || first) {
    std::snprintf(buf, sizeof(buf), "%s%.12g", first ? "" : " + ", e.constant);
    os << buf;
  }
}

inline void ConicProgram::dump(std::ostream& os) const {
  os << "vars " << num_vars() << "\nminimize ";
  LinExpr obj;
  obj.constant = obj_const_;
  for (int j = 0; j < num_vars(); ++j)
    if (obj_[j] != 0.0) obj.terms.push_back({j, obj_[j]});
  write_expr(os, obj);
  os << "\n";
  for (int j = 0; j < num_vars(); ++j)
    if (lb_[j] > -kInf || ub_[j] < kInf)
      os << "bound x" << j << " in [" << lb_[j] << ", " << ub_[j] << "]\n";
  for (const LinExpr& e : eqs_) {
    os << "eq: ";
    write_expr(os, e);
    os << " = 0\n";
  }
  for (const LinExpr& e : ineqs_) {
    os << "ineq: ";
    write_expr(os, e);
    os << " <= 0\n";
  }
  for (const SocConstraint& c : socs_) {
    os << "soc: ||";
    for (std::size_t i = 0; i < c.body.size(); ++i) {
      if (i) os << "; ";
      write_expr(os, c.body[i]);
    }
    os << "|| <= ";
    write_expr(os, c.rhs);
    os << "\n";
  }
  for (const RsocConstraint& c : rsocs_) {
    os << "rsoc: ||";
    for (std::size_t i = 0; i < c.body.size(); ++i) {
      if (i) os << "; ";
      write_expr(os, c.body[i]);
    }
    os << "||^2 <= (";
    write_expr(os, c.a);
    os << ")*(";
    write_expr(os, c.b);
    os << ")\n";
  }
}

}  // namespace pfbwd::conic
