#include "lem/conic.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

namespace lem::conic {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Layout {
  int n = 0;   // variables
  int p = 0;   // equality rows
  int ml = 0;  // orthant slack rows
  int m = 0;   // total slack rows (orthant + cone blocks)
  int degree = 0;
  std::vector<int> off;  // cone block offsets within the slack vector
  std::vector<int> dim;  // cone block sizes (bound entry + norm rows)
};

struct Data {
  Layout lay;
  Eigen::VectorXd pdiag;  // Hessian of the objective (2 * hess_diag)
  Eigen::VectorXd q, b, h;
  Eigen::SparseMatrix<double> A, G;
};

void check_terms(const Terms& t, int n, const char* where) {
  for (const auto& [col, coef] : t) {
    if (col < 0 || col >= n) throw std::invalid_argument(std::string(where) + ": variable index out of range");
    if (!std::isfinite(coef)) throw std::invalid_argument(std::string(where) + ": non-finite coefficient");
  }
}

Data build(const ConicProblem& prob) {
  if (prob.n <= 0) throw std::invalid_argument("conic problem has no variables");
  if (static_cast<int>(prob.hess_diag.size()) != prob.n || static_cast<int>(prob.lin.size()) != prob.n)
    throw std::invalid_argument("objective vectors do not match the variable count");
  for (double v : prob.hess_diag)
    if (v < 0.0 || !std::isfinite(v)) throw std::invalid_argument("objective curvature must be nonnegative");

  Data d;
  d.lay.n = prob.n;
  d.lay.p = static_cast<int>(prob.equalities.size());
  d.lay.ml = static_cast<int>(prob.inequalities.size());
  d.pdiag.resize(prob.n);
  d.q.resize(prob.n);
  for (int i = 0; i < prob.n; ++i) {
    d.pdiag[i] = 2.0 * prob.hess_diag[static_cast<std::size_t>(i)];
    d.q[i] = prob.lin[static_cast<std::size_t>(i)];
  }

  std::vector<Eigen::Triplet<double>> ta, tg;
  d.b.resize(d.lay.p);
  for (int r = 0; r < d.lay.p; ++r) {
    const auto& row = prob.equalities[static_cast<std::size_t>(r)];
    check_terms(row.terms, prob.n, "equality");
    for (const auto& [col, coef] : row.terms) ta.emplace_back(r, col, coef);
    d.b[r] = row.rhs;
  }

  int m = d.lay.ml;
  for (const auto& c : prob.cones) {
    if (c.row_terms.size() != c.row_const.size())
      throw std::invalid_argument("cone rows and constants differ in length");
    d.lay.off.push_back(m);
    d.lay.dim.push_back(1 + static_cast<int>(c.row_terms.size()));
    m += 1 + static_cast<int>(c.row_terms.size());
  }
  d.lay.m = m;
  d.lay.degree = d.lay.ml + static_cast<int>(prob.cones.size());

  d.h.resize(m);
  for (int r = 0; r < d.lay.ml; ++r) {
    const auto& row = prob.inequalities[static_cast<std::size_t>(r)];
    check_terms(row.terms, prob.n, "inequality");
    for (const auto& [col, coef] : row.terms) tg.emplace_back(r, col, coef);
    d.h[r] = row.rhs;
  }
  for (std::size_t k = 0; k < prob.cones.size(); ++k) {
    const auto& c = prob.cones[k];
    const int base = d.lay.off[k];
    check_terms(c.bound_terms, prob.n, "cone bound");
    for (const auto& [col, coef] : c.bound_terms) tg.emplace_back(base, col, -coef);
    d.h[base] = c.bound_const;
    for (std::size_t r = 0; r < c.row_terms.size(); ++r) {
      check_terms(c.row_terms[r], prob.n, "cone row");
      for (const auto& [col, coef] : c.row_terms[r]) tg.emplace_back(base + 1 + static_cast<int>(r), col, -coef);
      d.h[base + 1 + static_cast<int>(r)] = c.row_const[r];
    }
  }

  d.A.resize(d.lay.p, d.lay.n);
  d.A.setFromTriplets(ta.begin(), ta.end());
  d.G.resize(d.lay.m, d.lay.n);
  d.G.setFromTriplets(tg.begin(), tg.end());
  return d;
}

// --- second-order cone algebra ------------------------------------------

double jdot(const Eigen::Ref<const Eigen::VectorXd>& u, const Eigen::Ref<const Eigen::VectorXd>& v) {
  return u[0] * v[0] - u.tail(u.size() - 1).dot(v.tail(v.size() - 1));
}

struct SocScaling {
  double beta = 1.0;
  Eigen::VectorXd v;  // hyperbolic Householder direction, v'Jv = 1
};

struct Scaling {
  Eigen::VectorXd dl;  // orthant scaling, w_i = sqrt(s_i / z_i)
  std::vector<SocScaling> soc;
  Eigen::VectorXd lambda;  // scaled point W z = W^{-1} s
};

// H u with H = 2 v v' - J
Eigen::VectorXd householder(const Eigen::VectorXd& v, const Eigen::Ref<const Eigen::VectorXd>& u) {
  Eigen::VectorXd out = 2.0 * v.dot(u) * v;
  out[0] -= u[0];
  out.tail(out.size() - 1) += u.tail(u.size() - 1);
  return out;
}

Eigen::VectorXd apply_w(const Layout& lay, const Scaling& sc, const Eigen::VectorXd& u) {
  Eigen::VectorXd out(lay.m);
  out.head(lay.ml) = sc.dl.cwiseProduct(u.head(lay.ml));
  for (std::size_t k = 0; k < sc.soc.size(); ++k) {
    const int base = lay.off[k], dim = lay.dim[k];
    out.segment(base, dim) = sc.soc[k].beta * householder(sc.soc[k].v, u.segment(base, dim));
  }
  return out;
}

Eigen::VectorXd apply_w_inv(const Layout& lay, const Scaling& sc, const Eigen::VectorXd& u) {
  Eigen::VectorXd out(lay.m);
  out.head(lay.ml) = u.head(lay.ml).cwiseQuotient(sc.dl);
  for (std::size_t k = 0; k < sc.soc.size(); ++k) {
    const int base = lay.off[k], dim = lay.dim[k];
    Eigen::VectorXd t = u.segment(base, dim);
    t.tail(dim - 1) *= -1.0;  // J u
    Eigen::VectorXd w = householder(sc.soc[k].v, t);
    w.tail(dim - 1) *= -1.0;  // J (H (J u))
    out.segment(base, dim) = w / sc.soc[k].beta;
  }
  return out;
}

Eigen::VectorXd apply_w2(const Layout& lay, const Scaling& sc, const Eigen::VectorXd& u) {
  Eigen::VectorXd out(lay.m);
  out.head(lay.ml) = sc.dl.array().square().matrix().cwiseProduct(u.head(lay.ml));
  for (std::size_t k = 0; k < sc.soc.size(); ++k) {
    const int base = lay.off[k], dim = lay.dim[k];
    const double b2 = sc.soc[k].beta * sc.soc[k].beta;
    out.segment(base, dim) = b2 * householder(sc.soc[k].v, householder(sc.soc[k].v, u.segment(base, dim)));
  }
  return out;
}

bool compute_scaling(const Layout& lay, const Eigen::VectorXd& s, const Eigen::VectorXd& z, Scaling& sc) {
  sc.dl.resize(lay.ml);
  for (int i = 0; i < lay.ml; ++i) {
    if (s[i] <= 0.0 || z[i] <= 0.0) return false;
    sc.dl[i] = std::sqrt(s[i] / z[i]);
  }
  sc.soc.assign(lay.off.size(), SocScaling{});
  for (std::size_t k = 0; k < lay.off.size(); ++k) {
    const int base = lay.off[k], dim = lay.dim[k];
    const auto sk = s.segment(base, dim);
    const auto zk = z.segment(base, dim);
    const double js = jdot(sk, sk), jz = jdot(zk, zk);
    if (js <= 0.0 || jz <= 0.0 || sk[0] <= 0.0 || zk[0] <= 0.0) return false;
    const double a = std::sqrt(js), bb = std::sqrt(jz);
    const double gamma = std::sqrt((1.0 + sk.dot(zk) / (a * bb)) / 2.0);
    Eigen::VectorXd v = zk / bb;
    v.tail(dim - 1) *= -1.0;  // J zbar
    v += sk / a;
    v /= 2.0 * gamma;
    v[0] += 1.0;
    v /= std::sqrt(2.0 * v[0]);
    sc.soc[k].beta = std::sqrt(a / bb);
    sc.soc[k].v = std::move(v);
  }
  sc.lambda = apply_w(lay, sc, z);
  return true;
}

Scaling identity_scaling(const Layout& lay) {
  Scaling sc;
  sc.dl = Eigen::VectorXd::Ones(lay.ml);
  sc.soc.assign(lay.off.size(), SocScaling{});
  for (std::size_t k = 0; k < lay.off.size(); ++k) {
    sc.soc[k].beta = 1.0;
    sc.soc[k].v = Eigen::VectorXd::Zero(lay.dim[k]);
    sc.soc[k].v[0] = 1.0;
  }
  return sc;
}

Eigen::VectorXd cone_identity(const Layout& lay) {
  Eigen::VectorXd e = Eigen::VectorXd::Zero(lay.m);
  e.head(lay.ml).setOnes();
  for (std::size_t k = 0; k < lay.off.size(); ++k) e[lay.off[k]] = 1.0;
  return e;
}

Eigen::VectorXd jordan_mul(const Layout& lay, const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  Eigen::VectorXd out(lay.m);
  out.head(lay.ml) = u.head(lay.ml).cwiseProduct(v.head(lay.ml));
  for (std::size_t k = 0; k < lay.off.size(); ++k) {
    const int base = lay.off[k], dim = lay.dim[k];
    const auto uk = u.segment(base, dim);
    const auto vk = v.segment(base, dim);
    out[base] = uk.dot(vk);
    out.segment(base + 1, dim - 1) = uk[0] * vk.tail(dim - 1) + vk[0] * uk.tail(dim - 1);
  }
  return out;
}

// w with lambda o w = d (inverse of the arrow operator)
Eigen::VectorXd jordan_div(const Layout& lay, const Eigen::VectorXd& lambda, const Eigen::VectorXd& d) {
  Eigen::VectorXd out(lay.m);
  out.head(lay.ml) = d.head(lay.ml).cwiseQuotient(lambda.head(lay.ml));
  for (std::size_t k = 0; k < lay.off.size(); ++k) {
    const int base = lay.off[k], dim = lay.dim[k];
    const auto lk = lambda.segment(base, dim);
    const auto dk = d.segment(base, dim);
    const double det = jdot(lk, lk);
    const double w0 = (lk[0] * dk[0] - lk.tail(dim - 1).dot(dk.tail(dim - 1))) / det;
    out[base] = w0;
    out.segment(base + 1, dim - 1) = (dk.tail(dim - 1) - w0 * lk.tail(dim - 1)) / lk[0];
  }
  return out;
}

// Largest alpha with u + alpha * du staying inside the cone (exact boundary step).
double max_step(const Layout& lay, const Eigen::VectorXd& u, const Eigen::VectorXd& du) {
  double amax = kInf;
  for (int i = 0; i < lay.ml; ++i)
    if (du[i] < 0.0) amax = std::min(amax, -u[i] / du[i]);
  for (std::size_t k = 0; k < lay.off.size(); ++k) {
    const int base = lay.off[k], dim = lay.dim[k];
    const auto uk = u.segment(base, dim);
    const auto dk = du.segment(base, dim);
    if (dk[0] < 0.0) amax = std::min(amax, -uk[0] / dk[0]);
    const double a0 = jdot(uk, uk), a1 = jdot(uk, dk), a2 = jdot(dk, dk);
    if (std::abs(a2) < 1e-300) {
      if (a1 < 0.0) amax = std::min(amax, -a0 / (2.0 * a1));
      continue;
    }
    const double disc = a1 * a1 - a2 * a0;
    if (disc < 0.0) continue;  // the J-form never crosses zero
    const double sq = std::sqrt(disc);
    const double t = -(a1 + std::copysign(sq, a1));
    double r1 = t / a2, r2 = (t != 0.0) ? a0 / t : kInf;
    if (r1 > r2) std::swap(r1, r2);
    if (a2 > 0.0) {
      if (r1 > 0.0) amax = std::min(amax, r1);  // form dips negative between the roots
    } else {
      if (r2 > 0.0) amax = std::min(amax, r2);  // form negative beyond the larger root
    }
  }
  return amax;
}

bool interior(const Layout& lay, const Eigen::VectorXd& u) {
  for (int i = 0; i < lay.ml; ++i)
    if (u[i] <= 0.0) return false;
  for (std::size_t k = 0; k < lay.off.size(); ++k) {
    const auto uk = u.segment(lay.off[k], lay.dim[k]);
    if (uk[0] <= 0.0 || jdot(uk, uk) <= 0.0) return false;
  }
  return true;
}

// --- KKT system -----------------------------------------------------------

Eigen::VectorXd apply_kkt(const Data& d, const Scaling& sc, const Eigen::VectorXd& u) {
  const Layout& lay = d.lay;
  Eigen::VectorXd out(lay.n + lay.p + lay.m);
  const auto x = u.head(lay.n);
  out.head(lay.n) = d.pdiag.cwiseProduct(x);
  if (lay.p > 0) {
    out.head(lay.n) += d.A.transpose() * u.segment(lay.n, lay.p);
    out.segment(lay.n, lay.p) = d.A * x;
  }
  if (lay.m > 0) {
    const auto z = u.tail(lay.m);
    out.head(lay.n) += d.G.transpose() * z;
    out.tail(lay.m) = d.G * x - apply_w2(lay, sc, z);
  }
  return out;
}

class KktSolver {
 public:
  explicit KktSolver(const Data& d) : d_(d) {}

  bool factor(const Scaling& sc, double delta) {
    const Layout& lay = d_.lay;
    const int nn = lay.n + lay.p + lay.m;
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(static_cast<std::size_t>(nn) + d_.A.nonZeros() + d_.G.nonZeros() + 64);
    for (int i = 0; i < lay.n; ++i) t.emplace_back(i, i, d_.pdiag[i] + delta);
    for (int c = 0; c < d_.A.outerSize(); ++c)
      for (Eigen::SparseMatrix<double>::InnerIterator it(d_.A, c); it; ++it)
        t.emplace_back(lay.n + static_cast<int>(it.row()), c, it.value());
    for (int i = 0; i < lay.p; ++i) t.emplace_back(lay.n + i, lay.n + i, -delta);
    for (int c = 0; c < d_.G.outerSize(); ++c)
      for (Eigen::SparseMatrix<double>::InnerIterator it(d_.G, c); it; ++it)
        t.emplace_back(lay.n + lay.p + static_cast<int>(it.row()), c, it.value());
    const int zb = lay.n + lay.p;
    for (int i = 0; i < lay.ml; ++i) t.emplace_back(zb + i, zb + i, -(sc.dl[i] * sc.dl[i] + delta));
    for (std::size_t k = 0; k < sc.soc.size(); ++k) {
      const int base = zb + lay.off[k], dim = lay.dim[k];
      const Eigen::VectorXd& v = sc.soc[k].v;
      Eigen::VectorXd jv = v;
      jv.tail(dim - 1) *= -1.0;
      Eigen::MatrixXd h2 = 4.0 * v.dot(v) * v * v.transpose() - 2.0 * (v * jv.transpose() + jv * v.transpose());
      h2.diagonal().array() += 1.0;
      h2 *= sc.soc[k].beta * sc.soc[k].beta;
      for (int i = 0; i < dim; ++i)
        for (int j = 0; j <= i; ++j) t.emplace_back(base + i, base + j, -h2(i, j) - (i == j ? delta : 0.0));
    }
    k_.resize(nn, nn);
    k_.setFromTriplets(t.begin(), t.end());
    if (!analyzed_) {
      ldlt_.analyzePattern(k_);
      analyzed_ = true;
    }
    ldlt_.factorize(k_);
    return ldlt_.info() == Eigen::Success;
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs, const Scaling& sc) const {
    Eigen::VectorXd sol = ldlt_.solve(rhs);
    for (int pass = 0; pass < 2; ++pass) {
      Eigen::VectorXd res = rhs - apply_kkt(d_, sc, sol);
      if (res.lpNorm<Eigen::Infinity>() <= 1e-14 * std::max(1.0, rhs.lpNorm<Eigen::Infinity>())) break;
      sol += ldlt_.solve(res);
    }
    return sol;
  }

 private:
  const Data& d_;
  Eigen::SparseMatrix<double> k_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower> ldlt_;
  bool analyzed_ = false;
};

double objective_value(const ConicProblem& prob, const Eigen::VectorXd& x) {
  double f = prob.constant;
  for (int i = 0; i < prob.n; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    f += prob.hess_diag[iu] * x[i] * x[i] + prob.lin[iu] * x[i];
  }
  return f;
}

void fill_duals(const Data& d, const Eigen::VectorXd& y, const Eigen::VectorXd& z, SolverResult& r) {
  r.eq_dual = y;
  r.ineq_dual = z.head(d.lay.ml);
  r.cone_dual.clear();
  for (std::size_t k = 0; k < d.lay.off.size(); ++k)
    r.cone_dual.push_back(z.segment(d.lay.off[k], d.lay.dim[k]));
}

// Shift a point into the cone interior along the identity element.
void center_point(const Layout& lay, Eigen::VectorXd& u) {
  double viol = -kInf;
  if (lay.ml > 0) viol = std::max(viol, -u.head(lay.ml).minCoeff());
  for (std::size_t k = 0; k < lay.off.size(); ++k) {
    const auto uk = u.segment(lay.off[k], lay.dim[k]);
    viol = std::max(viol, uk.tail(lay.dim[k] - 1).norm() - uk[0]);
  }
  if (viol >= -1e-8 * std::max(1.0, u.norm())) u += (1.0 + viol) * cone_identity(lay);
}

SolverResult solve_equality_qp(const ConicProblem& prob, const Data& d, double tol) {
  const Layout& lay = d.lay;
  KktSolver kkt(d);
  const Scaling sc = identity_scaling(lay);
  double delta = 1e-8;
  while (!kkt.factor(sc, delta)) {
    delta *= 100.0;
    if (delta > 1.0) throw std::runtime_error("singular equality system");
  }
  Eigen::VectorXd rhs(lay.n + lay.p);
  rhs.head(lay.n) = -d.q;
  rhs.tail(lay.p) = d.b;
  const Eigen::VectorXd sol = kkt.solve(rhs, sc);
  SolverResult r;
  r.x = sol.head(lay.n);
  r.eq_dual = sol.tail(lay.p);
  r.ineq_dual.resize(0);
  Eigen::VectorXd rx = d.pdiag.cwiseProduct(r.x) + d.q;
  if (lay.p > 0) rx += d.A.transpose() * r.eq_dual;
  double resid = rx.lpNorm<Eigen::Infinity>() / std::max(1.0, d.q.lpNorm<Eigen::Infinity>());
  if (lay.p > 0) {
    const double ry = (d.A * r.x - d.b).lpNorm<Eigen::Infinity>() / std::max(1.0, d.b.lpNorm<Eigen::Infinity>());
    resid = std::max(resid, ry);
  }
  r.tolerance_achieved = resid;
  r.status = resid <= std::max(tol, 1e-9) ? SolveStatus::optimal : SolveStatus::iteration_limit;
  r.objective = objective_value(prob, r.x);
  r.iterations = 1;
  return r;
}

SolverResult solve_impl(const ConicProblem& prob, double tol, int max_iter) {
  if (tol <= 0.0) throw std::invalid_argument("tolerance must be positive");
  if (max_iter < 0) throw std::invalid_argument("iteration limit must be nonnegative");
  const Data d = build(prob);
  const Layout& lay = d.lay;
  if (lay.m == 0) return solve_equality_qp(prob, d, tol);

  KktSolver kkt(d);
  double delta = 1e-8;
  Scaling sc = identity_scaling(lay);
  while (!kkt.factor(sc, delta)) {
    delta *= 100.0;
    if (delta > 1.0) throw std::runtime_error("singular initial system");
  }

  const int nn = lay.n + lay.p + lay.m;
  Eigen::VectorXd rhs(nn);
  rhs.head(lay.n) = -d.q;
  rhs.segment(lay.n, lay.p) = d.b;
  rhs.tail(lay.m) = d.h;
  Eigen::VectorXd sol = kkt.solve(rhs, sc);
  Eigen::VectorXd x = sol.head(lay.n);
  Eigen::VectorXd y = sol.segment(lay.n, lay.p);
  Eigen::VectorXd z = sol.tail(lay.m);
  Eigen::VectorXd s = -z;
  center_point(lay, s);
  center_point(lay, z);

  const Eigen::VectorXd e = cone_identity(lay);
  const double qn = std::max(1.0, d.q.lpNorm<Eigen::Infinity>());
  const double bn = std::max(1.0, lay.p > 0 ? d.b.lpNorm<Eigen::Infinity>() : 0.0);
  const double hn = std::max(1.0, d.h.lpNorm<Eigen::Infinity>());

  SolverResult r;
  r.x = x;
  r.status = SolveStatus::iteration_limit;

  for (int iter = 0;; ++iter) {
    Eigen::VectorXd rx = d.pdiag.cwiseProduct(x) + d.q + d.G.transpose() * z;
    if (lay.p > 0) rx += d.A.transpose() * y;
    Eigen::VectorXd ry = lay.p > 0 ? (d.A * x - d.b).eval() : Eigen::VectorXd(0);
    Eigen::VectorXd rz = d.G * x + s - d.h;

    const double gap = s.dot(z);
    const double pobj = objective_value(prob, x);
    const double resx = rx.lpNorm<Eigen::Infinity>() / qn;
    const double resy = lay.p > 0 ? ry.lpNorm<Eigen::Infinity>() / bn : 0.0;
    const double resz = rz.lpNorm<Eigen::Infinity>() / hn;
    const double relgap = gap / std::max(1.0, std::abs(pobj));

    r.x = x;
    r.objective = pobj;
    r.iterations = iter;
    r.tolerance_achieved = std::max({resx, resy, resz, relgap});

    if (r.tolerance_achieved <= tol) {
      r.status = SolveStatus::optimal;
      fill_duals(d, y, z, r);
      return r;
    }

    // Farkas test: A'y + G'z ~ 0 with b'y + h'z < 0 certifies an empty
    // feasible set; only trusted while the primal residuals are not closing.
    if (iter >= 3) {
      const double denom = -((lay.p > 0 ? d.b.dot(y) : 0.0) + d.h.dot(z));
      if (denom > 1e-10 && std::max(resy, resz) > 10.0 * tol) {
        Eigen::VectorXd atz = d.G.transpose() * z;
        if (lay.p > 0) atz += d.A.transpose() * y;
        if (atz.lpNorm<Eigen::Infinity>() / denom <= 1e-6) {
          r.status = SolveStatus::infeasible;
          r.certificate.resize(lay.p + lay.m);
          if (lay.p > 0) r.certificate.head(lay.p) = y / denom;
          r.certificate.tail(lay.m) = z / denom;
          fill_duals(d, y, z, r);
          return r;
        }
      }
    }

    if (iter >= max_iter) {
      fill_duals(d, y, z, r);
      return r;
    }

    if (!compute_scaling(lay, s, z, sc)) return r;  // lost the interior: report the best iterate
    bool ok = kkt.factor(sc, delta);
    while (!ok && delta < 1e-2) {
      delta *= 100.0;
      ok = kkt.factor(sc, delta);
    }
    if (!ok) return r;

    const double mu = gap / lay.degree;

    // Predictor: pure Newton step toward zero complementarity.
    rhs.head(lay.n) = -rx;
    rhs.segment(lay.n, lay.p) = -ry;
    rhs.tail(lay.m) = -rz + s;
    sol = kkt.solve(rhs, sc);
    const Eigen::VectorXd dx_a = sol.head(lay.n);
    const Eigen::VectorXd dz_a = sol.tail(lay.m);
    const Eigen::VectorXd ds_a = -rz - d.G * dx_a;

    const double step_aff = std::min({1.0, max_step(lay, s, ds_a), max_step(lay, z, dz_a)});
    const double mu_aff = (s + step_aff * ds_a).dot(z + step_aff * dz_a) / lay.degree;
    double sigma = mu_aff / mu;
    sigma = std::clamp(sigma * sigma * sigma, 0.0, 1.0);

    // Corrector: recentre and absorb the second-order term.
    const Eigen::VectorXd correction =
        jordan_mul(lay, apply_w_inv(lay, sc, ds_a), apply_w(lay, sc, dz_a));
    Eigen::VectorXd dvec = sigma * mu * e - jordan_mul(lay, sc.lambda, sc.lambda) - correction;
    rhs.head(lay.n) = -rx;
    rhs.segment(lay.n, lay.p) = -ry;
    rhs.tail(lay.m) = -rz - apply_w(lay, sc, jordan_div(lay, sc.lambda, dvec));
    sol = kkt.solve(rhs, sc);
    const Eigen::VectorXd dx = sol.head(lay.n);
    const Eigen::VectorXd dy = sol.segment(lay.n, lay.p);
    const Eigen::VectorXd dz = sol.tail(lay.m);
    const Eigen::VectorXd ds = -rz - d.G * dx;

    double alpha = std::min(1.0, 0.99 * std::min(max_step(lay, s, ds), max_step(lay, z, dz)));
    int guard = 0;
    while (guard < 60 && !(interior(lay, s + alpha * ds) && interior(lay, z + alpha * dz))) {
      alpha *= 0.5;
      ++guard;
    }
    if (alpha <= 1e-13) {
      fill_duals(d, y, z, r);
      return r;
    }

    x += alpha * dx;
    y += alpha * dy;
    z += alpha * dz;
    s += alpha * ds;
  }
}

}  // namespace

SolverResult solve(const ConicProblem& p, double tol, int max_iter) { return solve_impl(p, tol, max_iter); }

SolverResult solve_qp_fast(const ConicProblem& p, double tol, int max_iter) {
  if (!p.cones.empty()) throw std::invalid_argument("solve_qp_fast: problem has cone blocks");
  return solve_impl(p, tol, max_iter);
}

}  // namespace lem::conic
