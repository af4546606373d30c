#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace lem::conic {

// Sparse linear expression: sum of coefficient * x[column].
using Terms = std::vector<std::pair<int, double>>;

// Convex problem
//   minimize    sum_i hess_diag[i] * x_i^2  +  lin . x  +  constant
//   subject to  terms.x  =  rhs   (equalities)
//               terms.x  <= rhs   (inequalities)
//               || rows(x) ||_2 <= bound(x)   (second-order cones)
// Duals follow L = f + y.(Ax - b) + z.(Gx - h): equality duals free,
// inequality duals >= 0, cone duals in the (self-dual) second-order cone.
struct ConicProblem {
  struct Row {
    Terms terms;
    double rhs = 0.0;
    std::string tag;  // which market constraint generated the row
  };
  struct Cone {
    Terms bound_terms;  // t(x) = bound_terms.x + bound_const
    double bound_const = 0.0;
    std::vector<Terms> row_terms;  // u_k(x) = row_terms[k].x + row_const[k]
    std::vector<double> row_const;
    std::string tag;
  };

  int n = 0;
  std::vector<double> hess_diag;  // >= 0 entrywise (convexity)
  std::vector<double> lin;
  double constant = 0.0;
  std::vector<Row> equalities;
  std::vector<Row> inequalities;
  std::vector<Cone> cones;

  void resize(int vars) {
    n = vars;
    hess_diag.assign(static_cast<std::size_t>(vars), 0.0);
    lin.assign(static_cast<std::size_t>(vars), 0.0);
  }
  void add_equality(Terms t, double rhs, std::string tag) {
    equalities.push_back(Row{std::move(t), rhs, std::move(tag)});
  }
  void add_inequality(Terms t, double rhs, std::string tag) {
    inequalities.push_back(Row{std::move(t), rhs, std::move(tag)});
  }
  void add_cone(Cone c) { cones.push_back(std::move(c)); }
};

enum class SolveStatus { optimal, infeasible, iteration_limit };

struct SolverResult {
  SolveStatus status = SolveStatus::iteration_limit;
  Eigen::VectorXd x;
  Eigen::VectorXd eq_dual;                  // y, one per equality row
  Eigen::VectorXd ineq_dual;                // z >= 0, one per inequality row
  std::vector<Eigen::VectorXd> cone_dual;   // per cone: (t-part, then row parts)
  Eigen::VectorXd certificate;              // on infeasible: Farkas dual direction (y, z)
  double objective = 0.0;
  double tolerance_achieved = 0.0;
  int iterations = 0;
};

// Primal-dual interior-point solve (Nesterov-Todd scaled predictor-corrector).
// Deterministic: identical inputs produce identical outputs.
SolverResult solve(const ConicProblem& p, double tol = 1e-7, int max_iter = 100);

// Cone-free fast path with the identical contract; throws std::invalid_argument
// if the problem carries cone blocks.
SolverResult solve_qp_fast(const ConicProblem& p, double tol = 1e-7, int max_iter = 100);

}  // namespace lem::conic
