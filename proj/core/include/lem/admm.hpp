#pragma once

#include <vector>

#include <Eigen/Dense>

#include "lem/market.hpp"

namespace lem::admm {

struct Options {
  double rho = 1.0;            // consensus penalty weight
  double tol_primal = 1e-4;    // l2 copy disagreement across all subproblems
  double tol_dual = 1e-4;      // rho * l2 movement of the consensus vector
  double max_surplus = 0.02;   // worst per-step relative energy imbalance
  int max_iterations = 4000;
  double local_tol = 1e-8;     // interior-point tolerance of each local solve
  int local_max_iter = 100;
};

// One proximal solve of a node's subproblem against the current consensus
// values z and scaled multipliers u (both aligned with sub.coupling order).
struct LocalResult {
  Eigen::VectorXd x;              // full local column vector
  Eigen::VectorXd balance_dual;   // per t: equality multiplier of the node's active balance
  Eigen::VectorXd adequacy_dual;  // per t: multiplier of the adequacy row (substation only)
};
LocalResult local_step(const market::LocalSubproblem& sub, double rho, const Eigen::VectorXd& z,
                       const Eigen::VectorXd& u, double tol, int max_iter);

// z[g] becomes the arithmetic mean of every subproblem's copy of group g.
Eigen::VectorXd global_average(const market::LocalDecomposition& dec,
                               const std::vector<Eigen::VectorXd>& x);

// Scaled-multiplier ascent u += x - z; the multipliers of a group stay
// mean-zero, which is what lets the plain average play the projection role.
void multiplier_update(const market::LocalDecomposition& dec,
                       const std::vector<Eigen::VectorXd>& x, const Eigen::VectorXd& z,
                       std::vector<Eigen::VectorXd>& u);

struct Metrics {
  double primal = 0.0;         // l2 of x - z over every coupled copy
  double dual = 0.0;           // rho * l2 of z - z_prev over groups
  double worst_surplus = 0.0;  // max_t |relative imbalance|
  Eigen::VectorXd surplus;     // per t: (scheduled injection - demand) / demand
};
Metrics convergence_metrics(const grid::ScenarioDay& sc, const market::LocalDecomposition& dec,
                            const std::vector<Eigen::VectorXd>& x, const Eigen::VectorXd& z,
                            const Eigen::VectorXd& z_prev, double rho);

// Flat start of the consensus vector: nominal voltage for voltage groups, an
// equal split for the participation groups, zero for everything else.
Eigen::VectorXd consensus_seed(const grid::ScenarioDay& sc, const market::LocalDecomposition& dec);

struct IterationRecord {
  int iteration = 0;
  double primal = 0.0;
  double dual = 0.0;
  double worst_surplus = 0.0;
};

struct Outcome {
  market::MarketSolution solution;  // owned values, consensus columns overwritten with z
  bool converged = false;
  int iterations = 0;
  std::vector<Eigen::VectorXd> x;  // final local vectors
  Eigen::VectorXd z;               // final consensus values per group
  std::vector<Eigen::VectorXd> u;  // final scaled multipliers per sub
  std::vector<Eigen::VectorXd> balance_dual;   // per sub, per t
  Eigen::VectorXd adequacy_dual;               // substation, per t
  std::vector<IterationRecord> trace;
};

Outcome run(const grid::ScenarioDay& sc, market::Variant variant, const Options& opt = {});

// Nodal and flexibility prices from a converged run. `duals` reads the local
// equality multipliers; `consensus` reconstructs them from the multipliers on
// the shared copies (a parent's copy of a child's line flow prices the child's
// energy, the substation's copies of the participation factors price the
// reserve). Nodes without children inherit their parent's price. Throws if the
// run did not converge.
enum class PriceMode { duals, consensus };
market::PriceSet extract_prices(const grid::ScenarioDay& sc, const market::LocalDecomposition& dec,
                                const Outcome& out, PriceMode mode, double rho = 1.0);

}  // namespace lem::admm
