#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "lem/admm.hpp"
#include "lem/market.hpp"
#include "lem/protocols.hpp"

namespace lem::secure {

// Clearing with the coordination layer under secret sharing. Each node still
// solves its own subproblem in the clear on its private data; what crosses the
// trust boundary per sweep is: fixed-point sharings of the copied columns, the
// consensus averages (opened only to the parties that hold a copy), and one
// conjunction bit for the stop decision. Multiplier updates stay local.
struct Options {
  admm::Options admm;        // penalty weight, l2 thresholds, surplus cap, budget
  mpc::FixedParams fixed;    // fraction / magnitude / masking parameters
  std::uint64_t seed = 7;    // fabric session seed; reruns are byte-identical
  double value_limit = 24.0; // every submitted value must stay below this, in p.u.
  int theta = -1;            // sharing threshold; -1 keeps the fabric default
};

// Groups bucketed by their holder set, so one averaging call serves every
// group shared by the same parties and the result is opened to exactly them.
struct CoordinationPlan {
  struct Bucket {
    std::vector<int> holders;  // party ids, ascending
    std::vector<int> groups;   // consensus group ids, ascending
  };
  std::vector<Bucket> buckets;
  std::vector<std::vector<int>> group_holders;  // group -> holder party ids
  int max_copies = 0;                           // largest holder set
};
CoordinationPlan plan_coordination(const market::LocalDecomposition& dec);

// One coordination sweep: every holder shares its copies, the averages are
// computed under sharing, and each group's value is opened to its holders.
struct CoordinationStep {
  mpc::SharedFixed z;                         // sharing of the consensus vector
  Eigen::VectorXd z_open;                     // the values the holders received
  double shadow_gap = 0.0;                    // |secure - exact average|_inf
  std::vector<mpc::SharedFixed> submissions;  // per party, in coupling order
};
CoordinationStep secure_coordination_step(mpc::PartyFabric& f,
                                          const market::LocalDecomposition& dec,
                                          const CoordinationPlan& plan,
                                          const std::vector<Eigen::VectorXd>& x,
                                          const Options& opt);

// Per-party demand, aggregated under sharing and scaled to the surplus cap;
// computed once per session, never opened.
mpc::SharedFixed shared_surplus_tolerance(mpc::PartyFabric& f, const grid::ScenarioDay& sc,
                                          const Options& opt);

// Joint stop test: per-copy disagreement, consensus movement, and the energy
// imbalance reconstructed from the flow copies are each compared against
// their thresholds under sharing; only the final conjunction bit is opened.
bool secure_convergence_test(mpc::PartyFabric& f, const market::LocalDecomposition& dec,
                             const CoordinationPlan& plan, const CoordinationStep& step,
                             const mpc::SharedFixed& z_prev,
                             const mpc::SharedFixed& surplus_tol, const Options& opt);

struct IterationAudit {
  int iteration = 0;
  double shadow_gap = 0.0;  // coordination error of this sweep
  bool stop_bit = false;    // the opened conjunction bit
  double primal = 0.0;      // simulator-side diagnostics (not opened values)
  double dual = 0.0;
  double worst_surplus = 0.0;
};

struct Outcome {
  market::MarketSolution solution;
  bool converged = false;  // decided by the opened conjunction bit alone
  int iterations = 0;
  double max_shadow_gap = 0.0;
  int max_copies = 0;
  std::vector<IterationAudit> trace;
  std::vector<mpc::PartyFabric::OpenEvent> audit;  // every opening of the session
  std::uint64_t fabric_rounds = 0;
  std::uint64_t elements_sent = 0;
  std::vector<Eigen::VectorXd> x;  // final local vectors (simulation view)
  Eigen::VectorXd z;
  std::vector<Eigen::VectorXd> u;
  std::vector<Eigen::VectorXd> balance_dual;  // per sub, per t
  Eigen::VectorXd adequacy_dual;              // substation, per t
};

Outcome run_secure(const grid::ScenarioDay& sc, market::Variant variant, const Options& opt = {});

}  // namespace lem::secure
