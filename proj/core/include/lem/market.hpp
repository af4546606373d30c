#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "lem/conic.hpp"
#include "lem/scenario.hpp"

namespace lem::market {

// Which constraint families carry probabilistic margins.
//   full                 - device and network constraints all carry margins
//   deterministic_network- voltage / line limits plain, device margins kept
//   deterministic        - every margin dropped (plain network market)
enum class Variant { full, deterministic_network, deterministic };

struct ColumnInfo {
  enum class Kind {
    voltage,
    flow_p,
    flow_q,
    generation,
    reserve,
    storage,
    import_p,
    export_p,
    import_q,
    export_q
  };
  Kind kind{};
  int node = 0;  // 0 for the substation import/export columns
  int t = 0;
};

// Flat column order over the day: per non-root node its voltage and line flows,
// per flexible node its dispatch and participation factor, per battery its
// state of charge, then the substation exchange columns.
class VariableLayout {
 public:
  VariableLayout() = default;
  explicit VariableLayout(const grid::ScenarioDay& sc);

  int timesteps() const { return t_; }
  int node_count() const { return nodes_; }
  int size() const { return total_; }

  int voltage(int node, int t) const;  // node >= 1
  int flow_p(int node, int t) const;   // node >= 1, line from its ancestor
  int flow_q(int node, int t) const;
  int generation(int node, int t) const;  // flexible nodes
  int reserve(int node, int t) const;     // flexible nodes
  int storage(int node, int t) const;     // battery nodes
  int import_p(int t) const;
  int export_p(int t) const;
  int import_q(int t) const;
  int export_q(int t) const;

  bool is_flexible(int node) const;
  bool has_storage(int node) const;
  const std::vector<int>& flexible() const { return flex_; }
  const std::vector<int>& storages() const { return batt_; }
  const ColumnInfo& info(int col) const;

 private:
  int slot(const std::vector<int>& base, int node, int t, const char* what) const;
  int t_ = 0, nodes_ = 0, total_ = 0;
  std::vector<int> u_base_, fp_base_, fq_base_, g_base_, a_base_, b_base_;
  int lp_ = -1, sp_ = -1, lq_ = -1, sq_ = -1;
  std::vector<int> flex_, batt_;
  std::vector<ColumnInfo> info_;
};

// Gaussian production uncertainty: independent per producer and timestep; the
// system-wide deviation at t has standard deviation sigma_delta[t].
struct UncertaintyModel {
  std::vector<int> producers;   // node ids carrying forecast uncertainty
  Eigen::MatrixXd sigma;        // producers x timesteps
  Eigen::VectorXd sigma_delta;  // per t: sqrt of summed variances
  double z_voltage = 0.0;       // one-sided normal quantiles per constraint family
  double z_flow = 0.0;
  double z_generation = 0.0;
  double z_battery = 0.0;

  static UncertaintyModel from(const grid::ScenarioDay& sc);
};

struct CentralModel {
  conic::ConicProblem problem;
  VariableLayout layout;
  UncertaintyModel uncertainty;
  Variant variant = Variant::full;
  std::vector<std::vector<int>> balance_row;  // [node][t] equality index of the active balance
  std::vector<int> adequacy_row;              // [t] equality index of the reserve adequacy row
};

CentralModel build_central(const grid::ScenarioDay& sc, Variant variant);

// One clearing subproblem per node. Columns are the node's own variables plus
// copies of coupled neighbours' variables; `coupling` maps local columns to
// consensus groups, `owned` maps the node's own columns into the day layout.
struct LocalSubproblem {
  int owner = -1;
  conic::ConicProblem problem;
  std::vector<std::pair<int, int>> coupling;  // (local column, consensus group)
  std::vector<std::pair<int, int>> owned;     // (local column, layout column)
  std::vector<int> balance_row;               // [t] local row of the node's active balance
  std::vector<int> adequacy_row;              // [t] local row of the adequacy constraint (substation only)
};

struct LocalDecomposition {
  std::vector<LocalSubproblem> subs;
  std::vector<int> group_column;  // consensus group -> layout column it mirrors
  VariableLayout layout;
  UncertaintyModel uncertainty;
  Variant variant = Variant::full;
};

LocalDecomposition build_locals(const grid::ScenarioDay& sc, Variant variant);

struct MarketSolution {
  Eigen::VectorXd x;  // day layout
  double objective = 0.0;
};

struct PriceSet {
  Eigen::MatrixXd lambda;  // node x t: nodal energy price
  Eigen::VectorXd pi;      // t: flexibility price
};

struct CentralOutcome {
  MarketSolution solution;
  PriceSet prices;
  conic::SolveStatus status = conic::SolveStatus::iteration_limit;
  int iterations = 0;
};

CentralOutcome solve_central(const grid::ScenarioDay& sc, Variant variant, double tol = 1e-8,
                             int max_iter = 100);

double evaluate_objective(const conic::ConicProblem& p, const Eigen::VectorXd& x);

// Worst violation of any constraint of `p` at `x`: equalities by |lhs-rhs|,
// inequalities and cone bounds by their positive excess.
double max_violation(const conic::ConicProblem& p, const Eigen::VectorXd& x);

// Empirical violation frequency of the probabilistic constraints at a fixed
// schedule, by Monte-Carlo over the production uncertainty; reports the worst
// frequency within each constraint family.
struct ViolationReport {
  double generation = 0.0;
  double storage = 0.0;
  double voltage = 0.0;
  double line = 0.0;
};

ViolationReport chance_violations(const grid::ScenarioDay& sc, const Eigen::VectorXd& x, int draws,
                                  std::uint64_t seed);

}  // namespace lem::market
