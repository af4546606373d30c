#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "lem/scenario.hpp"

namespace lem::recovery {

// One node's metering record for the day. A node either reports all four
// series or none; flow_p/flow_q are the flows on the line feeding the node
// (identically zero at the substation, which always reports).
struct NodeMeasurements {
  bool reporting = true;
  Eigen::VectorXd net_p;   // active net injection per timestep (p.u.)
  Eigen::VectorXd net_q;   // reactive net injection
  Eigen::VectorXd flow_p;  // active flow on the incoming line
  Eigen::VectorXd flow_q;  // reactive flow on the incoming line
};

struct MeasurementSet {
  int timesteps = 0;
  std::vector<NodeMeasurements> nodes;  // indexed by node id
};

// A set of non-reporting nodes whose boundary consists of reporting nodes
// only. find_islands returns the maximal connected components, each with a
// single inflow line; merge_sibling_islands unions components that hang off
// the same reporting parent, which is when an Island carries several inflows.
struct Island {
  std::vector<int> members;                     // ascending node ids
  std::vector<std::pair<int, int>> inflow;      // (reporting parent, member)
  std::vector<std::pair<int, int>> outflow;     // (member, reporting child)
};

// Maximal connected components of non-reporting nodes, ordered by lowest
// member id. Throws std::invalid_argument if the substation is non-reporting
// or the flag count does not match the graph.
std::vector<Island> find_islands(const grid::NetworkGraph& g, const std::vector<bool>& reporting);

// Union islands that share an inflow parent: that parent's balance reveals
// only the sum of the flows into its non-reporting subtrees, so the merged
// group is the finest set whose aggregate injection is determined.
std::vector<Island> merge_sibling_islands(std::vector<Island> islands);

// Equal split of the residual (outflow - inflow) over `members` nodes,
// computed in 2^-16 quanta so the column sums reproduce the residual exactly;
// the division remainder lands on row 0 (the lowest member id). Returns a
// members x T matrix of per-node injections.
Eigen::MatrixXd split_residual(const Eigen::VectorXd& inflow, const Eigen::VectorXd& outflow,
                               int members);

// Fill in the net injections of every non-reporting node: island inflow is
// derived from the reporting parent's power balance, outflow from the
// reporting children's metered line flows, and the residual is split equally
// across the group. Line flows interior to an island are underdetermined and
// stay zero; the reporting flags are preserved so callers can tell recovered
// values from metered ones. Reactive injections use the same rule.
MeasurementSet recover(const grid::NetworkGraph& g, const MeasurementSet& in);

}  // namespace lem::recovery
