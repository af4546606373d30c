#include "lem/recovery.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <stdexcept>

namespace lem::recovery {

namespace {

constexpr std::int64_t kScale = std::int64_t{1} << 16;

std::int64_t to_quanta(double v) { return std::llround(v * static_cast<double>(kScale)); }

double from_quanta(std::int64_t q) { return static_cast<double>(q) / static_cast<double>(kScale); }

// Floored division so the remainder is always in [0, d).
std::pair<std::int64_t, std::int64_t> floor_div(std::int64_t n, std::int64_t d) {
  std::int64_t q = n / d;
  std::int64_t r = n % d;
  if (r < 0) {
    q -= 1;
    r += d;
  }
  return {q, r};
}

int find_root(std::vector<int>& parent, int a) {
  while (parent[a] != a) {
    parent[a] = parent[parent[a]];
    a = parent[a];
  }
  return a;
}

void check_measurements(const grid::NetworkGraph& g, const MeasurementSet& in) {
  if (static_cast<int>(in.nodes.size()) != g.node_count)
    throw std::invalid_argument("recover: measurement count does not match the graph");
  if (in.timesteps <= 0) throw std::invalid_argument("recover: no timesteps");
  for (int n = 0; n < g.node_count; ++n) {
    const auto& m = in.nodes[n];
    if (!m.reporting) continue;
    if (m.net_p.size() != in.timesteps || m.net_q.size() != in.timesteps ||
        m.flow_p.size() != in.timesteps || m.flow_q.size() != in.timesteps)
      throw std::invalid_argument("recover: reporting node with incomplete series");
  }
}

}  // namespace

std::vector<Island> find_islands(const grid::NetworkGraph& g, const std::vector<bool>& reporting) {
  if (static_cast<int>(reporting.size()) != g.node_count)
    throw std::invalid_argument("find_islands: flag count does not match the graph");
  if (!reporting[0]) throw std::invalid_argument("find_islands: the substation must report");

  // Union-find over non-reporting nodes; a tree line joins its endpoints when
  // both are silent.
  std::vector<int> parent(g.node_count);
  std::iota(parent.begin(), parent.end(), 0);
  for (int n = 1; n < g.node_count; ++n) {
    int a = g.ancestor[n];
    if (!reporting[n] && !reporting[a]) parent[find_root(parent, n)] = find_root(parent, a);
  }

  std::map<int, Island> by_root;  // keyed by component root = deterministic order
  for (int n = 1; n < g.node_count; ++n) {
    if (reporting[n]) continue;
    by_root[find_root(parent, n)].members.push_back(n);
  }
  std::vector<Island> islands;
  islands.reserve(by_root.size());
  for (auto& [root, isl] : by_root) {
    std::sort(isl.members.begin(), isl.members.end());
    for (int m : isl.members) {
      if (reporting[g.ancestor[m]]) isl.inflow.emplace_back(g.ancestor[m], m);
      for (int c : g.children[m])
        if (reporting[c]) isl.outflow.emplace_back(m, c);
    }
    islands.push_back(std::move(isl));
  }
  std::sort(islands.begin(), islands.end(),
            [](const Island& a, const Island& b) { return a.members.front() < b.members.front(); });
  return islands;
}

std::vector<Island> merge_sibling_islands(std::vector<Island> islands) {
  std::map<int, Island> by_parent;  // inflow parent -> merged group
  for (auto& isl : islands) {
    if (isl.inflow.size() != 1)
      throw std::invalid_argument("merge_sibling_islands: expects single-inflow components");
    auto& group = by_parent[isl.inflow.front().first];
    group.members.insert(group.members.end(), isl.members.begin(), isl.members.end());
    group.inflow.insert(group.inflow.end(), isl.inflow.begin(), isl.inflow.end());
    group.outflow.insert(group.outflow.end(), isl.outflow.begin(), isl.outflow.end());
  }
  std::vector<Island> groups;
  groups.reserve(by_parent.size());
  for (auto& [p, isl] : by_parent) {
    std::sort(isl.members.begin(), isl.members.end());
    std::sort(isl.inflow.begin(), isl.inflow.end());
    std::sort(isl.outflow.begin(), isl.outflow.end());
    groups.push_back(std::move(isl));
  }
  std::sort(groups.begin(), groups.end(),
            [](const Island& a, const Island& b) { return a.members.front() < b.members.front(); });
  return groups;
}

Eigen::MatrixXd split_residual(const Eigen::VectorXd& inflow, const Eigen::VectorXd& outflow,
                               int members) {
  if (members <= 0) throw std::invalid_argument("split_residual: empty member set");
  if (inflow.size() != outflow.size())
    throw std::invalid_argument("split_residual: boundary series length mismatch");
  Eigen::MatrixXd out(members, inflow.size());
  for (Eigen::Index t = 0; t < inflow.size(); ++t) {
    std::int64_t residual = to_quanta(outflow[t]) - to_quanta(inflow[t]);
    auto [base, rem] = floor_div(residual, members);
    for (int y = 0; y < members; ++y) out(y, t) = from_quanta(base + (y == 0 ? rem : 0));
  }
  return out;
}

MeasurementSet recover(const grid::NetworkGraph& g, const MeasurementSet& in) {
  check_measurements(g, in);
  std::vector<bool> reporting(g.node_count);
  for (int n = 0; n < g.node_count; ++n) reporting[n] = in.nodes[n].reporting;

  MeasurementSet out = in;
  const int T = in.timesteps;
  for (int n = 0; n < g.node_count; ++n) {
    if (out.nodes[n].reporting) continue;
    out.nodes[n].net_p = Eigen::VectorXd::Zero(T);
    out.nodes[n].net_q = Eigen::VectorXd::Zero(T);
    out.nodes[n].flow_p = Eigen::VectorXd::Zero(T);
    out.nodes[n].flow_q = Eigen::VectorXd::Zero(T);
  }

  auto groups = merge_sibling_islands(find_islands(g, reporting));
  for (const auto& grp : groups) {
    // The shared inflow parent's balance: flow in + own injection = flows out
    // to children, of which the reporting ones are metered; the residual is
    // the total flow into this group.
    const int p = grp.inflow.front().first;
    Eigen::VectorXd in_p = in.nodes[p].net_p;
    Eigen::VectorXd in_q = in.nodes[p].net_q;
    if (p != 0) {
      in_p += in.nodes[p].flow_p;
      in_q += in.nodes[p].flow_q;
    }
    for (int c : g.children[p]) {
      if (!reporting[c]) continue;
      in_p -= in.nodes[c].flow_p;
      in_q -= in.nodes[c].flow_q;
    }
    Eigen::VectorXd out_p = Eigen::VectorXd::Zero(T);
    Eigen::VectorXd out_q = Eigen::VectorXd::Zero(T);
    for (const auto& [m, c] : grp.outflow) {
      out_p += in.nodes[c].flow_p;
      out_q += in.nodes[c].flow_q;
    }
    Eigen::MatrixXd rec_p = split_residual(in_p, out_p, static_cast<int>(grp.members.size()));
    Eigen::MatrixXd rec_q = split_residual(in_q, out_q, static_cast<int>(grp.members.size()));
    for (std::size_t y = 0; y < grp.members.size(); ++y) {
      out.nodes[grp.members[y]].net_p = rec_p.row(static_cast<Eigen::Index>(y));
      out.nodes[grp.members[y]].net_q = rec_q.row(static_cast<Eigen::Index>(y));
    }
  }
  return out;
}

}  // namespace lem::recovery
