#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace lem::grid {

// Radial distribution network rooted at the substation (node 0). Line n is the
// unique line from ancestor[n] down to n; node arrays are indexed by node id,
// with the line entries unused at index 0.
struct NetworkGraph {
  int node_count = 0;                      // N+1 including the substation
  std::vector<int> ancestor;               // [node]; -1 at the root
  std::vector<std::vector<int>> children;  // [node], ascending
  std::vector<double> line_r;              // p.u. resistance, index by child node
  std::vector<double> line_x;              // p.u. reactance
  std::vector<double> line_s_max;          // p.u. apparent-power limit
  double u0 = 1.0;                         // fixed squared substation voltage (p.u.^2)
  std::vector<double> voltage_min;         // squared bounds per node (p.u.^2)
  std::vector<double> voltage_max;

  friend bool operator==(const NetworkGraph&, const NetworkGraph&) = default;
};

struct DerBlock {
  std::vector<double> forecast;  // h^f per timestep (p.u.)
  std::vector<double> sigma;     // forecast-error std-dev per timestep (p.u.)
  friend bool operator==(const DerBlock&, const DerBlock&) = default;
};

struct BatteryBlock {
  double b_min = 0.0;  // p.u.*h
  double b_max = 0.0;
  double b0 = 0.0;
  friend bool operator==(const BatteryBlock&, const BatteryBlock&) = default;
};

struct GenerationBlock {
  double p_min = 0.0;  // p.u.
  double p_max = 0.0;
  double cost_quad = 0.0;  // currency / p.u.^2
  double cost_lin = 0.0;   // currency / p.u.
  friend bool operator==(const GenerationBlock&, const GenerationBlock&) = default;
};

struct ParticipantProfile {
  int node = 0;
  std::vector<double> demand_p;  // p.u. per timestep
  std::vector<double> demand_q;
  std::optional<DerBlock> der;             // prosumers (set R)
  std::optional<BatteryBlock> battery;     // storage owners (set M)
  std::optional<GenerationBlock> generation;  // flexible resources (set V)

  bool is_prosumer() const { return der.has_value(); }
  bool has_storage() const { return battery.has_value(); }
  bool is_flexible() const { return generation.has_value(); }

  friend bool operator==(const ParticipantProfile&, const ParticipantProfile&) = default;
};

struct MarketBlock {
  int timesteps = 0;
  double mva_base = 1.0;
  std::vector<double> tariff_import;  // currency per p.u. bought via the substation
  std::vector<double> tariff_export;  // currency per p.u. sold via the substation
  double eps_voltage = 0.05;
  double eps_flow = 0.05;
  double eps_generation = 0.05;
  double eps_battery = 0.05;
  std::vector<double> reg_up_spread;    // optional (empty = zeros): lambda_up - lambda0
  std::vector<double> reg_down_spread;  // optional: lambda0 - lambda_down

  friend bool operator==(const MarketBlock&, const MarketBlock&) = default;
};

struct ScenarioDay {
  NetworkGraph graph;
  std::vector<ParticipantProfile> participants;  // one per node, ascending by id
  MarketBlock market;

  friend bool operator==(const ScenarioDay&, const ScenarioDay&) = default;
};

// One half-plane of the 12-gon flow limit: a1*fP + a2*fQ + a3*S <= 0.
struct DodecagonRow {
  double a1, a2, a3;
};

// The twelve half-planes of the regular dodecagon inscribed in the disk of
// radius S, first edge normal along the fP axis; a1^2 + a2^2 = 1, a3 < 0.
std::array<DodecagonRow, 12> dodecagon_coefficients();

// n plus all of its descendants, ascending. Throws on unknown or root node.
std::vector<int> downstream_set(const NetworkGraph& g, int n);

// Line nodes on the path substation -> n, i.e. {m : n in downstream_set(m)},
// ordered from the trunk down to n. Throws on unknown or root node.
std::vector<int> path_from_root(const NetworkGraph& g, int n);

// Throws std::runtime_error naming the violated invariant.
void validate(const ScenarioDay& sc);

ScenarioDay load_scenario(const std::string& path);
void save_scenario(const ScenarioDay& sc, const std::string& path);

}  // namespace lem::grid
