#include "lem/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace lem::grid {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

[[noreturn]] void fail(const std::string& what) { throw std::runtime_error(what); }

void require(bool ok, const std::string& what) {
  if (!ok) fail(what);
}

void check_series(const std::vector<double>& s, int t, const std::string& name) {
  if (static_cast<int>(s.size()) != t)
    fail(name + " series length does not match the timestep count");
}

}  // namespace

std::array<DodecagonRow, 12> dodecagon_coefficients() {
  std::array<DodecagonRow, 12> rows{};
  const double apothem = std::cos(kPi / 12.0);  // inradius of the inscribed 12-gon
  for (int k = 0; k < 12; ++k) {
    const double angle = kPi / 6.0 * k;  // edge normals every 30 degrees from the fP axis
    rows[static_cast<std::size_t>(k)] = {std::cos(angle), std::sin(angle), -apothem};
  }
  return rows;
}

std::vector<int> downstream_set(const NetworkGraph& g, int n) {
  if (n <= 0 || n >= g.node_count) fail("downstream_set: unknown node");
  std::vector<int> out;
  std::vector<int> stack{n};
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    out.push_back(v);
    for (int c : g.children[static_cast<std::size_t>(v)]) stack.push_back(c);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<int> path_from_root(const NetworkGraph& g, int n) {
  if (n <= 0 || n >= g.node_count) fail("path_from_root: unknown node");
  std::vector<int> rev;
  for (int v = n; v != 0; v = g.ancestor[static_cast<std::size_t>(v)]) rev.push_back(v);
  return {rev.rbegin(), rev.rend()};
}

void validate(const ScenarioDay& sc) {
  const NetworkGraph& g = sc.graph;
  const int n = g.node_count;
  require(n >= 2, "network needs the substation and at least one further node");
  require(static_cast<int>(g.ancestor.size()) == n && static_cast<int>(g.children.size()) == n &&
              static_cast<int>(g.line_r.size()) == n && static_cast<int>(g.line_x.size()) == n &&
              static_cast<int>(g.line_s_max.size()) == n &&
              static_cast<int>(g.voltage_min.size()) == n &&
              static_cast<int>(g.voltage_max.size()) == n,
          "network arrays must have one entry per node");
  require(g.ancestor[0] == -1, "substation must be the root (no ancestor)");

  for (int v = 1; v < n; ++v) {
    const int a = g.ancestor[static_cast<std::size_t>(v)];
    require(a >= 0 && a < n, "ancestor id out of range");
    const auto& sib = g.children[static_cast<std::size_t>(a)];
    require(std::find(sib.begin(), sib.end(), v) != sib.end(),
            "ancestor/children maps are inconsistent");
    require(g.line_r[static_cast<std::size_t>(v)] > 0 && g.line_x[static_cast<std::size_t>(v)] > 0,
            "line impedances must be positive");
    require(g.line_s_max[static_cast<std::size_t>(v)] > 0, "line flow limit must be positive");
  }
  {
    std::size_t child_edges = 0;
    for (const auto& c : g.children) child_edges += c.size();
    require(child_edges == static_cast<std::size_t>(n) - 1,
            "children maps must list each of the N edges exactly once");
  }
  // Each non-root node has exactly one ancestor edge, so reachability from the
  // substation is equivalent to acyclicity.
  {
    std::vector<bool> seen(static_cast<std::size_t>(n), false);
    std::vector<int> queue{0};
    seen[0] = true;
    while (!queue.empty()) {
      const int v = queue.back();
      queue.pop_back();
      for (int c : g.children[static_cast<std::size_t>(v)]) {
        require(c > 0 && c < n, "child id out of range");
        require(g.ancestor[static_cast<std::size_t>(c)] == v,
                "ancestor/children maps are inconsistent");
        require(!seen[static_cast<std::size_t>(c)], "graph has a cycle");
        seen[static_cast<std::size_t>(c)] = true;
        queue.push_back(c);
      }
    }
    for (int v = 0; v < n; ++v)
      require(seen[static_cast<std::size_t>(v)],
              "graph has a cycle (node unreachable from the substation)");
  }
  for (int v = 0; v < n; ++v)
    require(g.voltage_min[static_cast<std::size_t>(v)] < g.voltage_max[static_cast<std::size_t>(v)],
            "voltage bounds must satisfy u_min < u_max");
  require(g.u0 > 0, "substation voltage must be positive");

  const int t = sc.market.timesteps;
  require(t >= 1, "timestep count must be positive");
  require(sc.market.mva_base > 0, "mva base must be positive");
  require(static_cast<int>(sc.participants.size()) == n, "one participant entry per node required");
  for (int v = 0; v < n; ++v) {
    const auto& p = sc.participants[static_cast<std::size_t>(v)];
    require(p.node == v, "participants must be listed ascending by node id");
    check_series(p.demand_p, t, "demand_p");
    check_series(p.demand_q, t, "demand_q");
    if (p.der) {
      check_series(p.der->forecast, t, "der forecast");
      check_series(p.der->sigma, t, "der sigma");
      for (double s : p.der->sigma) require(s >= 0, "der sigma must be nonnegative");
    }
    if (p.battery) {
      require(p.battery->b_min <= p.battery->b0 && p.battery->b0 <= p.battery->b_max,
              "battery initial state must lie within its bounds");
      require(p.generation.has_value(),
              "battery requires generation limits (its dispatch is the g variable)");
    }
    if (p.generation) {
      require(p.generation->p_min <= p.generation->p_max,
              "generation limits must satisfy p_min <= p_max");
      require(p.generation->cost_quad >= 0, "quadratic cost must be nonnegative");
    }
  }

  check_series(sc.market.tariff_import, t, "tariff_import");
  check_series(sc.market.tariff_export, t, "tariff_export");
  for (int k = 0; k < t; ++k)
    require(sc.market.tariff_import[static_cast<std::size_t>(k)] >=
                sc.market.tariff_export[static_cast<std::size_t>(k)],
            "tariff arbitrage: import tariff below export tariff at t=" + std::to_string(k));
  for (double e : {sc.market.eps_voltage, sc.market.eps_flow, sc.market.eps_generation,
                   sc.market.eps_battery})
    require(e > 0 && e < 0.5, "chance-constraint levels must lie in (0, 0.5)");
  if (!sc.market.reg_up_spread.empty()) {
    check_series(sc.market.reg_up_spread, t, "reg_up_spread");
    for (double s : sc.market.reg_up_spread) require(s >= 0, "reg_up_spread must be nonnegative");
  }
  if (!sc.market.reg_down_spread.empty()) {
    check_series(sc.market.reg_down_spread, t, "reg_down_spread");
    for (double s : sc.market.reg_down_spread)
      require(s >= 0, "reg_down_spread must be nonnegative");
  }
}

namespace {

using nlohmann::json;

std::vector<double> doubles(const json& j) { return j.get<std::vector<double>>(); }

}  // namespace

ScenarioDay load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open scenario file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail("malformed scenario file: " + std::string(e.what()));
  }

  ScenarioDay sc;
  try {
    const json& net = j.at("network");
    const json& edges = net.at("edges");
    int max_node = 0;
    for (const auto& e : edges) max_node = std::max(max_node, e.at("node").get<int>());
    const int n = max_node + 1;
    NetworkGraph& g = sc.graph;
    g.node_count = n;
    g.ancestor.assign(static_cast<std::size_t>(n), -1);
    g.children.assign(static_cast<std::size_t>(n), {});
    g.line_r.assign(static_cast<std::size_t>(n), 0.0);
    g.line_x.assign(static_cast<std::size_t>(n), 0.0);
    g.line_s_max.assign(static_cast<std::size_t>(n), 0.0);
    for (const auto& e : edges) {
      const int v = e.at("node").get<int>();
      const int a = e.at("ancestor").get<int>();
      if (v <= 0 || v >= n) fail("edge child id out of range");
      if (a < 0 || a >= n) fail("edge ancestor id out of range");
      if (g.ancestor[static_cast<std::size_t>(v)] != -1) fail("duplicate edge for one node");
      g.ancestor[static_cast<std::size_t>(v)] = a;
      g.children[static_cast<std::size_t>(a)].push_back(v);
      g.line_r[static_cast<std::size_t>(v)] = e.at("r").get<double>();
      g.line_x[static_cast<std::size_t>(v)] = e.at("x").get<double>();
      g.line_s_max[static_cast<std::size_t>(v)] = e.at("s_max").get<double>();
    }
    for (auto& c : g.children) std::sort(c.begin(), c.end());
    g.u0 = net.at("u0").get<double>();
    g.voltage_min = doubles(net.at("voltage_min"));
    g.voltage_max = doubles(net.at("voltage_max"));

    for (const auto& pj : j.at("participants")) {
      ParticipantProfile p;
      p.node = pj.at("node").get<int>();
      p.demand_p = doubles(pj.at("demand_p"));
      p.demand_q = doubles(pj.at("demand_q"));
      if (pj.contains("der")) {
        DerBlock d;
        d.forecast = doubles(pj.at("der").at("forecast"));
        d.sigma = doubles(pj.at("der").at("sigma"));
        p.der = std::move(d);
      }
      if (pj.contains("battery")) {
        const json& b = pj.at("battery");
        p.battery = BatteryBlock{b.at("b_min").get<double>(), b.at("b_max").get<double>(),
                                 b.at("b0").get<double>()};
      }
      if (pj.contains("generation")) {
        const json& gj = pj.at("generation");
        p.generation =
            GenerationBlock{gj.at("p_min").get<double>(), gj.at("p_max").get<double>(),
                            gj.at("cost_quad").get<double>(), gj.at("cost_lin").get<double>()};
      }
      sc.participants.push_back(std::move(p));
    }
    std::sort(sc.participants.begin(), sc.participants.end(),
              [](const auto& a, const auto& b) { return a.node < b.node; });

    const json& m = j.at("market");
    sc.market.timesteps = m.at("timesteps").get<int>();
    sc.market.mva_base = m.at("mva_base").get<double>();
    sc.market.tariff_import = doubles(m.at("tariff_import"));
    sc.market.tariff_export = doubles(m.at("tariff_export"));
    sc.market.eps_voltage = m.at("eps_voltage").get<double>();
    sc.market.eps_flow = m.at("eps_flow").get<double>();
    sc.market.eps_generation = m.at("eps_generation").get<double>();
    sc.market.eps_battery = m.at("eps_battery").get<double>();
    if (m.contains("reg_up_spread")) sc.market.reg_up_spread = doubles(m.at("reg_up_spread"));
    if (m.contains("reg_down_spread"))
      sc.market.reg_down_spread = doubles(m.at("reg_down_spread"));
  } catch (const json::exception& e) {
    fail("malformed scenario file: " + std::string(e.what()));
  }

  validate(sc);
  return sc;
}

void save_scenario(const ScenarioDay& sc, const std::string& path) {
  json j;
  json edges = json::array();
  for (int v = 1; v < sc.graph.node_count; ++v) {
    edges.push_back({{"node", v},
                     {"ancestor", sc.graph.ancestor[static_cast<std::size_t>(v)]},
                     {"r", sc.graph.line_r[static_cast<std::size_t>(v)]},
                     {"x", sc.graph.line_x[static_cast<std::size_t>(v)]},
                     {"s_max", sc.graph.line_s_max[static_cast<std::size_t>(v)]}});
  }
  j["network"] = {{"edges", std::move(edges)},
                  {"u0", sc.graph.u0},
                  {"voltage_min", sc.graph.voltage_min},
                  {"voltage_max", sc.graph.voltage_max}};

  json parts = json::array();
  for (const auto& p : sc.participants) {
    json pj = {{"node", p.node}, {"demand_p", p.demand_p}, {"demand_q", p.demand_q}};
    if (p.der) pj["der"] = {{"forecast", p.der->forecast}, {"sigma", p.der->sigma}};
    if (p.battery)
      pj["battery"] = {{"b_min", p.battery->b_min},
                       {"b_max", p.battery->b_max},
                       {"b0", p.battery->b0}};
    if (p.generation)
      pj["generation"] = {{"p_min", p.generation->p_min},
                          {"p_max", p.generation->p_max},
                          {"cost_quad", p.generation->cost_quad},
                          {"cost_lin", p.generation->cost_lin}};
    parts.push_back(std::move(pj));
  }
  j["participants"] = std::move(parts);

  json m = {{"timesteps", sc.market.timesteps},
            {"mva_base", sc.market.mva_base},
            {"tariff_import", sc.market.tariff_import},
            {"tariff_export", sc.market.tariff_export},
            {"eps_voltage", sc.market.eps_voltage},
            {"eps_flow", sc.market.eps_flow},
            {"eps_generation", sc.market.eps_generation},
            {"eps_battery", sc.market.eps_battery}};
  if (!sc.market.reg_up_spread.empty()) m["reg_up_spread"] = sc.market.reg_up_spread;
  if (!sc.market.reg_down_spread.empty()) m["reg_down_spread"] = sc.market.reg_down_spread;
  j["market"] = std::move(m);

  std::ofstream out(path);
  if (!out) fail("cannot write scenario file: " + path);
  out << j.dump(2) << '\n';
}

}  // namespace lem::grid
