#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>

#include "doctest.h"
#include "lem/scenario.hpp"

using namespace lem::grid;

namespace {

std::string fixture(const std::string& name) {
  return std::string(LEM_FIXTURE_DIR) + "/" + name;
}

NetworkGraph path_graph(int nodes) {
  NetworkGraph g;
  g.node_count = nodes;
  g.ancestor.assign(static_cast<std::size_t>(nodes), -1);
  g.children.assign(static_cast<std::size_t>(nodes), {});
  g.line_r.assign(static_cast<std::size_t>(nodes), 0.01);
  g.line_x.assign(static_cast<std::size_t>(nodes), 0.01);
  g.line_s_max.assign(static_cast<std::size_t>(nodes), 1.0);
  g.voltage_min.assign(static_cast<std::size_t>(nodes), 0.81);
  g.voltage_max.assign(static_cast<std::size_t>(nodes), 1.21);
  for (int v = 1; v < nodes; ++v) {
    g.ancestor[static_cast<std::size_t>(v)] = v - 1;
    g.children[static_cast<std::size_t>(v - 1)].push_back(v);
  }
  return g;
}

}  // namespace

TEST_CASE("smallest tree loads with the substation as root") {
  const ScenarioDay sc = load_scenario(fixture("twobus.json"));
  CHECK(sc.graph.node_count == 2);
  CHECK(sc.graph.children[0] == std::vector<int>{1});
  CHECK(sc.graph.ancestor[1] == 0);
  CHECK(sc.market.timesteps == 4);
  CHECK(sc.participants[1].demand_p[2] == 1.0);
  CHECK(sc.participants[0].is_flexible());
  CHECK_FALSE(sc.participants[1].is_flexible());
}

TEST_CASE("three-node fixture carries prosumer, storage and flexibility roles") {
  const ScenarioDay sc = load_scenario(fixture("threebus.json"));
  CHECK(sc.graph.node_count == 3);
  CHECK(sc.participants[1].is_prosumer());
  CHECK_FALSE(sc.participants[1].has_storage());
  CHECK(sc.participants[2].has_storage());
  int flexible = 0;
  for (const auto& p : sc.participants) flexible += p.is_flexible() ? 1 : 0;
  CHECK(flexible == 3);
  CHECK(sc.market.reg_up_spread.size() == 4);
}

TEST_CASE("scenario save and load round-trips") {
  const ScenarioDay sc = load_scenario(fixture("threebus.json"));
  const auto tmp = std::filesystem::temp_directory_path() / "lem_roundtrip.json";
  save_scenario(sc, tmp.string());
  const ScenarioDay back = load_scenario(tmp.string());
  CHECK(back == sc);
  std::filesystem::remove(tmp);
}

TEST_CASE("validation names the violated invariant") {
  ScenarioDay sc = load_scenario(fixture("twobus.json"));

  SUBCASE("tariff arbitrage") {
    sc.market.tariff_export[3] = 2.0;  // above the import tariff
    CHECK_THROWS_WITH_AS(validate(sc),
                         "tariff arbitrage: import tariff below export tariff at t=3",
                         std::runtime_error);
  }
  SUBCASE("cycle") {
    // 1 adopts 1 as a child: breaks the tree
    sc.graph.ancestor[1] = 1;
    sc.graph.children[0].clear();
    sc.graph.children[1] = {1};
    try {
      validate(sc);
      CHECK(false);
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("cycle") != std::string::npos);
    }
  }
  SUBCASE("epsilon range") {
    sc.market.eps_flow = 0.5;
    CHECK_THROWS_AS(validate(sc), std::runtime_error);
  }
  SUBCASE("voltage bounds") {
    sc.graph.voltage_max[1] = sc.graph.voltage_min[1];
    CHECK_THROWS_AS(validate(sc), std::runtime_error);
  }
  SUBCASE("negative sigma") {
    sc.participants[1].der = DerBlock{{0, 0, 0, 0}, {0.1, -0.1, 0.1, 0.1}};
    CHECK_THROWS_AS(validate(sc), std::runtime_error);
  }
  SUBCASE("series length") {
    sc.participants[1].demand_p.pop_back();
    CHECK_THROWS_AS(validate(sc), std::runtime_error);
  }
  SUBCASE("battery without dispatch variable") {
    sc.participants[1].battery = BatteryBlock{0.0, 1.0, 0.5};
    CHECK_THROWS_AS(validate(sc), std::runtime_error);
  }
}

TEST_CASE("downstream sets and root paths on a branching tree") {
  // 0 - 1 - {2, 3}; 3 - 4
  NetworkGraph g = path_graph(2);
  g.node_count = 5;
  g.ancestor = {-1, 0, 1, 1, 3};
  g.children = {{1}, {2, 3}, {}, {4}, {}};
  g.line_r.assign(5, 0.01);
  g.line_x.assign(5, 0.01);
  g.line_s_max.assign(5, 1.0);
  g.voltage_min.assign(5, 0.81);
  g.voltage_max.assign(5, 1.21);

  CHECK(downstream_set(g, 2) == std::vector<int>{2});
  CHECK(downstream_set(g, 1) == std::vector<int>{1, 2, 3, 4});
  CHECK(downstream_set(g, 3) == std::vector<int>{3, 4});
  CHECK_THROWS(downstream_set(g, 0));
  CHECK_THROWS(downstream_set(g, 9));

  CHECK(path_from_root(g, 4) == std::vector<int>{1, 3, 4});
  CHECK(path_from_root(g, 1) == std::vector<int>{1});

  const NetworkGraph path = path_graph(4);
  CHECK(downstream_set(path, 1) == std::vector<int>{1, 2, 3});
}

TEST_CASE("dodecagon is a normalized inner approximation of the flow disk") {
  const auto rows = dodecagon_coefficients();
  const double apothem = std::cos(3.141592653589793 / 12.0);
  for (const auto& r : rows) {
    CHECK(std::abs(r.a1 * r.a1 + r.a2 * r.a2 - 1.0) < 1e-12);
    CHECK(r.a3 < 0);
    CHECK(r.a3 == doctest::Approx(-apothem));
  }

  const double s = 2.5;
  auto inside = [&](double fp, double fq) {
    for (const auto& r : rows)
      if (r.a1 * fp + r.a2 * fq + r.a3 * s > 1e-12) return false;
    return true;
  };

  CHECK(inside(0.0, 0.0));
  CHECK_FALSE(inside(s, 0.0));  // circle vertex direction lies outside an edge
  CHECK(inside(0.9 * s * std::cos(3.141592653589793 / 12.0),
               0.9 * s * std::sin(3.141592653589793 / 12.0)));

  std::mt19937_64 rng(5);
  auto uniform = [&] { return (static_cast<double>(rng() % 2000001) - 1000000.0) / 1000000.0; };
  int tested_in = 0, tested_out = 0;
  while (tested_in < 10000 || tested_out < 10000) {
    const double fp = 1.5 * s * uniform();
    const double fq = 1.5 * s * uniform();
    const double norm = std::hypot(fp, fq);
    if (norm <= apothem * s && tested_in < 10000) {
      CHECK(inside(fp, fq));
      ++tested_in;
    } else if (norm > s && tested_out < 10000) {
      CHECK_FALSE(inside(fp, fq));
      ++tested_out;
    }
  }
}
