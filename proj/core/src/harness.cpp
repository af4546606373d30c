#include "lem/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>

#include "lem/stats.hpp"

namespace lem::harness {

namespace {

bool is_secure(Solver s) { return s == Solver::s2 || s == Solver::s3; }
bool is_distributed(Solver s) { return s != Solver::c1; }

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// Everything the clearing stage hands downstream, solver-independent.
struct Clearing {
  market::MarketSolution solution;
  market::PriceSet prices;
  bool converged = false;
  int iterations = 0;
  std::vector<admm::IterationRecord> trace;
  std::vector<mpc::PartyFabric::OpenEvent> audit;
  double max_shadow_gap = 0.0;
  std::uint64_t fabric_rounds = 0;
  std::uint64_t elements_sent = 0;
};

Clearing clear_market(const grid::ScenarioDay& sc, const RunConfig& cfg) {
  Clearing cl;
  const market::Variant variant = solver_variant(cfg.solver);
  if (cfg.solver == Solver::c1) {
    const auto out = market::solve_central(sc, variant);
    cl.converged = out.status == conic::SolveStatus::optimal;
    cl.iterations = 1;  // the whole problem crosses the wire once
    cl.solution = out.solution;
    cl.prices = out.prices;
    return cl;
  }

  admm::Options ao;
  ao.rho = cfg.rho;
  ao.tol_primal = cfg.tol_primal;
  ao.tol_dual = cfg.tol_dual;
  ao.max_surplus = cfg.max_surplus;
  ao.max_iterations = cfg.max_iterations;

  if (cfg.solver == Solver::n3) {
    const auto out = admm::run(sc, variant, ao);
    cl.converged = out.converged;
    cl.iterations = out.iterations;
    cl.trace = out.trace;
    cl.solution = out.solution;
    if (out.converged) {
      const auto dec = market::build_locals(sc, variant);
      cl.prices = admm::extract_prices(sc, dec, out, cfg.price_mode, ao.rho);
    }
    return cl;
  }

  secure::Options so;
  so.admm = ao;
  so.seed = cfg.seed;
  so.theta = cfg.theta;
  const auto out = secure::run_secure(sc, variant, so);
  cl.converged = out.converged;
  cl.iterations = out.iterations;
  cl.solution = out.solution;
  cl.audit = out.audit;
  cl.max_shadow_gap = out.max_shadow_gap;
  cl.fabric_rounds = out.fabric_rounds;
  cl.elements_sent = out.elements_sent;
  cl.trace.reserve(out.trace.size());
  for (const auto& a : out.trace)
    cl.trace.push_back({a.iteration, a.primal, a.dual, a.worst_surplus});
  if (out.converged) {
    // The consensus state carries the same price material either way; reuse
    // the plaintext extraction on the simulation view of the secure run.
    admm::Outcome shim;
    shim.converged = true;
    shim.iterations = out.iterations;
    shim.x = out.x;
    shim.z = out.z;
    shim.u = out.u;
    shim.balance_dual = out.balance_dual;
    shim.adequacy_dual = out.adequacy_dual;
    const auto dec = market::build_locals(sc, variant);
    cl.prices = admm::extract_prices(sc, dec, shim, cfg.price_mode, ao.rho);
  }
  return cl;
}

// Per-t relative gap between what the schedule supplies and what is demanded;
// battery dispatch rides on its generation column, so it is already counted.
Eigen::VectorXd energy_surplus(const grid::ScenarioDay& sc, const market::VariableLayout& layout,
                               const Eigen::VectorXd& x) {
  const int T = layout.timesteps();
  Eigen::VectorXd s(T);
  for (int t = 0; t < T; ++t) {
    double supply = x[layout.import_p(t)] - x[layout.export_p(t)];
    for (int v : layout.flexible()) supply += x[layout.generation(v, t)];
    double demand = 0.0;
    for (const auto& part : sc.participants) {
      demand += part.demand_p[static_cast<std::size_t>(t)];
      if (part.is_prosumer()) supply += part.der->forecast[static_cast<std::size_t>(t)];
    }
    s[t] = (supply - demand) / std::max(std::abs(demand), 1e-12);
  }
  return s;
}

struct Operation {
  Eigen::MatrixXd scheduled;  // node x t active injections of the cleared day
  Eigen::MatrixXd deviation;  // node x t realized deviation from the schedule
  Eigen::MatrixXd actual;     // scheduled + deviation (participant view)
};

// Forecast errors drawn node-major then time-major from the run seed, reserve
// responses applied with the cleared participation factors, and every device
// clipped to what it can actually do; what the reserves cannot absorb remains
// as deviation for the imbalance leg.
Operation operate(const grid::ScenarioDay& sc, const market::VariableLayout& layout,
                  const Eigen::VectorXd& x, std::uint64_t seed) {
  const int T = layout.timesteps();
  const int N = layout.node_count();
  Operation op;
  op.deviation = Eigen::MatrixXd::Zero(N, T);

  std::mt19937_64 rng(seed);
  Eigen::VectorXd delta = Eigen::VectorXd::Zero(T);
  for (int n = 0; n < N; ++n) {
    const auto& part = sc.participants[static_cast<std::size_t>(n)];
    if (!part.is_prosumer()) continue;
    for (int t = 0; t < T; ++t) {
      const double w =
          part.der->sigma[static_cast<std::size_t>(t)] * stats::standard_normal(rng);
      op.deviation(n, t) += w;
      delta[t] += w;
    }
  }

  for (int v : layout.flexible()) {
    const auto& part = sc.participants[static_cast<std::size_t>(v)];
    const auto& gen = *part.generation;
    double soc = part.has_storage() ? part.battery->b0 : 0.0;
    for (int t = 0; t < T; ++t) {
      const double g = x[layout.generation(v, t)];
      const double alpha = x[layout.reserve(v, t)];
      double lo = gen.p_min, hi = gen.p_max;
      if (part.has_storage()) {
        // Discharging depletes the store: B_t = B_{t-1} - g_t.
        lo = std::max(lo, soc - part.battery->b_max);
        hi = std::min(hi, soc - part.battery->b_min);
      }
      const double actual = std::clamp(g - alpha * delta[t], lo, hi);
      if (part.has_storage()) soc -= actual;
      op.deviation(v, t) += actual - g;
    }
  }

  op.scheduled = settle::scheduled_injections(sc, layout, x);
  op.actual = op.scheduled + op.deviation;
  return op;
}

// Reactive twin of settle::scheduled_injections.
Eigen::MatrixXd reactive_injections(const grid::ScenarioDay& sc,
                                    const market::VariableLayout& layout,
                                    const Eigen::VectorXd& x) {
  const int T = layout.timesteps();
  const int N = layout.node_count();
  Eigen::MatrixXd inj = Eigen::MatrixXd::Zero(N, T);
  for (int n = 0; n < N; ++n)
    for (int t = 0; t < T; ++t) {
      double v = n == 0 ? 0.0 : -x[layout.flow_q(n, t)];
      for (int c : sc.graph.children[static_cast<std::size_t>(n)]) v += x[layout.flow_q(c, t)];
      inj(n, t) = v;
    }
  return inj;
}

// The flow into a node carries everything its subtree consumes; recomputing
// flows from the metered injections keeps conservation exact at the meters.
Eigen::MatrixXd flows_from_nets(const grid::NetworkGraph& g, const Eigen::MatrixXd& nets) {
  Eigen::MatrixXd flows = Eigen::MatrixXd::Zero(nets.rows(), nets.cols());
  for (int n = 1; n < static_cast<int>(nets.rows()); ++n)
    for (int m : grid::downstream_set(g, n)) flows.row(n) -= nets.row(m);
  return flows;
}

recovery::MeasurementSet meter_day(const grid::ScenarioDay& sc,
                                   const market::VariableLayout& layout,
                                   const Eigen::VectorXd& x, const Operation& op,
                                   const std::set<int>& silent) {
  const int T = layout.timesteps();
  const int N = layout.node_count();
  Eigen::MatrixXd net_p = op.actual;
  // The grid itself always balances: the substation feeder absorbs whatever
  // the participants' deviations left over.
  net_p.row(0) = -op.actual.bottomRows(N - 1).colwise().sum();
  const Eigen::MatrixXd net_q = reactive_injections(sc, layout, x);
  const Eigen::MatrixXd fp = flows_from_nets(sc.graph, net_p);
  const Eigen::MatrixXd fq = flows_from_nets(sc.graph, net_q);

  recovery::MeasurementSet ms;
  ms.timesteps = T;
  ms.nodes.resize(static_cast<std::size_t>(N));
  for (int n = 0; n < N; ++n) {
    auto& node = ms.nodes[static_cast<std::size_t>(n)];
    node.reporting = silent.count(n) == 0;
    node.net_p = net_p.row(n);
    node.net_q = net_q.row(n);
    node.flow_p = fp.row(n);
    node.flow_q = fq.row(n);
  }
  return ms;
}

std::string join_ints(const std::vector<int>& v, char sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out.push_back(sep);
    out += std::to_string(v[i]);
  }
  return out;
}

const char* mode_name(admm::PriceMode m) {
  return m == admm::PriceMode::duals ? "duals" : "consensus";
}

const char* variant_name(market::Variant v) {
  switch (v) {
    case market::Variant::full: return "full";
    case market::Variant::deterministic_network: return "deterministic_network";
    case market::Variant::deterministic: return "deterministic";
  }
  return "?";
}

}  // namespace

const char* solver_name(Solver s) {
  switch (s) {
    case Solver::c1: return "c1";
    case Solver::n3: return "n3";
    case Solver::s2: return "s2";
    case Solver::s3: return "s3";
  }
  return "?";
}

Solver parse_solver(const std::string& name) {
  if (name == "c1") return Solver::c1;
  if (name == "n3") return Solver::n3;
  if (name == "s2") return Solver::s2;
  if (name == "s3") return Solver::s3;
  throw std::invalid_argument("unknown solver '" + name + "' (expected c1, n3, s2 or s3)");
}

market::Variant solver_variant(Solver s) {
  // s2 runs with plain network limits; everything else keeps all margins.
  return s == Solver::s2 ? market::Variant::deterministic_network : market::Variant::full;
}

StageError::StageError(std::string where, const std::string& what)
    : std::runtime_error(where + ": " + what), stage(std::move(where)) {}

RunReport run_day(const RunConfig& cfg) {
  if (cfg.scenario.empty()) throw StageError("config", "no scenario path given");
  if (cfg.rho <= 0.0) throw StageError("config", "rho must be positive");
  if (cfg.tol_primal <= 0.0 || cfg.tol_dual <= 0.0 || cfg.max_surplus <= 0.0)
    throw StageError("config", "convergence thresholds must be positive");
  if (cfg.max_iterations <= 0) throw StageError("config", "iteration budget must be positive");
  if (cfg.solver == Solver::c1 && cfg.price_mode == admm::PriceMode::consensus)
    throw StageError("config", "the central solve has no consensus copies to price from");

  grid::ScenarioDay sc;
  try {
    sc = grid::load_scenario(cfg.scenario);
  } catch (const std::exception& e) {
    throw StageError("scenario", e.what());
  }

  const int N = sc.graph.node_count;
  const std::set<int> silent(cfg.silent_nodes.begin(), cfg.silent_nodes.end());
  if (silent.size() != cfg.silent_nodes.size())
    throw StageError("config", "duplicate silent node");
  for (int id : silent)
    if (id <= 0 || id >= N)
      throw StageError("config",
                       "silent node " + std::to_string(id) +
                           " out of range (the substation meter always reports)");
  if (is_secure(cfg.solver) && cfg.theta >= 0 && 2 * cfg.theta >= N)
    throw StageError("config", "sharing threshold needs 2*theta < node count");

  RunReport rep;
  rep.solver = cfg.solver;
  rep.variant = solver_variant(cfg.solver);
  rep.scenario = cfg.scenario;
  rep.seed = cfg.seed;
  rep.price_mode = cfg.price_mode;

  Clearing cl;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    cl = clear_market(sc, cfg);
  } catch (const std::exception& e) {
    throw StageError("clearing", e.what());
  }
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rep.converged = cl.converged;
  rep.iterations = cl.iterations;
  rep.trace = std::move(cl.trace);
  rep.audit = std::move(cl.audit);
  rep.max_shadow_gap = cl.max_shadow_gap;
  rep.fabric_rounds = cl.fabric_rounds;
  rep.elements_sent = cl.elements_sent;
  if (!cl.converged)
    throw StageError("clearing", std::string(solver_name(cfg.solver)) +
                                     " did not converge within the iteration budget");
  rep.objective = cl.solution.objective;
  rep.prices = cl.prices;

  const market::VariableLayout layout(sc);
  rep.alpha = Eigen::MatrixXd::Zero(N, layout.timesteps());
  for (int v : layout.flexible())
    for (int t = 0; t < layout.timesteps(); ++t) rep.alpha(v, t) = cl.solution.x[layout.reserve(v, t)];
  rep.surplus = energy_surplus(sc, layout, cl.solution.x);
  rep.relative_accuracy = 100.0 * rep.surplus.cwiseAbs().maxCoeff();

  Operation op;
  try {
    op = operate(sc, layout, cl.solution.x, cfg.seed);
  } catch (const std::exception& e) {
    throw StageError("operation", e.what());
  }

  try {
    const auto metered = meter_day(sc, layout, cl.solution.x, op, silent);
    rep.metering = recovery::recover(sc.graph, metered);
  } catch (const std::exception& e) {
    throw StageError("recovery", e.what());
  }

  std::optional<mpc::PartyFabric> fabric;
  settle::PayoffBundle bundle;
  Eigen::VectorXd balances(N);
  try {
    rep.regulation = settle::regulation_prices(sc, cl.prices);

    // The imbalance leg prices the participants' account rows: recovered
    // injections stand in for silent meters, and the substation row is its
    // own schedule plus reserve response, not the feeder slack.
    recovery::MeasurementSet account = rep.metering;
    account.nodes[0].net_p = op.actual.row(0);
    const Eigen::VectorXd imb =
        settle::imbalance_settlement(op.scheduled, account, rep.regulation);
    const Eigen::VectorXd surplus = settle::operator_surplus(op.scheduled, account, rep.regulation);
    if (surplus.minCoeff() < -1e-9)
      throw std::runtime_error("imbalance mechanism paid out more than it collected");

    if (is_secure(cfg.solver)) {
      fabric.emplace(N, mpc::PrimeField{}, cfg.seed ^ 0x9e3779b97f4a7c15ULL);
      if (cfg.theta >= 0) fabric->set_threshold(cfg.theta);
      bundle = settle::compute_payoffs(*fabric, sc, cl.solution, cl.prices, cl.converged);
      for (int n = 0; n < N; ++n) balances[n] = bundle.statements[static_cast<std::size_t>(n)].total;
    } else {
      const auto statements = settle::plaintext_payoffs(sc, cl.solution, cl.prices, cl.converged);
      for (int n = 0; n < N; ++n) balances[n] = statements[static_cast<std::size_t>(n)].total;
    }

    rep.settlement.resize(static_cast<std::size_t>(N));
    for (int n = 0; n < N; ++n) {
      auto& row = rep.settlement[static_cast<std::size_t>(n)];
      row.node = n;
      row.recovered = !rep.metering.nodes[static_cast<std::size_t>(n)].reporting;
      row.balance = balances[n];
      row.imbalance = imb[n];
      row.final_balance = balances[n] + imb[n];
    }
  } catch (const std::exception& e) {
    throw StageError("settlement", e.what());
  }

  if (is_secure(cfg.solver)) {
    try {
      const auto grp = settle::RistrettoGroup::standard();
      std::mt19937_64 dvs_rng(cfg.seed ^ 0xc2b2ae3d27d4eb4fULL);
      bool ok = true;
      std::vector<double> reentered(static_cast<std::size_t>(N));
      for (int n = 0; n < N; ++n) {
        const auto rec = settle::commit_balance(grp, balances[n], dvs_rng);
        rep.commitments.push_back(settle::hex_record(grp, rec.published));
        const auto proof = settle::prove_equality(grp, rec, rec.message, dvs_rng);
        ok = ok && settle::verify_equality(grp, rec.published, proof);
        reentered[static_cast<std::size_t>(n)] = balances[n];
      }
      rep.recheck = settle::recheck_balances(*fabric, bundle.balance_shares, reentered);
      rep.proofs_verified = ok;
      const auto& opens = fabric->audit();
      rep.audit.insert(rep.audit.end(), opens.begin(), opens.end());
    } catch (const std::exception& e) {
      throw StageError("verification", e.what());
    }
  }

  if (!cfg.out_dir.empty()) {
    try {
      write_outputs(rep, cfg.out_dir);
    } catch (const std::exception& e) {
      throw StageError("report", e.what());
    }
  }
  return rep;
}

Comparison compare_solvers(const std::vector<RunConfig>& cfgs) {
  if (cfgs.empty()) throw StageError("config", "no solver configurations given");
  for (const auto& c : cfgs)
    if (c.scenario != cfgs.front().scenario)
      throw StageError("config", "solver comparison requires one shared scenario");
  Comparison cmp;
  cmp.runs.reserve(cfgs.size());
  for (const auto& c : cfgs) cmp.runs.push_back(run_day(c));
  return cmp;
}

std::string report_csv(const RunReport& rep) {
  std::string out = "key,value\n";
  out += "solver," + std::string(solver_name(rep.solver)) + "\n";
  out += "variant," + std::string(variant_name(rep.variant)) + "\n";
  out += "scenario," + rep.scenario + "\n";
  out += "seed," + std::to_string(rep.seed) + "\n";
  out += "price_mode," + std::string(mode_name(rep.price_mode)) + "\n";
  out += "converged," + std::string(rep.converged ? "1" : "0") + "\n";
  out += "iterations," + std::to_string(rep.iterations) + "\n";
  out += "objective," + num(rep.objective) + "\n";
  out += "relative_accuracy_pct," + num(rep.relative_accuracy) + "\n";
  out += "nodes," + std::to_string(rep.alpha.rows()) + "\n";
  out += "timesteps," + std::to_string(rep.alpha.cols()) + "\n";
  std::vector<int> silent;
  for (const auto& row : rep.settlement)
    if (row.recovered) silent.push_back(row.node);
  out += "recovered_nodes," + join_ints(silent, ';') + "\n";
  out += "max_shadow_gap," + num(rep.max_shadow_gap) + "\n";
  out += "fabric_rounds," + std::to_string(rep.fabric_rounds) + "\n";
  out += "elements_sent," + std::to_string(rep.elements_sent) + "\n";
  out += "recheck_passed,";
  out += rep.recheck.empty()
             ? "-"
             : (std::all_of(rep.recheck.begin(), rep.recheck.end(), [](bool b) { return b; })
                    ? "1"
                    : "0");
  out += "\n";
  out += "proofs_verified," + std::string(rep.commitments.empty() ? "-" : (rep.proofs_verified ? "1" : "0")) + "\n";
  return out;
}

std::string trace_csv(const RunReport& rep) {
  std::string out = "iteration,primal,dual,worst_surplus\n";
  for (const auto& r : rep.trace)
    out += std::to_string(r.iteration) + "," + num(r.primal) + "," + num(r.dual) + "," +
           num(r.worst_surplus) + "\n";
  return out;
}

std::string balances_csv(const RunReport& rep) {
  std::string out = "node,recovered,balance,imbalance,final\n";
  for (const auto& row : rep.settlement)
    out += std::to_string(row.node) + "," + (row.recovered ? "1" : "0") + "," +
           num(row.balance) + "," + num(row.imbalance) + "," + num(row.final_balance) + "\n";
  return out;
}

std::string balances_csv(const Comparison& cmp) {
  std::string out = "node";
  for (const auto& run : cmp.runs)
    out += std::string(",") + solver_name(run.solver) + "/" + mode_name(run.price_mode);
  out += "\n";
  if (cmp.runs.empty()) return out;
  const std::size_t nodes = cmp.runs.front().settlement.size();
  for (std::size_t n = 0; n < nodes; ++n) {
    out += std::to_string(n);
    for (const auto& run : cmp.runs) out += "," + num(run.settlement[n].balance);
    out += "\n";
  }
  return out;
}

std::string comparison_csv(const Comparison& cmp) {
  std::string out =
      "solver,price_mode,variant,converged,iterations,wall_seconds,objective,relative_accuracy_"
      "pct\n";
  for (const auto& run : cmp.runs) {
    out += std::string(solver_name(run.solver)) + "," + mode_name(run.price_mode) + "," +
           variant_name(run.variant) + "," + (run.converged ? "1" : "0") + "," +
           std::to_string(run.iterations) + "," + num(run.wall_seconds) + "," +
           num(run.objective) + "," + num(run.relative_accuracy) + "\n";
  }
  return out;
}

std::string audit_log(const RunReport& rep) {
  std::string out;
  for (const auto& e : rep.audit) {
    out += "round=" + std::to_string(e.round) + " category=" + e.category + " item=" + e.item +
           " count=" + std::to_string(e.count) + " recipients=";
    out += join_ints(e.recipients, ',');
    out += "\n";
  }
  return out;
}

std::string timing_csv(const RunReport& rep) {
  return std::string("solver,wall_seconds\n") + solver_name(rep.solver) + "," +
         num(rep.wall_seconds) + "\n";
}

void write_outputs(const RunReport& rep, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const auto put = [&](const char* name, const std::string& text) {
    std::ofstream f(fs::path(dir) / name, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error(std::string("cannot write ") + name);
    f << text;
  };
  put("report.csv", report_csv(rep));
  put("trace.csv", trace_csv(rep));
  put("balances.csv", balances_csv(rep));
  put("audit.log", audit_log(rep));
  put("timing.csv", timing_csv(rep));
}

}  // namespace lem::harness
