#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lem/admm.hpp"
#include "lem/market.hpp"
#include "lem/recovery.hpp"
#include "lem/secure.hpp"
#include "lem/settle.hpp"

namespace lem::harness {

// The four clearing pipelines: central plaintext, distributed plaintext, and
// the two secure distributed runs (network margins dropped / everything on).
enum class Solver { c1, n3, s2, s3 };

const char* solver_name(Solver s);
Solver parse_solver(const std::string& name);  // throws std::invalid_argument

market::Variant solver_variant(Solver s);

struct RunConfig {
  Solver solver = Solver::c1;
  std::string scenario;         // path of the scenario file
  double rho = 1.0;             // consensus penalty weight
  double tol_primal = 1e-4;
  double tol_dual = 1e-4;
  double max_surplus = 0.02;    // worst per-t relative energy imbalance
  int max_iterations = 4000;
  int theta = -1;               // sharing threshold; -1 = floor((N-1)/2)
  std::uint64_t seed = 7;
  admm::PriceMode price_mode = admm::PriceMode::duals;
  std::vector<int> silent_nodes;  // meters withheld for the recovery drill
  std::string out_dir;            // when set, run_day also writes the reports
};

// Any stage failure surfaces as this, tagged with the stage that died:
// config, scenario, clearing, operation, recovery, settlement, verification.
struct StageError : std::runtime_error {
  std::string stage;
  StageError(std::string where, const std::string& what);
};

struct NodeRow {
  int node = 0;
  bool recovered = false;       // meter was silent; injections were recovered
  double balance = 0.0;         // day-ahead leg B_n
  double imbalance = 0.0;       // deviation leg I_n
  double final_balance = 0.0;   // F_n = B_n + I_n
};

struct RunReport {
  Solver solver = Solver::c1;
  market::Variant variant = market::Variant::full;
  std::string scenario;
  std::uint64_t seed = 0;
  admm::PriceMode price_mode = admm::PriceMode::duals;

  bool converged = false;
  int iterations = 0;           // global iterations (1 for the central solve)
  double objective = 0.0;
  double relative_accuracy = 0.0;  // percent: worst per-t relative energy surplus
  double wall_seconds = 0.0;       // clearing only; kept out of the report bytes

  Eigen::MatrixXd alpha;        // node x t participation factors (0 when inflexible)
  Eigen::VectorXd surplus;      // per t: relative energy surplus of the schedule
  std::vector<admm::IterationRecord> trace;  // distributed runs only

  market::PriceSet prices;
  settle::RegulationPrices regulation;
  std::vector<NodeRow> settlement;
  recovery::MeasurementSet metering;  // post-recovery view settlement ran on

  // Secure-run telemetry; empty/zero for the plaintext solvers.
  std::vector<mpc::PartyFabric::OpenEvent> audit;
  std::vector<std::string> commitments;  // hex commitment record per node
  std::vector<bool> recheck;             // balance re-entry verdicts per node
  bool proofs_verified = false;          // commitment equality proofs
  double max_shadow_gap = 0.0;
  std::uint64_t fabric_rounds = 0;
  std::uint64_t elements_sent = 0;
};

// The full daily protocol: clearing with the configured solver, operation
// with seeded forecast errors and the cleared reserve policies, metering
// with the configured nodes silent, recovery, then both settlement legs
// (plus commitments, re-entry checks and equality proofs on secure runs).
// Writes the report files when cfg.out_dir is set.
RunReport run_day(const RunConfig& cfg);

struct Comparison {
  std::vector<RunReport> runs;
};

// Runs every config against the one shared scenario; throws on a mismatch.
Comparison compare_solvers(const std::vector<RunConfig>& cfgs);

// Deterministic renderings: same config (and seed) gives identical bytes.
// Wall time is volatile, so it is confined to timing_csv.
std::string report_csv(const RunReport& rep);
std::string trace_csv(const RunReport& rep);
std::string balances_csv(const RunReport& rep);
std::string balances_csv(const Comparison& cmp);  // node x (solver, price mode)
std::string comparison_csv(const Comparison& cmp);
std::string audit_log(const RunReport& rep);
std::string timing_csv(const RunReport& rep);

// report.csv, trace.csv, balances.csv, audit.log and timing.csv under dir,
// which is created if missing.
void write_outputs(const RunReport& rep, const std::string& dir);

}  // namespace lem::harness
