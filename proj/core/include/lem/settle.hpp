#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lem/fabric.hpp"
#include "lem/market.hpp"
#include "lem/protocols.hpp"
#include "lem/recovery.hpp"
#include "lem/scenario.hpp"

namespace lem::settle {

// --- day-ahead payoffs --------------------------------------------------------

// One node's view of its own settlement: per-timestep energy revenue
// lambda*(g + h - d) and flexibility revenue pi*(alpha - sigma/sigma_total),
// plus the daily balance as it was opened to the node. The upstream tariff
// enters through the substation's statement only, as the cost of its
// import/export schedule.
struct PayoffStatement {
  int node = 0;
  Eigen::VectorXd energy;
  Eigen::VectorXd flexibility;
  double total = 0.0;
};

struct PayoffBundle {
  std::vector<PayoffStatement> statements;       // [node], owner views
  std::vector<mpc::SharedFixed> balance_shares;  // [node], retained for recheck_balances
  Eigen::VectorXd sigma_total;                   // aggregate uncertainty per t, opened
};

// Settle the cleared day on the fabric (one party per node). Demands,
// forecasts and per-node uncertainty stay private inputs; the cleared
// schedule and prices are public; only the aggregate sigma per timestep and
// each node's own balance are opened, the latter to its owner alone. Throws
// std::invalid_argument on an unconverged clearing.
PayoffBundle compute_payoffs(mpc::PartyFabric& f, const grid::ScenarioDay& sc,
                             const market::MarketSolution& sol, const market::PriceSet& prices,
                             bool converged);

// The same statements settled without a fabric, for the plaintext solvers:
// identical arithmetic with the exact aggregate sigma in place of the opened
// fixed-point one. Throws std::invalid_argument on an unconverged clearing.
std::vector<PayoffStatement> plaintext_payoffs(const grid::ScenarioDay& sc,
                                               const market::MarketSolution& sol,
                                               const market::PriceSet& prices, bool converged);

// --- imbalance settlement -----------------------------------------------------

struct RegulationPrices {
  Eigen::VectorXd lambda0;  // day-ahead price at the substation, per t
  Eigen::VectorXd up;       // price paid by nodes aggravating a system shortage
  Eigen::VectorXd down;     // price earned by nodes aggravating a system excess
};

RegulationPrices regulation_prices(const grid::ScenarioDay& sc, const market::PriceSet& prices);

// Scheduled net injection per node and timestep, derived from the cleared
// line flows so that it matches the metering convention (the substation row
// includes the upstream exchange).
Eigen::MatrixXd scheduled_injections(const grid::ScenarioDay& sc,
                                     const market::VariableLayout& layout,
                                     const Eigen::VectorXd& x);

// Two-price imbalance: deviations that aggravate the system imbalance settle
// at the regulation price, counteracting ones at the day-ahead price. Returns
// the per-node imbalance payment I_n (positive = earned). Throws
// std::invalid_argument unless up >= lambda0 >= down for every t.
Eigen::VectorXd imbalance_settlement(const Eigen::MatrixXd& scheduled,
                                     const recovery::MeasurementSet& actual,
                                     const RegulationPrices& reg);

// Operator surplus per timestep: the negated participant payments plus the
// operator's own trade of the residual imbalance at the regulation price
// (bought up-regulation when the system is short, sold down-regulation when
// long). Non-negative whenever up >= lambda0 >= down.
Eigen::VectorXd operator_surplus(const Eigen::MatrixXd& scheduled,
                                 const recovery::MeasurementSet& actual,
                                 const RegulationPrices& reg);

// F_n = B_n + I_n.
Eigen::VectorXd final_balance(const Eigen::VectorXd& balances, const Eigen::VectorXd& imbalance);

// --- balance verification: secure recheck -------------------------------------

// Every node re-enters its balance; each claim is compared under shares
// against the copy stored at settlement time and only the pass bit per node
// is opened. Tolerance is two quanta, so honest fixed-point round-trips pass.
std::vector<bool> recheck_balances(mpc::PartyFabric& f,
                                   const std::vector<mpc::SharedFixed>& stored,
                                   const std::vector<double>& reentered);

// --- balance verification: commitments and equality proofs --------------------

// Multiplicative subgroup of order 101 inside Z_607: small enough to
// brute-force every (message, randomness) pair in tests. Mirrors the
// ristretto255 interface below.
struct ToyGroup {
  using Elem = std::uint64_t;
  using Scalar = std::uint64_t;

  std::uint64_t modulus = 607;
  std::uint64_t order = 101;
  Elem g = 0, h = 0;

  static ToyGroup standard();

  Elem identity() const { return 1; }
  Elem mul(Elem a, Elem b) const { return a * b % modulus; }
  Elem inverse(Elem a) const;
  Elem power(Elem base, Scalar e) const;
  Elem power_g(Scalar e) const { return power(g, e); }
  Elem power_h(Scalar e) const { return power(h, e); }

  Scalar scalar_of(std::int64_t m) const;
  Scalar scalar_add(Scalar a, Scalar b) const { return (a + b) % order; }
  Scalar scalar_sub(Scalar a, Scalar b) const { return (a + order - b % order) % order; }
  Scalar scalar_mul(Scalar a, Scalar b) const { return a * b % order; }
  Scalar random_scalar(std::mt19937_64& rng) const;
  Scalar challenge(std::span<const unsigned char> transcript) const;

  std::vector<unsigned char> encode(Elem e) const;
};

// Prime-order group at full cryptographic strength (ristretto255 via
// libsodium); h is hash-derived from a domain tag so nobody knows log_g h.
struct RistrettoGroup {
  using Elem = std::array<unsigned char, 32>;
  using Scalar = std::array<unsigned char, 32>;

  Elem g{}, h{};

  static RistrettoGroup standard();

  Elem identity() const { return Elem{}; }
  Elem mul(const Elem& a, const Elem& b) const;
  Elem inverse(const Elem& a) const;
  Elem power(const Elem& base, const Scalar& e) const;
  Elem power_g(const Scalar& e) const;
  Elem power_h(const Scalar& e) const;

  Scalar scalar_of(std::int64_t m) const;
  Scalar scalar_add(const Scalar& a, const Scalar& b) const;
  Scalar scalar_sub(const Scalar& a, const Scalar& b) const;
  Scalar scalar_mul(const Scalar& a, const Scalar& b) const;
  Scalar random_scalar(std::mt19937_64& rng) const;
  Scalar challenge(std::span<const unsigned char> transcript) const;

  std::vector<unsigned char> encode(const Elem& e) const;
};

// ElGamal pair (A, B) = (g^rho, g^m * h^rho). Binding is unconditional: g
// generates the group, so A pins rho and then B pins m.
template <class G>
struct Commitment {
  typename G::Elem a{}, b{};

  friend bool operator==(const Commitment&, const Commitment&) = default;
};

// A node's private opening together with the published pair.
template <class G>
struct CommitmentRecord {
  std::int64_t message = 0;  // balance in 2^-F quanta
  typename G::Scalar rho{};
  Commitment<G> published;
};

// Chaum-Pedersen transcript showing two commitments hide the same message;
// the challenge is hash-derived, so the proof verifies offline.
template <class G>
struct EqualityProof {
  Commitment<G> fresh;
  typename G::Elem t_g{}, t_h{};
  typename G::Scalar s{};
};

template <class G>
Commitment<G> commit(const G& grp, std::int64_t message, const typename G::Scalar& rho) {
  return Commitment<G>{grp.power_g(rho),
                       grp.mul(grp.power_g(grp.scalar_of(message)), grp.power_h(rho))};
}

template <class G>
CommitmentRecord<G> commit_balance(const G& grp, double balance, std::mt19937_64& rng,
                                   const mpc::FixedParams& p = {}) {
  CommitmentRecord<G> rec;
  rec.message = mpc::fixed_encode(balance, p);
  rec.rho = grp.random_scalar(rng);
  rec.published = commit(grp, rec.message, rec.rho);
  return rec;
}

template <class G>
typename G::Scalar proof_challenge(const G& grp, const Commitment<G>& published,
                                   const EqualityProof<G>& proof) {
  std::vector<unsigned char> buf;
  auto put = [&](const typename G::Elem& e) {
    const auto bytes = grp.encode(e);
    buf.insert(buf.end(), bytes.begin(), bytes.end());
  };
  put(grp.g);
  put(grp.h);
  put(published.a);
  put(published.b);
  put(proof.fresh.a);
  put(proof.fresh.b);
  put(proof.t_g);
  put(proof.t_h);
  return grp.challenge(buf);
}

// Prove that a fresh commitment to `message` opens to the same value as the
// published record: (A/A', B/B') = (g^d, h^d) with d = rho - rho', and the
// transcript shows knowledge of that common exponent.
template <class G>
EqualityProof<G> prove_equality(const G& grp, const CommitmentRecord<G>& record,
                                std::int64_t message, std::mt19937_64& rng) {
  EqualityProof<G> out;
  const auto rho_fresh = grp.random_scalar(rng);
  out.fresh = commit(grp, message, rho_fresh);
  const auto w = grp.random_scalar(rng);
  out.t_g = grp.power_g(w);
  out.t_h = grp.power_h(w);
  const auto c = proof_challenge(grp, record.published, out);
  out.s = grp.scalar_add(w, grp.scalar_mul(c, grp.scalar_sub(record.rho, rho_fresh)));
  return out;
}

template <class G>
bool verify_equality(const G& grp, const Commitment<G>& published, const EqualityProof<G>& proof) {
  const auto c = proof_challenge(grp, published, proof);
  const auto da = grp.mul(published.a, grp.inverse(proof.fresh.a));
  const auto db = grp.mul(published.b, grp.inverse(proof.fresh.b));
  return grp.power_g(proof.s) == grp.mul(proof.t_g, grp.power(da, c)) &&
         grp.power_h(proof.s) == grp.mul(proof.t_h, grp.power(db, c));
}

std::string to_hex(std::span<const unsigned char> bytes);

template <class G>
std::string hex_record(const G& grp, const Commitment<G>& c) {
  auto bytes = grp.encode(c.a);
  const auto b = grp.encode(c.b);
  bytes.insert(bytes.end(), b.begin(), b.end());
  return to_hex(bytes);
}

}  // namespace lem::settle
