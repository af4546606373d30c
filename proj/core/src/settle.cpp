#include "lem/settle.hpp"

#include <sodium.h>

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <utility>

namespace lem::settle {

namespace {

// The system is treated as balanced when |sum of deviations| falls below this
// deadband, so metering noise cannot flip every node onto a regulation price.
constexpr double kSystemBalanced = 1e-9;

// Below this aggregate uncertainty no burden is being shared out at t and the
// ratio term of the flexibility payoff is dropped.
constexpr double kSigmaFloor = 1.0 / 256.0;

void require_sodium() {
  static const int rc = sodium_init();
  if (rc < 0) throw std::runtime_error("libsodium initialisation failed");
}

// Per-node energy and flexibility series for the given burden weights w[t];
// the secure and plaintext paths differ only in where w comes from.
std::vector<PayoffStatement> statement_series(const grid::ScenarioDay& sc,
                                              const market::VariableLayout& layout,
                                              const market::MarketSolution& sol,
                                              const market::PriceSet& prices,
                                              const std::vector<double>& w) {
  const int T = layout.timesteps();
  const int nodes = layout.node_count();
  std::vector<PayoffStatement> statements(static_cast<std::size_t>(nodes));
  for (int n = 0; n < nodes; ++n) {
    const auto& part = sc.participants[static_cast<std::size_t>(n)];
    auto& st = statements[static_cast<std::size_t>(n)];
    st.node = n;
    st.energy = Eigen::VectorXd::Zero(T);
    st.flexibility = Eigen::VectorXd::Zero(T);
    for (int t = 0; t < T; ++t) {
      const double g = layout.is_flexible(n) ? sol.x[layout.generation(n, t)] : 0.0;
      const double alpha = layout.is_flexible(n) ? sol.x[layout.reserve(n, t)] : 0.0;
      const double hf = part.is_prosumer() ? part.der->forecast[static_cast<std::size_t>(t)] : 0.0;
      const double sgv = part.is_prosumer() ? part.der->sigma[static_cast<std::size_t>(t)] : 0.0;
      st.energy[t] =
          prices.lambda(n, t) * (g + hf - part.demand_p[static_cast<std::size_t>(t)]);
      if (n == 0) {
        // The substation trades the upstream exchange at the nodal price and
        // carries the import/export tariffs; both legs are public schedule.
        const double lp = sol.x[layout.import_p(t)];
        const double sp = sol.x[layout.export_p(t)];
        st.energy[t] += prices.lambda(n, t) * (lp - sp);
        st.energy[t] -= sc.market.tariff_import[static_cast<std::size_t>(t)] * lp -
                        sc.market.tariff_export[static_cast<std::size_t>(t)] * sp;
      }
      st.flexibility[t] = prices.pi[t] * alpha - w[static_cast<std::size_t>(t)] * sgv;
    }
  }
  return statements;
}

void check_settlement_inputs(const grid::ScenarioDay& sc, const market::VariableLayout& layout,
                             const market::MarketSolution& sol, const market::PriceSet& prices,
                             bool converged, const char* who) {
  if (!converged) throw std::invalid_argument(std::string(who) + ": clearing did not converge");
  if (prices.lambda.rows() != layout.node_count() || prices.lambda.cols() != layout.timesteps() ||
      prices.pi.size() != layout.timesteps())
    throw std::invalid_argument(std::string(who) + ": price dimensions do not match the scenario");
  if (sol.x.size() != layout.size())
    throw std::invalid_argument(std::string(who) + ": solution does not match the scenario layout");
  (void)sc;
}

}  // namespace

PayoffBundle compute_payoffs(mpc::PartyFabric& f, const grid::ScenarioDay& sc,
                             const market::MarketSolution& sol, const market::PriceSet& prices,
                             bool converged) {
  const market::VariableLayout layout(sc);
  const int T = layout.timesteps();
  const int nodes = layout.node_count();
  check_settlement_inputs(sc, layout, sol, prices, converged, "compute_payoffs");
  if (f.parties() != nodes)
    throw std::invalid_argument("compute_payoffs: one party per node required");

  // Private inputs per node: forecast minus demand, then the uncertainty
  // widths; non-prosumers contribute zero width.
  std::vector<std::vector<double>> ins(static_cast<std::size_t>(nodes),
                                       std::vector<double>(2 * static_cast<std::size_t>(T), 0.0));
  for (int n = 0; n < nodes; ++n) {
    const auto& part = sc.participants[static_cast<std::size_t>(n)];
    for (int t = 0; t < T; ++t) {
      const double hf = part.is_prosumer() ? part.der->forecast[static_cast<std::size_t>(t)] : 0.0;
      ins[static_cast<std::size_t>(n)][static_cast<std::size_t>(t)] =
          hf - part.demand_p[static_cast<std::size_t>(t)];
      ins[static_cast<std::size_t>(n)][static_cast<std::size_t>(T + t)] =
          part.is_prosumer() ? part.der->sigma[static_cast<std::size_t>(t)] : 0.0;
    }
  }
  auto dealt = mpc::fixed_input_all(f, ins);
  const mpc::FixedParams p = dealt.front().params;

  // Aggregate uncertainty per t, opened as the public ratio denominator.
  mpc::SharedFixed sigma = mpc::fixed_slice(dealt[0], static_cast<std::size_t>(T),
                                            static_cast<std::size_t>(T));
  for (int n = 1; n < nodes; ++n)
    sigma = mpc::fixed_add(f, sigma,
                           mpc::fixed_slice(dealt[static_cast<std::size_t>(n)],
                                            static_cast<std::size_t>(T),
                                            static_cast<std::size_t>(T)));
  const auto sigma_open = mpc::fixed_open_to(f, sigma, {}, "sigma-denominator", "settlement");

  PayoffBundle out;
  out.sigma_total = Eigen::Map<const Eigen::VectorXd>(sigma_open.data(), T);
  std::vector<double> w(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t)
    w[static_cast<std::size_t>(t)] =
        out.sigma_total[t] > kSigmaFloor ? prices.pi[t] / out.sigma_total[t] : 0.0;

  out.statements = statement_series(sc, layout, sol, prices, w);
  out.balance_shares.reserve(static_cast<std::size_t>(nodes));
  for (int n = 0; n < nodes; ++n) {
    std::vector<double> lam(static_cast<std::size_t>(T));
    double cpub = 0.0;
    for (int t = 0; t < T; ++t) {
      lam[static_cast<std::size_t>(t)] = prices.lambda(n, t);
      const double g = layout.is_flexible(n) ? sol.x[layout.generation(n, t)] : 0.0;
      const double alpha = layout.is_flexible(n) ? sol.x[layout.reserve(n, t)] : 0.0;
      cpub += lam[static_cast<std::size_t>(t)] * g + prices.pi[t] * alpha;
    }
    if (n == 0) {
      // The substation trades the upstream exchange at the nodal price and
      // carries the import/export tariffs; both legs are public schedule.
      for (int t = 0; t < T; ++t) {
        const double lp = sol.x[layout.import_p(t)];
        const double sp = sol.x[layout.export_p(t)];
        cpub += lam[static_cast<std::size_t>(t)] * (lp - sp);
        cpub -= sc.market.tariff_import[static_cast<std::size_t>(t)] * lp -
                sc.market.tariff_export[static_cast<std::size_t>(t)] * sp;
      }
    }

    auto hd = mpc::fixed_slice(dealt[static_cast<std::size_t>(n)], 0, static_cast<std::size_t>(T));
    auto sg = mpc::fixed_slice(dealt[static_cast<std::size_t>(n)], static_cast<std::size_t>(T),
                               static_cast<std::size_t>(T));
    auto energy = mpc::fixed_sum_elements(f, mpc::fixed_scale_public_each(f, hd, lam));
    auto ratio = mpc::fixed_sum_elements(f, mpc::fixed_scale_public_each(f, sg, w));
    const std::vector<double> cvec{cpub};
    auto bal = mpc::fixed_add(f, mpc::fixed_sub(f, energy, ratio), mpc::fixed_constant(f, cvec, p));
    // Daily balances sit far below the format ceiling; tighten the tracked
    // bound so the later share comparison fits the masking headroom.
    bal = mpc::fixed_redeclare(bal, p.magnitude_bits);
    const std::vector<int> owner{n};
    const auto opened =
        mpc::fixed_open_to(f, bal, owner, "balance/" + std::to_string(n), "settlement");
    out.balance_shares.push_back(std::move(bal));
    out.statements[static_cast<std::size_t>(n)].total = opened[0];
  }
  return out;
}

std::vector<PayoffStatement> plaintext_payoffs(const grid::ScenarioDay& sc,
                                               const market::MarketSolution& sol,
                                               const market::PriceSet& prices, bool converged) {
  const market::VariableLayout layout(sc);
  const int T = layout.timesteps();
  check_settlement_inputs(sc, layout, sol, prices, converged, "plaintext_payoffs");
  std::vector<double> w(static_cast<std::size_t>(T), 0.0);
  for (int t = 0; t < T; ++t) {
    double total = 0.0;
    for (const auto& part : sc.participants)
      if (part.is_prosumer()) total += part.der->sigma[static_cast<std::size_t>(t)];
    if (total > kSigmaFloor) w[static_cast<std::size_t>(t)] = prices.pi[t] / total;
  }
  auto statements = statement_series(sc, layout, sol, prices, w);
  for (auto& st : statements) st.total = st.energy.sum() + st.flexibility.sum();
  return statements;
}

RegulationPrices regulation_prices(const grid::ScenarioDay& sc, const market::PriceSet& prices) {
  const int T = sc.market.timesteps;
  if (prices.lambda.cols() != T || prices.lambda.rows() < 1)
    throw std::invalid_argument("regulation_prices: malformed price set");
  RegulationPrices reg;
  reg.lambda0 = prices.lambda.row(0).transpose();
  reg.up = reg.lambda0;
  reg.down = reg.lambda0;
  for (int t = 0; t < T; ++t) {
    if (!sc.market.reg_up_spread.empty()) reg.up[t] += sc.market.reg_up_spread[static_cast<std::size_t>(t)];
    if (!sc.market.reg_down_spread.empty())
      reg.down[t] -= sc.market.reg_down_spread[static_cast<std::size_t>(t)];
  }
  return reg;
}

Eigen::MatrixXd scheduled_injections(const grid::ScenarioDay& sc,
                                     const market::VariableLayout& layout,
                                     const Eigen::VectorXd& x) {
  const int T = layout.timesteps();
  const int nodes = layout.node_count();
  if (x.size() != layout.size())
    throw std::invalid_argument("scheduled_injections: solution does not match the layout");
  Eigen::MatrixXd inj = Eigen::MatrixXd::Zero(nodes, T);
  for (int n = 0; n < nodes; ++n)
    for (int t = 0; t < T; ++t) {
      double v = n == 0 ? 0.0 : -x[layout.flow_p(n, t)];
      for (int c : sc.graph.children[static_cast<std::size_t>(n)]) v += x[layout.flow_p(c, t)];
      inj(n, t) = v;
    }
  return inj;
}

Eigen::VectorXd imbalance_settlement(const Eigen::MatrixXd& scheduled,
                                     const recovery::MeasurementSet& actual,
                                     const RegulationPrices& reg) {
  const Eigen::Index nodes = scheduled.rows();
  const Eigen::Index T = scheduled.cols();
  if (static_cast<Eigen::Index>(actual.nodes.size()) != nodes || actual.timesteps != T)
    throw std::invalid_argument("imbalance_settlement: schedule and metering disagree");
  if (reg.lambda0.size() != T || reg.up.size() != T || reg.down.size() != T)
    throw std::invalid_argument("imbalance_settlement: price series length mismatch");
  for (Eigen::Index t = 0; t < T; ++t)
    if (reg.up[t] < reg.lambda0[t] || reg.down[t] > reg.lambda0[t])
      throw std::invalid_argument(
          "imbalance_settlement: regulation prices must bracket the day-ahead price");

  Eigen::VectorXd result = Eigen::VectorXd::Zero(nodes);
  for (Eigen::Index t = 0; t < T; ++t) {
    double system = 0.0;
    for (Eigen::Index n = 0; n < nodes; ++n)
      system += actual.nodes[static_cast<std::size_t>(n)].net_p[t] - scheduled(n, t);
    for (Eigen::Index n = 0; n < nodes; ++n) {
      const double dev = actual.nodes[static_cast<std::size_t>(n)].net_p[t] - scheduled(n, t);
      double price = reg.lambda0[t];
      // Deviations aggravating the system imbalance settle at the regulation
      // price; counteracting ones keep the day-ahead price.
      if (system < -kSystemBalanced && dev < 0.0) price = reg.up[t];
      if (system > kSystemBalanced && dev > 0.0) price = reg.down[t];
      result[n] += price * dev;
    }
  }
  return result;
}

Eigen::VectorXd operator_surplus(const Eigen::MatrixXd& scheduled,
                                 const recovery::MeasurementSet& actual,
                                 const RegulationPrices& reg) {
  const Eigen::Index nodes = scheduled.rows();
  const Eigen::Index T = scheduled.cols();
  if (static_cast<Eigen::Index>(actual.nodes.size()) != nodes || actual.timesteps != T)
    throw std::invalid_argument("operator_surplus: schedule and metering disagree");
  if (reg.lambda0.size() != T || reg.up.size() != T || reg.down.size() != T)
    throw std::invalid_argument("operator_surplus: price series length mismatch");
  for (Eigen::Index t = 0; t < T; ++t)
    if (reg.up[t] < reg.lambda0[t] || reg.down[t] > reg.lambda0[t])
      throw std::invalid_argument(
          "operator_surplus: regulation prices must bracket the day-ahead price");

  Eigen::VectorXd surplus = Eigen::VectorXd::Zero(T);
  for (Eigen::Index t = 0; t < T; ++t) {
    double system = 0.0;
    for (Eigen::Index n = 0; n < nodes; ++n)
      system += actual.nodes[static_cast<std::size_t>(n)].net_p[t] - scheduled(n, t);
    double collected = 0.0;
    for (Eigen::Index n = 0; n < nodes; ++n) {
      const double dev = actual.nodes[static_cast<std::size_t>(n)].net_p[t] - scheduled(n, t);
      double price = reg.lambda0[t];
      if (system < -kSystemBalanced && dev < 0.0) price = reg.up[t];
      if (system > kSystemBalanced && dev > 0.0) price = reg.down[t];
      collected -= price * dev;
    }
    // The residual deviation is the operator's own position, closed at the
    // regulation price for the prevailing direction.
    double closing = reg.lambda0[t];
    if (system < -kSystemBalanced) closing = reg.up[t];
    if (system > kSystemBalanced) closing = reg.down[t];
    surplus[t] = collected + closing * system;
  }
  return surplus;
}

Eigen::VectorXd final_balance(const Eigen::VectorXd& balances, const Eigen::VectorXd& imbalance) {
  if (balances.size() != imbalance.size())
    throw std::invalid_argument("final_balance: series length mismatch");
  return balances + imbalance;
}

std::vector<bool> recheck_balances(mpc::PartyFabric& f, const std::vector<mpc::SharedFixed>& stored,
                                   const std::vector<double>& reentered) {
  if (stored.size() != reentered.size() || static_cast<int>(stored.size()) != f.parties())
    throw std::invalid_argument("recheck_balances: one claim per party required");
  std::vector<bool> verdicts(stored.size());
  for (std::size_t n = 0; n < stored.size(); ++n) {
    const auto p = stored[n].params;
    const std::vector<double> claim{reentered[n]};
    auto re = mpc::fixed_input(f, static_cast<int>(n), claim, p);
    // Both sides are daily balances well under the format ceiling, so the
    // difference keeps the masking headroom of the comparison.
    auto diff = mpc::fixed_redeclare(mpc::fixed_sub(f, stored[n], re), p.magnitude_bits);
    auto bit = mpc::fixed_is_zero(f, diff, 2.0 * p.resolution());
    const auto opened =
        mpc::proto::open_to(f, bit, {}, "recheck/" + std::to_string(n), "balance-check");
    verdicts[n] = opened[0] == 1;
  }
  return verdicts;
}

// --- toy commitment group ------------------------------------------------------

ToyGroup ToyGroup::standard() {
  ToyGroup grp;
  grp.g = 122;  // 3^6 mod 607 generates the order-101 subgroup
  grp.h = grp.power(grp.g, 29);
  return grp;
}

ToyGroup::Elem ToyGroup::inverse(Elem a) const { return power(a, modulus - 2); }

ToyGroup::Elem ToyGroup::power(Elem base, Scalar e) const {
  Elem acc = 1;
  base %= modulus;
  while (e != 0) {
    if (e & 1) acc = acc * base % modulus;
    base = base * base % modulus;
    e >>= 1;
  }
  return acc;
}

ToyGroup::Scalar ToyGroup::scalar_of(std::int64_t m) const {
  const auto q = static_cast<std::int64_t>(order);
  return static_cast<Scalar>(((m % q) + q) % q);
}

ToyGroup::Scalar ToyGroup::random_scalar(std::mt19937_64& rng) const { return rng() % order; }

ToyGroup::Scalar ToyGroup::challenge(std::span<const unsigned char> transcript) const {
  unsigned char digest[crypto_hash_sha512_BYTES];
  crypto_hash_sha512(digest, transcript.data(), transcript.size());
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | digest[i];
  return v % order;
}

std::vector<unsigned char> ToyGroup::encode(Elem e) const {
  std::vector<unsigned char> out(8);
  for (int i = 0; i < 8; ++i) out[static_cast<std::size_t>(i)] = (e >> (8 * i)) & 0xff;
  return out;
}

// --- ristretto255 commitment group ----------------------------------------------

RistrettoGroup RistrettoGroup::standard() {
  require_sodium();
  RistrettoGroup grp;
  Scalar one{};
  one[0] = 1;
  crypto_scalarmult_ristretto255_base(grp.g.data(), one.data());
  // Second generator with unknown discrete log: hash a domain tag plus the
  // base encoding straight onto the group.
  static constexpr char tag[] = "lem settlement commitment generator";
  std::vector<unsigned char> material(tag, tag + sizeof(tag) - 1);
  material.insert(material.end(), grp.g.begin(), grp.g.end());
  unsigned char digest[crypto_hash_sha512_BYTES];
  crypto_hash_sha512(digest, material.data(), material.size());
  crypto_core_ristretto255_from_hash(grp.h.data(), digest);
  return grp;
}

RistrettoGroup::Elem RistrettoGroup::mul(const Elem& a, const Elem& b) const {
  if (a == identity()) return b;
  if (b == identity()) return a;
  Elem out{};
  if (crypto_core_ristretto255_add(out.data(), a.data(), b.data()) != 0)
    throw std::invalid_argument("ristretto: invalid group element");
  return out;
}

RistrettoGroup::Elem RistrettoGroup::inverse(const Elem& a) const {
  if (a == identity()) return a;
  const Elem id{};
  Elem out{};
  if (crypto_core_ristretto255_sub(out.data(), id.data(), a.data()) != 0)
    throw std::invalid_argument("ristretto: invalid group element");
  return out;
}

RistrettoGroup::Elem RistrettoGroup::power(const Elem& base, const Scalar& e) const {
  Elem out{};
  if (base == identity() || sodium_is_zero(e.data(), e.size()) == 1) return out;
  if (crypto_scalarmult_ristretto255(out.data(), e.data(), base.data()) != 0) return Elem{};
  return out;
}

RistrettoGroup::Elem RistrettoGroup::power_g(const Scalar& e) const {
  Elem out{};
  if (sodium_is_zero(e.data(), e.size()) == 1) return out;
  if (crypto_scalarmult_ristretto255_base(out.data(), e.data()) != 0) return Elem{};
  return out;
}

RistrettoGroup::Elem RistrettoGroup::power_h(const Scalar& e) const { return power(h, e); }

RistrettoGroup::Scalar RistrettoGroup::scalar_of(std::int64_t m) const {
  Scalar out{};
  std::uint64_t mag = m < 0 ? static_cast<std::uint64_t>(-(m + 1)) + 1 : static_cast<std::uint64_t>(m);
  for (int i = 0; i < 8; ++i) out[static_cast<std::size_t>(i)] = (mag >> (8 * i)) & 0xff;
  if (m < 0) crypto_core_ristretto255_scalar_negate(out.data(), out.data());
  return out;
}

RistrettoGroup::Scalar RistrettoGroup::scalar_add(const Scalar& a, const Scalar& b) const {
  Scalar out{};
  crypto_core_ristretto255_scalar_add(out.data(), a.data(), b.data());
  return out;
}

RistrettoGroup::Scalar RistrettoGroup::scalar_sub(const Scalar& a, const Scalar& b) const {
  Scalar out{};
  crypto_core_ristretto255_scalar_sub(out.data(), a.data(), b.data());
  return out;
}

RistrettoGroup::Scalar RistrettoGroup::scalar_mul(const Scalar& a, const Scalar& b) const {
  Scalar out{};
  crypto_core_ristretto255_scalar_mul(out.data(), a.data(), b.data());
  return out;
}

RistrettoGroup::Scalar RistrettoGroup::random_scalar(std::mt19937_64& rng) const {
  unsigned char wide[64];
  for (int i = 0; i < 8; ++i) {
    const std::uint64_t word = rng();
    for (int j = 0; j < 8; ++j) wide[8 * i + j] = (word >> (8 * j)) & 0xff;
  }
  Scalar out{};
  crypto_core_ristretto255_scalar_reduce(out.data(), wide);
  return out;
}

RistrettoGroup::Scalar RistrettoGroup::challenge(std::span<const unsigned char> transcript) const {
  unsigned char digest[crypto_hash_sha512_BYTES];
  crypto_hash_sha512(digest, transcript.data(), transcript.size());
  Scalar out{};
  crypto_core_ristretto255_scalar_reduce(out.data(), digest);
  return out;
}

std::vector<unsigned char> RistrettoGroup::encode(const Elem& e) const {
  return {e.begin(), e.end()};
}

std::string to_hex(std::span<const unsigned char> bytes) {
  std::string out(bytes.size() * 2 + 1, '\0');
  sodium_bin2hex(out.data(), out.size(), bytes.data(), bytes.size());
  out.resize(bytes.size() * 2);
  return out;
}

}  // namespace lem::settle
