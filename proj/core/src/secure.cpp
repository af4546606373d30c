#include "lem/secure.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lem/fabric.hpp"

namespace lem::secure {
namespace {

using mpc::FieldElement;
using mpc::SharedFixed;
using mpc::SharedVec;
using Kind = market::ColumnInfo::Kind;

// Smallest width with |encoded v| < 2^bits for every |v| < limit, with slack
// for the per-contributor rounding an averaging sweep can accumulate.
int bits_for_limit(double limit, const mpc::FixedParams& p) {
  const double enc = std::ldexp(limit, p.fraction_bits) + 64.0;
  int bits = 1;
  while (std::ldexp(1.0, bits) <= enc) ++bits;
  return bits;
}

// Comparisons statistically mask their operand, which costs field headroom;
// wide operands get the masking width lowered to what still fits.
SharedFixed masking_clamped(SharedFixed a) {
  a.params.kappa = std::min(a.params.kappa, 61 - 2 - (a.bound_bits + 1));
  if (a.params.kappa < 8)
    throw std::runtime_error("secure clearing: operand too wide to mask in the field");
  return a;
}

// [1 - b] for a shared bit: every share is flipped against the constant one.
SharedVec bit_not(const mpc::PartyFabric& f, const SharedVec& b) {
  SharedVec out = b;
  for (auto& row : out.shares)
    for (auto& s : row) s = f.field().sub(1, s);
  return out;
}

SharedVec concat_bits(const std::vector<SharedVec>& parts) {
  std::size_t total = 0;
  for (const auto& part : parts) total += part.size();
  SharedVec out(parts.front().parties(), total);
  std::size_t at = 0;
  for (const auto& part : parts) {
    for (int p = 0; p < part.parties(); ++p)
      for (std::size_t i = 0; i < part.size(); ++i)
        out.shares[static_cast<std::size_t>(p)][at + i] = part.shares[static_cast<std::size_t>(p)][i];
    at += part.size();
  }
  return out;
}

// Share-level reordering: out[i] = a[idx[i]]. Purely local.
SharedFixed gather(const SharedFixed& a, const std::vector<int>& idx) {
  SharedFixed out{SharedVec(a.enc.parties(), idx.size()), a.params, a.bound_bits};
  for (int p = 0; p < a.enc.parties(); ++p)
    for (std::size_t i = 0; i < idx.size(); ++i)
      out.enc.shares[static_cast<std::size_t>(p)][i] =
          a.enc.shares[static_cast<std::size_t>(p)][static_cast<std::size_t>(idx[i])];
  return out;
}

std::vector<int> all_parties(int n) {
  std::vector<int> ids(static_cast<std::size_t>(n));
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

}  // namespace

CoordinationPlan plan_coordination(const market::LocalDecomposition& dec) {
  CoordinationPlan plan;
  plan.group_holders.assign(dec.group_column.size(), {});
  for (const auto& sub : dec.subs)
    for (const auto& [local, grp] : sub.coupling)
      plan.group_holders[static_cast<std::size_t>(grp)].push_back(sub.owner);

  std::map<std::vector<int>, std::vector<int>> by_holders;
  for (std::size_t g = 0; g < plan.group_holders.size(); ++g) {
    auto& holders = plan.group_holders[g];
    std::sort(holders.begin(), holders.end());
    holders.erase(std::unique(holders.begin(), holders.end()), holders.end());
    if (holders.size() < 2)
      throw std::logic_error("coordination plan: a consensus group needs at least two holders");
    plan.max_copies = std::max(plan.max_copies, static_cast<int>(holders.size()));
    by_holders[holders].push_back(static_cast<int>(g));
  }
  for (auto& [holders, groups] : by_holders)
    plan.buckets.push_back(CoordinationPlan::Bucket{holders, std::move(groups)});
  return plan;
}

CoordinationStep secure_coordination_step(mpc::PartyFabric& f,
                                          const market::LocalDecomposition& dec,
                                          const CoordinationPlan& plan,
                                          const std::vector<Eigen::VectorXd>& x,
                                          const Options& opt) {
  const int n = f.parties();
  if (static_cast<std::size_t>(n) != dec.subs.size() || x.size() != dec.subs.size())
    throw std::invalid_argument("secure_coordination_step: one party per subproblem");
  const int vb = bits_for_limit(opt.value_limit, opt.fixed);

  // Every holder shares its coupled copies in one dealing round. Each party
  // checks its own values against the declared public bound before dealing;
  // that check is what justifies the tighter width on the received sharings.
  std::vector<std::vector<double>> per_party(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < dec.subs.size(); ++i) {
    per_party[i].reserve(dec.subs[i].coupling.size());
    for (const auto& [local, grp] : dec.subs[i].coupling) {
      const double v = x[i][local];
      if (!(std::abs(v) < opt.value_limit))
        throw std::runtime_error("secure clearing: a submitted value exceeds the declared bound");
      per_party[i].push_back(v);
    }
  }
  auto dealt = mpc::fixed_input_all(f, per_party, opt.fixed);

  CoordinationStep step;
  step.submissions.reserve(dealt.size());
  for (auto& s : dealt) step.submissions.push_back(mpc::fixed_redeclare(s, vb));

  std::vector<std::unordered_map<int, int>> col_of_group(dec.subs.size());
  for (std::size_t i = 0; i < dec.subs.size(); ++i)
    for (const auto& [local, grp] : dec.subs[i].coupling) col_of_group[i][grp] = local;

  step.z = SharedFixed{SharedVec(n, dec.group_column.size()), opt.fixed, vb};
  step.z_open = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dec.group_column.size()));

  for (std::size_t b = 0; b < plan.buckets.size(); ++b) {
    const auto& bucket = plan.buckets[b];
    std::vector<std::pair<int, std::vector<double>>> contrib;
    contrib.reserve(bucket.holders.size());
    for (int h : bucket.holders) {
      std::vector<double> vals;
      vals.reserve(bucket.groups.size());
      for (int g : bucket.groups)
        vals.push_back(x[static_cast<std::size_t>(h)][col_of_group[static_cast<std::size_t>(h)].at(g)]);
      contrib.emplace_back(h, std::move(vals));
    }
    SharedFixed zb = mpc::fixed_redeclare(mpc::secure_average(f, contrib, opt.fixed), vb);
    const std::vector<double> opened =
        mpc::fixed_open_to(f, zb, bucket.holders, "consensus/" + std::to_string(b), "consensus-z");

    for (std::size_t k = 0; k < bucket.groups.size(); ++k) {
      const auto g = static_cast<std::size_t>(bucket.groups[k]);
      for (int p = 0; p < n; ++p)
        step.z.enc.shares[static_cast<std::size_t>(p)][g] =
            zb.enc.shares[static_cast<std::size_t>(p)][k];
      step.z_open[static_cast<Eigen::Index>(g)] = opened[k];
      double exact = 0.0;
      for (int h : bucket.holders)
        exact += x[static_cast<std::size_t>(h)][col_of_group[static_cast<std::size_t>(h)].at(bucket.groups[k])];
      exact /= static_cast<double>(bucket.holders.size());
      step.shadow_gap = std::max(step.shadow_gap, std::abs(opened[k] - exact));
    }
  }
  return step;
}

mpc::SharedFixed shared_surplus_tolerance(mpc::PartyFabric& f, const grid::ScenarioDay& sc,
                                          const Options& opt) {
  const int n = f.parties();
  if (n != sc.graph.node_count)
    throw std::invalid_argument("shared_surplus_tolerance: one party per node");
  const int tt = sc.market.timesteps;

  std::vector<std::vector<double>> per_party(static_cast<std::size_t>(n),
                                             std::vector<double>(static_cast<std::size_t>(tt), 0.0));
  for (const auto& p : sc.participants)
    for (int t = 0; t < tt; ++t)
      per_party[static_cast<std::size_t>(p.node)][static_cast<std::size_t>(t)] +=
          p.demand_p[static_cast<std::size_t>(t)];
  for (int t = 0; t < tt; ++t) {
    double total = 0.0;
    for (const auto& d : per_party) total += d[static_cast<std::size_t>(t)];
    if (!(std::abs(total) < opt.value_limit))
      throw std::runtime_error("secure clearing: aggregate demand exceeds the declared bound");
  }

  auto dealt = mpc::fixed_input_all(f, per_party, opt.fixed);
  SharedFixed total = dealt[0];
  for (std::size_t p = 1; p < dealt.size(); ++p) total = mpc::fixed_add(f, total, dealt[p]);
  total = mpc::fixed_redeclare(total, bits_for_limit(opt.value_limit, opt.fixed));
  return mpc::fixed_scale_public(f, total, opt.admm.max_surplus);
}

bool secure_convergence_test(mpc::PartyFabric& f, const market::LocalDecomposition& dec,
                             const CoordinationPlan& plan, const CoordinationStep& step,
                             const mpc::SharedFixed& z_prev,
                             const mpc::SharedFixed& surplus_tol, const Options& opt) {
  const int n = f.parties();
  const int tt = dec.layout.timesteps();
  std::size_t copies = 0;
  for (const auto& sub : dec.subs) copies += sub.coupling.size();
  if (copies == 0) throw std::invalid_argument("secure_convergence_test: nothing to coordinate");

  // The joint stop rule checks each entry against its share of the l2 budget,
  // so passing it is at least as strict as the plain-run criterion.
  const double thr_primal = opt.admm.tol_primal / std::sqrt(static_cast<double>(copies));
  const double thr_dual =
      opt.admm.tol_dual / (opt.admm.rho * std::sqrt(static_cast<double>(dec.group_column.size())));

  std::vector<SharedVec> bits;

  std::vector<SharedFixed> diffs;
  for (std::size_t i = 0; i < dec.subs.size(); ++i) {
    if (dec.subs[i].coupling.empty()) continue;
    std::vector<int> idx;
    idx.reserve(dec.subs[i].coupling.size());
    for (const auto& [local, grp] : dec.subs[i].coupling) idx.push_back(grp);
    diffs.push_back(mpc::fixed_sub(f, step.submissions[i], gather(step.z, idx)));
  }
  bits.push_back(mpc::fixed_is_zero(f, masking_clamped(mpc::fixed_concat(diffs)), thr_primal));

  bits.push_back(
      mpc::fixed_is_zero(f, masking_clamped(mpc::fixed_sub(f, step.z, z_prev)), thr_dual));

  // Every node balance holds at its local solution, so summing them telescopes
  // the energy imbalance into (ancestor copy - own value) over the line flows;
  // the imbalance is compared against the demand-scaled cap without opening
  // either side.
  SharedFixed s{SharedVec(n, static_cast<std::size_t>(tt)), opt.fixed, 0};
  std::vector<int> terms(static_cast<std::size_t>(tt), 0);
  const auto& field = f.field();
  for (std::size_t i = 0; i < dec.subs.size(); ++i) {
    for (std::size_t k = 0; k < dec.subs[i].coupling.size(); ++k) {
      const int col = dec.group_column[static_cast<std::size_t>(dec.subs[i].coupling[k].second)];
      const market::ColumnInfo& ci = dec.layout.info(col);
      if (ci.kind != Kind::flow_p) continue;
      const bool own = ci.node == dec.subs[i].owner;
      for (int p = 0; p < n; ++p) {
        auto& acc = s.enc.shares[static_cast<std::size_t>(p)][static_cast<std::size_t>(ci.t)];
        const FieldElement v = step.submissions[i].enc.shares[static_cast<std::size_t>(p)][k];
        acc = own ? field.sub(acc, v) : field.add(acc, v);
      }
      ++terms[static_cast<std::size_t>(ci.t)];
    }
  }
  const int worst = *std::max_element(terms.begin(), terms.end());
  int extra = 0;
  while ((1 << extra) < std::max(worst, 1)) ++extra;
  s.bound_bits = step.submissions.empty() ? opt.fixed.magnitude_bits
                                          : step.submissions[0].bound_bits + extra;

  SharedFixed mag = mpc::fixed_abs(f, masking_clamped(std::move(s)));
  SharedFixed tol = surplus_tol;
  tol.params.kappa =
      std::min(tol.params.kappa, 61 - 2 - (std::max(tol.bound_bits, mag.bound_bits) + 1));
  if (tol.params.kappa < 8)
    throw std::runtime_error("secure clearing: imbalance too wide to mask in the field");
  bits.push_back(bit_not(f, mpc::fixed_less_than(f, tol, mag)));

  SharedVec verdict = mpc::bit_and_tree(f, concat_bits(bits));
  const std::vector<FieldElement> opened =
      mpc::proto::open_to(f, verdict, all_parties(n), "stop", "convergence-bit");
  return opened[0] == 1;
}

Outcome run_secure(const grid::ScenarioDay& sc, market::Variant variant, const Options& opt) {
  const market::LocalDecomposition dec = market::build_locals(sc, variant);
  const auto nsubs = dec.subs.size();

  mpc::PartyFabric fabric(sc.graph.node_count, mpc::PrimeField(), opt.seed);
  if (opt.theta >= 0) fabric.set_threshold(opt.theta);
  const CoordinationPlan plan = plan_coordination(dec);
  const SharedFixed surplus_tol = shared_surplus_tolerance(fabric, sc, opt);

  Outcome out;
  out.max_copies = plan.max_copies;
  out.z = admm::consensus_seed(sc, dec);
  const int vb = bits_for_limit(opt.value_limit, opt.fixed);
  std::vector<double> seed(out.z.data(), out.z.data() + out.z.size());
  SharedFixed z_prev = mpc::fixed_redeclare(mpc::fixed_constant(fabric, seed, opt.fixed), vb);

  out.x.assign(nsubs, Eigen::VectorXd());
  out.u.assign(nsubs, Eigen::VectorXd());
  out.balance_dual.assign(nsubs, Eigen::VectorXd());
  for (std::size_t i = 0; i < nsubs; ++i)
    out.u[i] = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dec.subs[i].coupling.size()));

  for (int it = 1; it <= opt.admm.max_iterations; ++it) {
    for (std::size_t i = 0; i < nsubs; ++i) {
      Eigen::VectorXd zi(static_cast<Eigen::Index>(dec.subs[i].coupling.size()));
      for (std::size_t k = 0; k < dec.subs[i].coupling.size(); ++k)
        zi[static_cast<Eigen::Index>(k)] = out.z[dec.subs[i].coupling[k].second];
      admm::LocalResult lr = admm::local_step(dec.subs[i], opt.admm.rho, zi, out.u[i],
                                              opt.admm.local_tol, opt.admm.local_max_iter);
      out.x[i] = std::move(lr.x);
      out.balance_dual[i] = std::move(lr.balance_dual);
      if (i == 0) out.adequacy_dual = std::move(lr.adequacy_dual);
    }

    const CoordinationStep step = secure_coordination_step(fabric, dec, plan, out.x, opt);
    const bool stop = secure_convergence_test(fabric, dec, plan, step, z_prev, surplus_tol, opt);

    const Eigen::VectorXd z_before = out.z;
    out.z = step.z_open;
    for (std::size_t i = 0; i < nsubs; ++i)
      for (std::size_t k = 0; k < dec.subs[i].coupling.size(); ++k)
        out.u[i][static_cast<Eigen::Index>(k)] +=
            out.x[i][dec.subs[i].coupling[k].first] - out.z[dec.subs[i].coupling[k].second];

    const admm::Metrics m = admm::convergence_metrics(sc, dec, out.x, out.z, z_before, opt.admm.rho);
    out.trace.push_back(
        IterationAudit{it, step.shadow_gap, stop, m.primal, m.dual, m.worst_surplus});
    out.max_shadow_gap = std::max(out.max_shadow_gap, step.shadow_gap);
    out.iterations = it;
    z_prev = step.z;

    if (stop) {
      out.converged = true;
      mpc::fixed_open_to(fabric, step.z, all_parties(fabric.parties()), "schedule",
                         "final-output");
      break;
    }
  }

  out.solution.x = Eigen::VectorXd::Zero(dec.layout.size());
  for (std::size_t i = 0; i < nsubs; ++i)
    for (const auto& [local, layout_col] : dec.subs[i].owned)
      out.solution.x[layout_col] = out.x[i][local];
  for (std::size_t g = 0; g < dec.group_column.size(); ++g)
    out.solution.x[dec.group_column[g]] = out.z[static_cast<Eigen::Index>(g)];
  out.solution.objective = 0.0;
  for (std::size_t i = 0; i < nsubs; ++i) {
    std::vector<int> to(static_cast<std::size_t>(dec.subs[i].problem.n), -1);
    for (const auto& [local, layout_col] : dec.subs[i].owned) to[static_cast<std::size_t>(local)] = layout_col;
    for (const auto& [local, grp] : dec.subs[i].coupling)
      to[static_cast<std::size_t>(local)] = dec.group_column[static_cast<std::size_t>(grp)];
    const auto& p = dec.subs[i].problem;
    for (int local = 0; local < p.n; ++local) {
      const double v = out.solution.x[to[static_cast<std::size_t>(local)]];
      out.solution.objective += p.hess_diag[static_cast<std::size_t>(local)] * v * v +
                                p.lin[static_cast<std::size_t>(local)] * v;
    }
  }

  out.audit = fabric.audit();
  out.fabric_rounds = static_cast<std::uint64_t>(fabric.round());
  out.elements_sent = fabric.elements_sent();
  return out;
}

}  // namespace lem::secure
