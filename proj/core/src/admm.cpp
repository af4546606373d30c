#include "lem/admm.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace lem::admm {
namespace {

using Kind = market::ColumnInfo::Kind;

// Dictionary from a subproblem's local columns back into the day layout
// (owned columns directly, copies via their consensus group).
std::vector<int> to_layout(const market::LocalDecomposition& dec,
                           const market::LocalSubproblem& sub) {
  std::vector<int> to(static_cast<std::size_t>(sub.problem.n), -1);
  for (const auto& [local, layout_col] : sub.owned) to[static_cast<std::size_t>(local)] = layout_col;
  for (const auto& [local, grp] : sub.coupling)
    to[static_cast<std::size_t>(local)] = dec.group_column[static_cast<std::size_t>(grp)];
  return to;
}

double flat_start(const market::VariableLayout& lay, int layout_col, double u0, int flexible_count) {
  switch (lay.info(layout_col).kind) {
    case Kind::voltage:
      return u0;
    case Kind::reserve:
      return 1.0 / static_cast<double>(flexible_count);
    default:
      return 0.0;
  }
}

}  // namespace

LocalResult local_step(const market::LocalSubproblem& sub, double rho, const Eigen::VectorXd& z,
                       const Eigen::VectorXd& u, double tol, int max_iter) {
  conic::ConicProblem prox = sub.problem;
  for (std::size_t k = 0; k < sub.coupling.size(); ++k) {
    const auto local = static_cast<std::size_t>(sub.coupling[k].first);
    prox.hess_diag[local] += rho / 2.0;
    prox.lin[local] += -rho * (z[static_cast<Eigen::Index>(k)] - u[static_cast<Eigen::Index>(k)]);
  }
  const conic::SolverResult res = conic::solve(prox, tol, max_iter);
  if (res.status != conic::SolveStatus::optimal)
    throw std::runtime_error("local proximal solve failed");
  LocalResult out;
  out.x = res.x;
  out.balance_dual.resize(static_cast<Eigen::Index>(sub.balance_row.size()));
  for (std::size_t t = 0; t < sub.balance_row.size(); ++t)
    out.balance_dual[static_cast<Eigen::Index>(t)] =
        res.eq_dual[sub.balance_row[t]];
  out.adequacy_dual.resize(static_cast<Eigen::Index>(sub.adequacy_row.size()));
  for (std::size_t t = 0; t < sub.adequacy_row.size(); ++t)
    out.adequacy_dual[static_cast<Eigen::Index>(t)] =
        res.eq_dual[sub.adequacy_row[t]];
  return out;
}

Eigen::VectorXd global_average(const market::LocalDecomposition& dec,
                               const std::vector<Eigen::VectorXd>& x) {
  const auto groups = static_cast<Eigen::Index>(dec.group_column.size());
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(groups);
  Eigen::VectorXd count = Eigen::VectorXd::Zero(groups);
  for (std::size_t i = 0; i < dec.subs.size(); ++i)
    for (const auto& [local, grp] : dec.subs[i].coupling) {
      sum[grp] += x[i][local];
      count[grp] += 1.0;
    }
  return sum.cwiseQuotient(count);
}

void multiplier_update(const market::LocalDecomposition& dec,
                       const std::vector<Eigen::VectorXd>& x, const Eigen::VectorXd& z,
                       std::vector<Eigen::VectorXd>& u) {
  for (std::size_t i = 0; i < dec.subs.size(); ++i) {
    const auto& coupling = dec.subs[i].coupling;
    for (std::size_t k = 0; k < coupling.size(); ++k)
      u[i][static_cast<Eigen::Index>(k)] += x[i][coupling[k].first] - z[coupling[k].second];
  }
}

Metrics convergence_metrics(const grid::ScenarioDay& sc, const market::LocalDecomposition& dec,
                            const std::vector<Eigen::VectorXd>& x, const Eigen::VectorXd& z,
                            const Eigen::VectorXd& z_prev, double rho) {
  Metrics m;
  double primal2 = 0.0;
  for (std::size_t i = 0; i < dec.subs.size(); ++i)
    for (const auto& [local, grp] : dec.subs[i].coupling) {
      const double gap = x[i][local] - z[grp];
      primal2 += gap * gap;
    }
  m.primal = std::sqrt(primal2);
  m.dual = rho * (z - z_prev).norm();

  const int tt = dec.layout.timesteps();
  Eigen::VectorXd injection = Eigen::VectorXd::Zero(tt);
  for (std::size_t i = 0; i < dec.subs.size(); ++i)
    for (const auto& [local, layout_col] : dec.subs[i].owned) {
      const market::ColumnInfo& ci = dec.layout.info(layout_col);
      if (ci.kind == Kind::generation || ci.kind == Kind::import_p)
        injection[ci.t] += x[i][local];
      else if (ci.kind == Kind::export_p)
        injection[ci.t] -= x[i][local];
    }
  m.surplus.resize(tt);
  for (int t = 0; t < tt; ++t) {
    double demand = 0.0, forecast = 0.0;
    for (const auto& p : sc.participants) {
      demand += p.demand_p[static_cast<std::size_t>(t)];
      if (p.der) forecast += p.der->forecast[static_cast<std::size_t>(t)];
    }
    m.surplus[t] = (injection[t] + forecast - demand) / std::max(std::abs(demand), 1e-12);
    m.worst_surplus = std::max(m.worst_surplus, std::abs(m.surplus[t]));
  }
  return m;
}

Eigen::VectorXd consensus_seed(const grid::ScenarioDay& sc, const market::LocalDecomposition& dec) {
  const int flex = static_cast<int>(dec.layout.flexible().size());
  Eigen::VectorXd z(static_cast<Eigen::Index>(dec.group_column.size()));
  for (Eigen::Index g = 0; g < z.size(); ++g)
    z[g] = flat_start(dec.layout, dec.group_column[static_cast<std::size_t>(g)], sc.graph.u0, flex);
  return z;
}

Outcome run(const grid::ScenarioDay& sc, market::Variant variant, const Options& opt) {
  const market::LocalDecomposition dec = market::build_locals(sc, variant);
  const auto nsubs = dec.subs.size();
  const auto groups = static_cast<Eigen::Index>(dec.group_column.size());

  Outcome out;
  out.z = consensus_seed(sc, dec);
  out.x.assign(nsubs, Eigen::VectorXd());
  out.u.assign(nsubs, Eigen::VectorXd());
  out.balance_dual.assign(nsubs, Eigen::VectorXd());
  for (std::size_t i = 0; i < nsubs; ++i)
    out.u[i] = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dec.subs[i].coupling.size()));

  for (int it = 1; it <= opt.max_iterations; ++it) {
    for (std::size_t i = 0; i < nsubs; ++i) {
      Eigen::VectorXd zi(static_cast<Eigen::Index>(dec.subs[i].coupling.size()));
      for (std::size_t k = 0; k < dec.subs[i].coupling.size(); ++k)
        zi[static_cast<Eigen::Index>(k)] = out.z[dec.subs[i].coupling[k].second];
      LocalResult lr =
          local_step(dec.subs[i], opt.rho, zi, out.u[i], opt.local_tol, opt.local_max_iter);
      out.x[i] = std::move(lr.x);
      out.balance_dual[i] = std::move(lr.balance_dual);
      if (i == 0) out.adequacy_dual = std::move(lr.adequacy_dual);
    }
    const Eigen::VectorXd z_prev = out.z;
    out.z = global_average(dec, out.x);
    multiplier_update(dec, out.x, out.z, out.u);
    const Metrics m = convergence_metrics(sc, dec, out.x, out.z, z_prev, opt.rho);
    out.trace.push_back(IterationRecord{it, m.primal, m.dual, m.worst_surplus});
    out.iterations = it;
    if (m.primal <= opt.tol_primal && m.dual <= opt.tol_dual &&
        m.worst_surplus <= opt.max_surplus) {
      out.converged = true;
      break;
    }
  }

  out.solution.x = Eigen::VectorXd::Zero(dec.layout.size());
  for (std::size_t i = 0; i < nsubs; ++i)
    for (const auto& [local, layout_col] : dec.subs[i].owned)
      out.solution.x[layout_col] = out.x[i][local];
  for (Eigen::Index g = 0; g < groups; ++g)
    out.solution.x[dec.group_column[static_cast<std::size_t>(g)]] = out.z[g];
  out.solution.objective = 0.0;
  for (std::size_t i = 0; i < nsubs; ++i) {
    const std::vector<int> to = to_layout(dec, dec.subs[i]);
    const auto& p = dec.subs[i].problem;
    for (int local = 0; local < p.n; ++local) {
      const double v = out.solution.x[to[static_cast<std::size_t>(local)]];
      out.solution.objective +=
          p.hess_diag[static_cast<std::size_t>(local)] * v * v + p.lin[static_cast<std::size_t>(local)] * v;
    }
  }
  return out;
}

market::PriceSet extract_prices(const grid::ScenarioDay& sc, const market::LocalDecomposition& dec,
                                const Outcome& out, PriceMode mode, double rho) {
  if (!out.converged) throw std::runtime_error("price extraction requires a converged run");
  const int nn = dec.layout.node_count();
  const int tt = dec.layout.timesteps();
  market::PriceSet prices;
  prices.lambda = Eigen::MatrixXd::Zero(nn, tt);
  prices.pi = Eigen::VectorXd::Zero(tt);

  if (mode == PriceMode::duals) {
    for (int n = 0; n < nn; ++n)
      for (int t = 0; t < tt; ++t) prices.lambda(n, t) = -out.balance_dual[static_cast<std::size_t>(n)][t];
    for (int t = 0; t < tt; ++t) prices.pi[t] = -out.adequacy_dual[t];
    return prices;
  }

  // Consensus mode: a parent's multiplier on its copy of a child's line flow
  // is the parent's balance multiplier, and the substation's multiplier on a
  // participation-factor copy is the adequacy multiplier.
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(nn, tt);
  Eigen::MatrixXd cnt = Eigen::MatrixXd::Zero(nn, tt);
  Eigen::VectorXd pi_sum = Eigen::VectorXd::Zero(tt);
  Eigen::VectorXd pi_cnt = Eigen::VectorXd::Zero(tt);
  for (int n = 0; n < nn; ++n) {
    const auto& sub = dec.subs[static_cast<std::size_t>(n)];
    for (std::size_t k = 0; k < sub.coupling.size(); ++k) {
      const int layout_col = dec.group_column[static_cast<std::size_t>(sub.coupling[k].second)];
      const market::ColumnInfo& ci = dec.layout.info(layout_col);
      const double mult = rho * out.u[static_cast<std::size_t>(n)][static_cast<Eigen::Index>(k)];
      if (ci.kind == Kind::flow_p &&
          sc.graph.ancestor[static_cast<std::size_t>(ci.node)] == n) {
        sum(n, ci.t) += -mult;
        cnt(n, ci.t) += 1.0;
      } else if (n == 0 && ci.kind == Kind::reserve) {
        pi_sum[ci.t] += mult;
        pi_cnt[ci.t] += 1.0;
      }
    }
  }
  std::vector<int> order{0};
  for (std::size_t q = 0; q < order.size(); ++q)
    for (int c : sc.graph.children[static_cast<std::size_t>(order[q])]) order.push_back(c);
  for (int n : order)
    for (int t = 0; t < tt; ++t) {
      if (cnt(n, t) > 0.0)
        prices.lambda(n, t) = sum(n, t) / cnt(n, t);
      else
        prices.lambda(n, t) = prices.lambda(sc.graph.ancestor[static_cast<std::size_t>(n)], t);
    }
  for (int t = 0; t < tt; ++t)
    prices.pi[t] = pi_cnt[t] > 0.0 ? pi_sum[t] / pi_cnt[t] : 0.0;
  return prices;
}

}  // namespace lem::admm
