#include "lem/market.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "lem/stats.hpp"

namespace lem::market {
namespace {

using conic::Terms;
using Cone = conic::ConicProblem::Cone;
using Row = conic::ConicProblem::Row;
using Kind = ColumnInfo::Kind;

double forecast(const grid::ParticipantProfile& p, int t) {
  return p.der ? p.der->forecast[static_cast<std::size_t>(t)] : 0.0;
}

int owner_of(const VariableLayout& lay, int col) {
  const ColumnInfo& ci = lay.info(col);
  switch (ci.kind) {
    case Kind::import_p:
    case Kind::export_p:
    case Kind::import_q:
    case Kind::export_q:
      return 0;
    default:
      return ci.node;
  }
}

enum class RowRole { generic, balance, adequacy };

struct Sink {
  virtual ~Sink() = default;
  virtual void equality(int owner, Row row, RowRole role, int t) = 0;
  virtual void inequality(int owner, Row row) = 0;
  virtual void cone(int owner, Cone c) = 0;
};

// Emits the complete constraint set in layout columns. Every row is handed to
// the sink exactly once together with the node responsible for it, so the
// centralized problem and the per-node split share one definition.
void emit_constraints(const grid::ScenarioDay& sc, const VariableLayout& lay,
                      const UncertaintyModel& un, Variant variant, Sink& sink) {
  const grid::NetworkGraph& g = sc.graph;
  const int nn = g.node_count;
  const int tt = lay.timesteps();
  const auto& parts = sc.participants;

  const double zu = variant == Variant::full ? un.z_voltage : 0.0;
  const double zf = variant == Variant::full ? un.z_flow : 0.0;
  const double zg = variant != Variant::deterministic ? un.z_generation : 0.0;
  const double zb = variant != Variant::deterministic ? un.z_battery : 0.0;

  // Line membership and path-resistance weights: pw(n, j) is the summed
  // resistance of the lines on the root->n path whose subtree contains j.
  std::vector<std::vector<char>> below(static_cast<std::size_t>(nn),
                                       std::vector<char>(static_cast<std::size_t>(nn), 0));
  for (int n = 1; n < nn; ++n)
    for (int j : grid::downstream_set(g, n)) below[static_cast<std::size_t>(n)][static_cast<std::size_t>(j)] = 1;
  Eigen::MatrixXd pw = Eigen::MatrixXd::Zero(nn, nn);
  for (int n = 1; n < nn; ++n)
    for (int m : grid::path_from_root(g, n))
      for (int j = 1; j < nn; ++j)
        if (below[static_cast<std::size_t>(m)][static_cast<std::size_t>(j)])
          pw(n, j) += g.line_r[static_cast<std::size_t>(m)];

  const auto dodeca = grid::dodecagon_coefficients();
  const int np = static_cast<int>(un.producers.size());

  for (int t = 0; t < tt; ++t) {
    // Substation power exchange balances the root node.
    {
      Row r;
      r.terms = {{lay.import_p(t), 1.0}, {lay.export_p(t), -1.0}};
      if (lay.is_flexible(0)) r.terms.emplace_back(lay.generation(0, t), 1.0);
      for (int c : g.children[0]) r.terms.emplace_back(lay.flow_p(c, t), -1.0);
      r.rhs = parts[0].demand_p[static_cast<std::size_t>(t)] - forecast(parts[0], t);
      r.tag = "balance-active";
      sink.equality(0, std::move(r), RowRole::balance, t);
    }
    {
      Row r;
      r.terms = {{lay.import_q(t), 1.0}, {lay.export_q(t), -1.0}};
      for (int c : g.children[0]) r.terms.emplace_back(lay.flow_q(c, t), -1.0);
      r.rhs = parts[0].demand_q[static_cast<std::size_t>(t)];
      r.tag = "balance-reactive";
      sink.equality(0, std::move(r), RowRole::generic, t);
    }
    {
      Row r;
      for (int v : lay.flexible()) r.terms.emplace_back(lay.reserve(v, t), 1.0);
      r.rhs = 1.0;
      r.tag = "reserve-adequacy";
      sink.equality(0, std::move(r), RowRole::adequacy, t);
    }
    for (int col : {lay.import_p(t), lay.export_p(t), lay.import_q(t), lay.export_q(t)}) {
      Row r;
      r.terms = {{col, -1.0}};
      r.rhs = 0.0;
      r.tag = "exchange-sign";
      sink.inequality(0, std::move(r));
    }

    for (int n = 1; n < nn; ++n) {
      const auto nu = static_cast<std::size_t>(n);
      {
        Row r;
        r.terms = {{lay.flow_p(n, t), 1.0}};
        if (lay.is_flexible(n)) r.terms.emplace_back(lay.generation(n, t), 1.0);
        for (int c : g.children[nu]) r.terms.emplace_back(lay.flow_p(c, t), -1.0);
        r.rhs = parts[nu].demand_p[static_cast<std::size_t>(t)] - forecast(parts[nu], t);
        r.tag = "balance-active";
        sink.equality(n, std::move(r), RowRole::balance, t);
      }
      {
        Row r;
        r.terms = {{lay.flow_q(n, t), 1.0}};
        for (int c : g.children[nu]) r.terms.emplace_back(lay.flow_q(c, t), -1.0);
        r.rhs = parts[nu].demand_q[static_cast<std::size_t>(t)];
        r.tag = "balance-reactive";
        sink.equality(n, std::move(r), RowRole::generic, t);
      }
      {
        // u_n = u_ancestor - 2 (r f^P + x f^Q)
        Row r;
        r.terms = {{lay.voltage(n, t), 1.0},
                   {lay.flow_p(n, t), 2.0 * g.line_r[nu]},
                   {lay.flow_q(n, t), 2.0 * g.line_x[nu]}};
        const int a = g.ancestor[nu];
        if (a >= 1)
          r.terms.emplace_back(lay.voltage(a, t), -1.0);
        r.rhs = a == 0 ? g.u0 : 0.0;
        r.tag = "voltage-drop";
        sink.equality(n, std::move(r), RowRole::generic, t);
      }
    }

    for (int v : lay.flexible()) {
      const auto& gen = *parts[static_cast<std::size_t>(v)].generation;
      const double margin = zg * un.sigma_delta[t];
      {
        Row r;
        r.terms = {{lay.generation(v, t), 1.0}};
        if (margin > 0.0) r.terms.emplace_back(lay.reserve(v, t), margin);
        r.rhs = gen.p_max;
        r.tag = "generation-cap";
        sink.inequality(v, std::move(r));
      }
      {
        Row r;
        r.terms = {{lay.generation(v, t), -1.0}};
        if (margin > 0.0) r.terms.emplace_back(lay.reserve(v, t), margin);
        r.rhs = -gen.p_min;
        r.tag = "generation-cap";
        sink.inequality(v, std::move(r));
      }
      {
        Row r;
        r.terms = {{lay.reserve(v, t), 1.0}};
        r.rhs = 1.0;
        r.tag = "reserve-box";
        sink.inequality(v, std::move(r));
      }
      {
        Row r;
        r.terms = {{lay.reserve(v, t), -1.0}};
        r.rhs = 0.0;
        r.tag = "reserve-box";
        sink.inequality(v, std::move(r));
      }
    }

    for (int m : lay.storages()) {
      const auto& bat = *parts[static_cast<std::size_t>(m)].battery;
      {
        Row r;
        r.terms = {{lay.storage(m, t), 1.0}, {lay.generation(m, t), 1.0}};
        if (t > 0) r.terms.emplace_back(lay.storage(m, t - 1), -1.0);
        r.rhs = t == 0 ? bat.b0 : 0.0;
        r.tag = "storage-update";
        sink.equality(m, std::move(r), RowRole::generic, t);
      }
      std::vector<Terms> rows;
      std::vector<double> consts;
      for (int tau = 0; tau <= t; ++tau) {
        const double c = zb * un.sigma_delta[tau];
        if (c > 0.0) {
          rows.push_back(Terms{{lay.reserve(m, tau), c}});
          consts.push_back(0.0);
        }
      }
      if (rows.empty()) {
        Row hi;
        hi.terms = {{lay.storage(m, t), 1.0}};
        hi.rhs = bat.b_max;
        hi.tag = "storage-range";
        sink.inequality(m, std::move(hi));
        Row lo;
        lo.terms = {{lay.storage(m, t), -1.0}};
        lo.rhs = -bat.b_min;
        lo.tag = "storage-range";
        sink.inequality(m, std::move(lo));
      } else {
        Cone hi;
        hi.bound_terms = {{lay.storage(m, t), -1.0}};
        hi.bound_const = bat.b_max;
        hi.row_terms = rows;
        hi.row_const = consts;
        hi.tag = "storage-range";
        sink.cone(m, std::move(hi));
        Cone lo;
        lo.bound_terms = {{lay.storage(m, t), 1.0}};
        lo.bound_const = -bat.b_min;
        lo.row_terms = std::move(rows);
        lo.row_const = std::move(consts);
        lo.tag = "storage-range";
        sink.cone(m, std::move(lo));
      }
    }

    for (int n = 1; n < nn; ++n) {
      const auto nu = static_cast<std::size_t>(n);
      // Apparent-power polygon on the line into n, with the active-flow
      // deviation folded in: deviations of producers below the line, minus
      // the recourse of flexible units below the line.
      std::vector<Terms> dev_rows;
      std::vector<double> dev_consts;
      if (zf > 0.0) {
        for (int ri = 0; ri < np; ++ri) {
          const double sg = un.sigma(ri, t);
          if (sg <= 0.0) continue;
          Terms row;
          for (int j : lay.flexible())
            if (j >= 1 && below[nu][static_cast<std::size_t>(j)]) row.emplace_back(lay.reserve(j, t), -sg);
          const double cst = below[nu][static_cast<std::size_t>(un.producers[static_cast<std::size_t>(ri)])] ? sg : 0.0;
          if (!row.empty() || cst != 0.0) {
            dev_rows.push_back(std::move(row));
            dev_consts.push_back(cst);
          }
        }
      }
      const double cap = g.line_s_max[nu];
      for (const auto& face : dodeca) {
        const bool margined = !dev_rows.empty() && std::abs(face.a1) > 1e-12;
        if (!margined) {
          Row r;
          r.terms = {{lay.flow_p(n, t), face.a1}, {lay.flow_q(n, t), face.a2}};
          r.rhs = -face.a3 * cap;
          r.tag = "line-capacity";
          sink.inequality(n, std::move(r));
        } else {
          const double scale = zf * std::abs(face.a1);
          Cone c;
          c.bound_terms = {{lay.flow_p(n, t), -face.a1}, {lay.flow_q(n, t), -face.a2}};
          c.bound_const = -face.a3 * cap;
          c.tag = "line-capacity";
          for (std::size_t k = 0; k < dev_rows.size(); ++k) {
            Terms row = dev_rows[k];
            for (auto& [col, coef] : row) coef *= scale;
            c.row_terms.push_back(std::move(row));
            c.row_const.push_back(scale * dev_consts[k]);
          }
          sink.cone(n, std::move(c));
        }
      }

      // Voltage band, with the deviation of the drop accumulated over the
      // path from the substation.
      std::vector<Terms> vrows;
      std::vector<double> vconsts;
      if (zu > 0.0) {
        for (int ri = 0; ri < np; ++ri) {
          const double sg = un.sigma(ri, t);
          if (sg <= 0.0) continue;
          Terms row;
          for (int j : lay.flexible())
            if (j >= 1 && pw(n, j) > 0.0) row.emplace_back(lay.reserve(j, t), -2.0 * zu * sg * pw(n, j));
          const double cst = 2.0 * zu * sg * pw(n, un.producers[static_cast<std::size_t>(ri)]);
          if (!row.empty() || cst != 0.0) {
            vrows.push_back(std::move(row));
            vconsts.push_back(cst);
          }
        }
      }
      if (vrows.empty()) {
        Row hi;
        hi.terms = {{lay.voltage(n, t), 1.0}};
        hi.rhs = g.voltage_max[nu];
        hi.tag = "voltage-range";
        sink.inequality(n, std::move(hi));
        Row lo;
        lo.terms = {{lay.voltage(n, t), -1.0}};
        lo.rhs = -g.voltage_min[nu];
        lo.tag = "voltage-range";
        sink.inequality(n, std::move(lo));
      } else {
        Cone hi;
        hi.bound_terms = {{lay.voltage(n, t), -1.0}};
        hi.bound_const = g.voltage_max[nu];
        hi.row_terms = vrows;
        hi.row_const = vconsts;
        hi.tag = "voltage-range";
        sink.cone(n, std::move(hi));
        Cone lo;
        lo.bound_terms = {{lay.voltage(n, t), 1.0}};
        lo.bound_const = -g.voltage_min[nu];
        lo.row_terms = std::move(vrows);
        lo.row_const = std::move(vconsts);
        lo.tag = "voltage-range";
        sink.cone(n, std::move(lo));
      }
    }
  }
}

// Objective: quadratic dispatch cost plus the expected recourse cost, plus the
// substation's energy procurement. A vanishing curvature on the reactive
// exchange pins its import/export split (its difference is what matters).
void objective_terms(const grid::ScenarioDay& sc, const VariableLayout& lay,
                     const UncertaintyModel& un, Eigen::VectorXd& hess, Eigen::VectorXd& lin) {
  hess = Eigen::VectorXd::Zero(lay.size());
  lin = Eigen::VectorXd::Zero(lay.size());
  for (int v : lay.flexible()) {
    const auto& gen = *sc.participants[static_cast<std::size_t>(v)].generation;
    for (int t = 0; t < lay.timesteps(); ++t) {
      hess[lay.generation(v, t)] += gen.cost_quad;
      hess[lay.reserve(v, t)] += gen.cost_quad * un.sigma_delta[t] * un.sigma_delta[t];
      lin[lay.generation(v, t)] += gen.cost_lin;
    }
  }
  for (int t = 0; t < lay.timesteps(); ++t) {
    lin[lay.import_p(t)] += sc.market.tariff_import[static_cast<std::size_t>(t)];
    lin[lay.export_p(t)] -= sc.market.tariff_export[static_cast<std::size_t>(t)];
    hess[lay.import_q(t)] += 1e-8;
    hess[lay.export_q(t)] += 1e-8;
  }
}

}  // namespace

// --- VariableLayout --------------------------------------------------------

VariableLayout::VariableLayout(const grid::ScenarioDay& sc) {
  t_ = sc.market.timesteps;
  nodes_ = sc.graph.node_count;
  u_base_.assign(static_cast<std::size_t>(nodes_), -1);
  fp_base_ = u_base_;
  fq_base_ = u_base_;
  g_base_ = u_base_;
  a_base_ = u_base_;
  b_base_ = u_base_;
  int next = 0;
  auto claim = [&](std::vector<int>& base, int node, Kind kind) {
    base[static_cast<std::size_t>(node)] = next;
    for (int t = 0; t < t_; ++t) info_.push_back(ColumnInfo{kind, node, t});
    next += t_;
  };
  for (int n = 1; n < nodes_; ++n) {
    claim(u_base_, n, Kind::voltage);
    claim(fp_base_, n, Kind::flow_p);
    claim(fq_base_, n, Kind::flow_q);
  }
  for (int n = 0; n < nodes_; ++n) {
    const auto& p = sc.participants[static_cast<std::size_t>(n)];
    if (p.generation) {
      flex_.push_back(n);
      claim(g_base_, n, Kind::generation);
      claim(a_base_, n, Kind::reserve);
    }
    if (p.battery) {
      batt_.push_back(n);
      claim(b_base_, n, Kind::storage);
    }
  }
  lp_ = next;
  for (int t = 0; t < t_; ++t) info_.push_back(ColumnInfo{Kind::import_p, 0, t});
  next += t_;
  sp_ = next;
  for (int t = 0; t < t_; ++t) info_.push_back(ColumnInfo{Kind::export_p, 0, t});
  next += t_;
  lq_ = next;
  for (int t = 0; t < t_; ++t) info_.push_back(ColumnInfo{Kind::import_q, 0, t});
  next += t_;
  sq_ = next;
  for (int t = 0; t < t_; ++t) info_.push_back(ColumnInfo{Kind::export_q, 0, t});
  next += t_;
  total_ = next;
}

int VariableLayout::slot(const std::vector<int>& base, int node, int t, const char* what) const {
  if (node < 0 || node >= nodes_ || t < 0 || t >= t_ || base[static_cast<std::size_t>(node)] < 0)
    throw std::out_of_range(std::string("layout: no ") + what + " column for node " + std::to_string(node));
  return base[static_cast<std::size_t>(node)] + t;
}

int VariableLayout::voltage(int node, int t) const { return slot(u_base_, node, t, "voltage"); }
int VariableLayout::flow_p(int node, int t) const { return slot(fp_base_, node, t, "active flow"); }
int VariableLayout::flow_q(int node, int t) const { return slot(fq_base_, node, t, "reactive flow"); }
int VariableLayout::generation(int node, int t) const { return slot(g_base_, node, t, "generation"); }
int VariableLayout::reserve(int node, int t) const { return slot(a_base_, node, t, "reserve"); }
int VariableLayout::storage(int node, int t) const { return slot(b_base_, node, t, "storage"); }

int VariableLayout::import_p(int t) const { return lp_ + t; }
int VariableLayout::export_p(int t) const { return sp_ + t; }
int VariableLayout::import_q(int t) const { return lq_ + t; }
int VariableLayout::export_q(int t) const { return sq_ + t; }

bool VariableLayout::is_flexible(int node) const {
  return node >= 0 && node < nodes_ && g_base_[static_cast<std::size_t>(node)] >= 0;
}
bool VariableLayout::has_storage(int node) const {
  return node >= 0 && node < nodes_ && b_base_[static_cast<std::size_t>(node)] >= 0;
}
const ColumnInfo& VariableLayout::info(int col) const {
  if (col < 0 || col >= total_) throw std::out_of_range("layout: column out of range");
  return info_[static_cast<std::size_t>(col)];
}

// --- UncertaintyModel ------------------------------------------------------

UncertaintyModel UncertaintyModel::from(const grid::ScenarioDay& sc) {
  UncertaintyModel un;
  const int tt = sc.market.timesteps;
  for (const auto& p : sc.participants)
    if (p.der) un.producers.push_back(p.node);
  un.sigma.resize(static_cast<Eigen::Index>(un.producers.size()), tt);
  for (std::size_t r = 0; r < un.producers.size(); ++r) {
    const auto& der = *sc.participants[static_cast<std::size_t>(un.producers[r])].der;
    for (int t = 0; t < tt; ++t) un.sigma(static_cast<Eigen::Index>(r), t) = der.sigma[static_cast<std::size_t>(t)];
  }
  un.sigma_delta.resize(tt);
  for (int t = 0; t < tt; ++t) {
    double s2 = 0.0;
    for (Eigen::Index r = 0; r < un.sigma.rows(); ++r) s2 += un.sigma(r, t) * un.sigma(r, t);
    un.sigma_delta[t] = std::sqrt(s2);
  }
  un.z_voltage = stats::normal_quantile(1.0 - sc.market.eps_voltage);
  un.z_flow = stats::normal_quantile(1.0 - sc.market.eps_flow);
  un.z_generation = stats::normal_quantile(1.0 - sc.market.eps_generation);
  un.z_battery = stats::normal_quantile(1.0 - sc.market.eps_battery);
  return un;
}

// --- central build ---------------------------------------------------------

CentralModel build_central(const grid::ScenarioDay& sc, Variant variant) {
  grid::validate(sc);
  CentralModel model;
  model.layout = VariableLayout(sc);
  model.uncertainty = UncertaintyModel::from(sc);
  model.variant = variant;
  model.balance_row.assign(static_cast<std::size_t>(sc.graph.node_count),
                           std::vector<int>(static_cast<std::size_t>(sc.market.timesteps), -1));
  model.adequacy_row.assign(static_cast<std::size_t>(sc.market.timesteps), -1);
  model.problem.resize(model.layout.size());

  struct RecordingSink final : Sink {
    CentralModel& m;
    explicit RecordingSink(CentralModel& mm) : m(mm) {}
    void equality(int owner, Row row, RowRole role, int t) override {
      const int idx = static_cast<int>(m.problem.equalities.size());
      if (role == RowRole::balance) m.balance_row[static_cast<std::size_t>(owner)][static_cast<std::size_t>(t)] = idx;
      if (role == RowRole::adequacy) m.adequacy_row[static_cast<std::size_t>(t)] = idx;
      m.problem.equalities.push_back(std::move(row));
    }
    void inequality(int, Row row) override { m.problem.inequalities.push_back(std::move(row)); }
    void cone(int, Cone c) override { m.problem.cones.push_back(std::move(c)); }
  } sink{model};

  emit_constraints(sc, model.layout, model.uncertainty, variant, sink);

  Eigen::VectorXd hess, lin;
  objective_terms(sc, model.layout, model.uncertainty, hess, lin);
  for (int i = 0; i < model.layout.size(); ++i) {
    model.problem.hess_diag[static_cast<std::size_t>(i)] = hess[i];
    model.problem.lin[static_cast<std::size_t>(i)] = lin[i];
  }
  return model;
}

// --- local split -----------------------------------------------------------

LocalDecomposition build_locals(const grid::ScenarioDay& sc, Variant variant) {
  grid::validate(sc);
  LocalDecomposition dec;
  dec.layout = VariableLayout(sc);
  dec.uncertainty = UncertaintyModel::from(sc);
  dec.variant = variant;
  const int nn = sc.graph.node_count;
  const int tt = dec.layout.timesteps();
  dec.subs.resize(static_cast<std::size_t>(nn));
  for (int n = 0; n < nn; ++n) {
    dec.subs[static_cast<std::size_t>(n)].owner = n;
    dec.subs[static_cast<std::size_t>(n)].balance_row.assign(static_cast<std::size_t>(tt), -1);
  }
  dec.subs[0].adequacy_row.assign(static_cast<std::size_t>(tt), -1);

  struct PerNode {
    std::vector<int> local_of_central;  // -1 until referenced
    std::vector<int> central_of_local;
    std::vector<double> hess, lin;
  };
  std::vector<PerNode> scratch(static_cast<std::size_t>(nn));
  for (auto& s : scratch) s.local_of_central.assign(static_cast<std::size_t>(dec.layout.size()), -1);
  std::vector<int> holders(static_cast<std::size_t>(dec.layout.size()), 0);

  struct SplitSink final : Sink {
    LocalDecomposition& dec;
    std::vector<PerNode>& scratch;
    std::vector<int>& holders;
    SplitSink(LocalDecomposition& d, std::vector<PerNode>& s, std::vector<int>& h)
        : dec(d), scratch(s), holders(h) {}

    int localize(int owner, int central) {
      PerNode& pn = scratch[static_cast<std::size_t>(owner)];
      int& slot = pn.local_of_central[static_cast<std::size_t>(central)];
      if (slot < 0) {
        slot = static_cast<int>(pn.central_of_local.size());
        pn.central_of_local.push_back(central);
        pn.hess.push_back(0.0);
        pn.lin.push_back(0.0);
        ++holders[static_cast<std::size_t>(central)];
      }
      return slot;
    }
    Terms translate(int owner, const Terms& terms) {
      Terms out;
      out.reserve(terms.size());
      for (const auto& [col, coef] : terms) out.emplace_back(localize(owner, col), coef);
      return out;
    }
    void equality(int owner, Row row, RowRole role, int t) override {
      auto& sub = dec.subs[static_cast<std::size_t>(owner)];
      const int idx = static_cast<int>(sub.problem.equalities.size());
      if (role == RowRole::balance) sub.balance_row[static_cast<std::size_t>(t)] = idx;
      if (role == RowRole::adequacy) sub.adequacy_row[static_cast<std::size_t>(t)] = idx;
      row.terms = translate(owner, row.terms);
      sub.problem.equalities.push_back(std::move(row));
    }
    void inequality(int owner, Row row) override {
      row.terms = translate(owner, row.terms);
      dec.subs[static_cast<std::size_t>(owner)].problem.inequalities.push_back(std::move(row));
    }
    void cone(int owner, Cone c) override {
      c.bound_terms = translate(owner, c.bound_terms);
      for (auto& row : c.row_terms) row = translate(owner, row);
      dec.subs[static_cast<std::size_t>(owner)].problem.cones.push_back(std::move(c));
    }
  } sink{dec, scratch, holders};

  emit_constraints(sc, dec.layout, dec.uncertainty, variant, sink);

  Eigen::VectorXd hess, lin;
  objective_terms(sc, dec.layout, dec.uncertainty, hess, lin);
  for (int col = 0; col < dec.layout.size(); ++col) {
    if (hess[col] == 0.0 && lin[col] == 0.0) continue;
    const int owner = owner_of(dec.layout, col);
    const int local = sink.localize(owner, col);  // objective owners always reference their columns
    scratch[static_cast<std::size_t>(owner)].hess[static_cast<std::size_t>(local)] += hess[col];
    scratch[static_cast<std::size_t>(owner)].lin[static_cast<std::size_t>(local)] += lin[col];
  }

  // Columns referenced by more than one node become consensus groups.
  std::vector<int> group_of(static_cast<std::size_t>(dec.layout.size()), -1);
  for (int col = 0; col < dec.layout.size(); ++col) {
    if (holders[static_cast<std::size_t>(col)] >= 2) {
      group_of[static_cast<std::size_t>(col)] = static_cast<int>(dec.group_column.size());
      dec.group_column.push_back(col);
    }
  }

  for (int n = 0; n < nn; ++n) {
    auto& sub = dec.subs[static_cast<std::size_t>(n)];
    PerNode& pn = scratch[static_cast<std::size_t>(n)];
    const int cols = static_cast<int>(pn.central_of_local.size());
    sub.problem.n = cols;
    sub.problem.hess_diag = std::move(pn.hess);
    sub.problem.lin = std::move(pn.lin);
    for (int local = 0; local < cols; ++local) {
      const int central = pn.central_of_local[static_cast<std::size_t>(local)];
      const int grp = group_of[static_cast<std::size_t>(central)];
      if (grp >= 0) sub.coupling.emplace_back(local, grp);
      if (owner_of(dec.layout, central) == n) sub.owned.emplace_back(local, central);
    }
  }
  return dec;
}

// --- solve & evaluation ----------------------------------------------------

CentralOutcome solve_central(const grid::ScenarioDay& sc, Variant variant, double tol, int max_iter) {
  const CentralModel model = build_central(sc, variant);
  const conic::SolverResult res = conic::solve(model.problem, tol, max_iter);
  CentralOutcome out;
  out.status = res.status;
  out.iterations = res.iterations;
  out.solution.x = res.x;
  out.solution.objective = res.objective;
  const int nn = sc.graph.node_count;
  const int tt = model.layout.timesteps();
  out.prices.lambda = Eigen::MatrixXd::Zero(nn, tt);
  out.prices.pi = Eigen::VectorXd::Zero(tt);
  if (res.status == conic::SolveStatus::optimal) {
    for (int n = 0; n < nn; ++n)
      for (int t = 0; t < tt; ++t)
        out.prices.lambda(n, t) =
            -res.eq_dual[model.balance_row[static_cast<std::size_t>(n)][static_cast<std::size_t>(t)]];
    for (int t = 0; t < tt; ++t)
      out.prices.pi[t] = -res.eq_dual[model.adequacy_row[static_cast<std::size_t>(t)]];
  }
  return out;
}

double evaluate_objective(const conic::ConicProblem& p, const Eigen::VectorXd& x) {
  double f = p.constant;
  for (int i = 0; i < p.n; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    f += p.hess_diag[iu] * x[i] * x[i] + p.lin[iu] * x[i];
  }
  return f;
}

double max_violation(const conic::ConicProblem& p, const Eigen::VectorXd& x) {
  auto value = [&](const Terms& terms) {
    double s = 0.0;
    for (const auto& [col, coef] : terms) s += coef * x[col];
    return s;
  };
  double worst = 0.0;
  for (const auto& row : p.equalities) worst = std::max(worst, std::abs(value(row.terms) - row.rhs));
  for (const auto& row : p.inequalities) worst = std::max(worst, value(row.terms) - row.rhs);
  for (const auto& c : p.cones) {
    double nrm = 0.0;
    for (std::size_t k = 0; k < c.row_terms.size(); ++k) {
      const double r = value(c.row_terms[k]) + c.row_const[k];
      nrm += r * r;
    }
    worst = std::max(worst, std::sqrt(nrm) - (value(c.bound_terms) + c.bound_const));
  }
  return worst;
}

ViolationReport chance_violations(const grid::ScenarioDay& sc, const Eigen::VectorXd& x, int draws,
                                  std::uint64_t seed) {
  const VariableLayout lay(sc);
  const UncertaintyModel un = UncertaintyModel::from(sc);
  const grid::NetworkGraph& g = sc.graph;
  const int nn = g.node_count;
  const int tt = lay.timesteps();
  const int np = static_cast<int>(un.producers.size());
  const auto dodeca = grid::dodecagon_coefficients();

  std::vector<std::vector<char>> below(static_cast<std::size_t>(nn),
                                       std::vector<char>(static_cast<std::size_t>(nn), 0));
  for (int n = 1; n < nn; ++n)
    for (int j : grid::downstream_set(g, n)) below[static_cast<std::size_t>(n)][static_cast<std::size_t>(j)] = 1;

  // violation counters
  Eigen::MatrixXi gen_cnt = Eigen::MatrixXi::Zero(nn, tt);
  Eigen::MatrixXi bat_cnt = Eigen::MatrixXi::Zero(nn, tt);
  Eigen::MatrixXi volt_cnt = Eigen::MatrixXi::Zero(nn, tt);
  Eigen::MatrixXi line_cnt = Eigen::MatrixXi::Zero(nn, tt);

  std::mt19937_64 rng(seed);
  Eigen::MatrixXd omega(np, tt);
  Eigen::VectorXd delta(tt), dflow(nn);
  const double slack = 1e-9;

  for (int d = 0; d < draws; ++d) {
    for (int t = 0; t < tt; ++t) {
      double tot = 0.0;
      for (int r = 0; r < np; ++r) {
        omega(r, t) = un.sigma(r, t) * stats::standard_normal(rng);
        tot += omega(r, t);
      }
      delta[t] = tot;
    }
    for (int t = 0; t < tt; ++t) {
      for (int v : lay.flexible()) {
        const double gt = x[lay.generation(v, t)] - x[lay.reserve(v, t)] * delta[t];
        const auto& gen = *sc.participants[static_cast<std::size_t>(v)].generation;
        if (gt > gen.p_max + slack || gt < gen.p_min - slack) ++gen_cnt(v, t);
      }
      for (int n = 1; n < nn; ++n) {
        const auto nu = static_cast<std::size_t>(n);
        double dev = 0.0;
        for (int r = 0; r < np; ++r)
          if (below[nu][static_cast<std::size_t>(un.producers[static_cast<std::size_t>(r)])]) dev += omega(r, t);
        double recourse = 0.0;
        for (int j : lay.flexible())
          if (j >= 1 && below[nu][static_cast<std::size_t>(j)]) recourse += x[lay.reserve(j, t)];
        dflow[n] = dev - recourse * delta[t];
      }
      for (int n = 1; n < nn; ++n) {
        const auto nu = static_cast<std::size_t>(n);
        const double fp = x[lay.flow_p(n, t)] + dflow[n];
        const double fq = x[lay.flow_q(n, t)];
        const double cap = g.line_s_max[nu];
        bool bad = false;
        for (const auto& face : dodeca)
          if (face.a1 * fp + face.a2 * fq + face.a3 * cap > slack) bad = true;
        if (bad) ++line_cnt(n, t);
        double drop = 0.0;
        for (int m : grid::path_from_root(g, n)) drop += g.line_r[static_cast<std::size_t>(m)] * dflow[m];
        const double ut = x[lay.voltage(n, t)] - 2.0 * drop;
        if (ut > g.voltage_max[nu] + slack || ut < g.voltage_min[nu] - slack) ++volt_cnt(n, t);
      }
    }
    for (int m : lay.storages()) {
      const auto& bat = *sc.participants[static_cast<std::size_t>(m)].battery;
      double acc = 0.0;
      for (int t = 0; t < tt; ++t) {
        acc += x[lay.reserve(m, t)] * delta[t];
        const double bt = x[lay.storage(m, t)] + acc;
        if (bt > bat.b_max + slack || bt < bat.b_min - slack) ++bat_cnt(m, t);
      }
    }
  }

  ViolationReport rep;
  const double inv = 1.0 / static_cast<double>(draws);
  for (int t = 0; t < tt; ++t) {
    for (int v : lay.flexible()) rep.generation = std::max(rep.generation, gen_cnt(v, t) * inv);
    for (int m : lay.storages()) rep.storage = std::max(rep.storage, bat_cnt(m, t) * inv);
    for (int n = 1; n < nn; ++n) {
      rep.voltage = std::max(rep.voltage, volt_cnt(n, t) * inv);
      rep.line = std::max(rep.line, line_cnt(n, t) * inv);
    }
  }
  return rep;
}

}  // namespace lem::market
