#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "lem/conic.hpp"

using lem::conic::ConicProblem;
using lem::conic::SolveStatus;
using lem::conic::SolverResult;
using lem::conic::Terms;

namespace {

ConicProblem parabola_above_one() {
  // minimize x^2 subject to x >= 1
  ConicProblem p;
  p.resize(1);
  p.hess_diag[0] = 1.0;
  p.add_inequality(Terms{{0, -1.0}}, -1.0, "floor");
  return p;
}

ConicProblem line_over_disk() {
  // minimize x subject to ||(x, 0.6)|| <= 1
  ConicProblem p;
  p.resize(1);
  p.lin[0] = 1.0;
  ConicProblem::Cone c;
  c.bound_terms = {};
  c.bound_const = 1.0;
  c.row_terms = {Terms{{0, 1.0}}, Terms{}};
  c.row_const = {0.0, 0.6};
  c.tag = "disk";
  p.add_cone(std::move(c));
  return p;
}

ConicProblem pinned_parabola() {
  // minimize (x - 3)^2 subject to x = 1
  ConicProblem p;
  p.resize(1);
  p.hess_diag[0] = 1.0;
  p.lin[0] = -6.0;
  p.constant = 9.0;
  p.add_equality(Terms{{0, 1.0}}, 1.0, "pin");
  return p;
}

ConicProblem random_box_qp(unsigned seed, int n) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> curv(0.5, 2.0);
  std::uniform_real_distribution<double> slope(-1.0, 1.0);
  ConicProblem p;
  p.resize(n);
  Terms sum;
  for (int i = 0; i < n; ++i) {
    p.hess_diag[static_cast<std::size_t>(i)] = curv(rng);
    p.lin[static_cast<std::size_t>(i)] = slope(rng);
    p.add_inequality(Terms{{i, 1.0}}, 1.0, "ub");
    p.add_inequality(Terms{{i, -1.0}}, 1.0, "lb");
    sum.emplace_back(i, 1.0);
  }
  p.add_equality(sum, 0.0, "ties");
  return p;
}

double kkt_stationarity(const ConicProblem& p, const SolverResult& r) {
  std::vector<double> grad(static_cast<std::size_t>(p.n));
  for (int i = 0; i < p.n; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    grad[iu] = 2.0 * p.hess_diag[iu] * r.x[i] + p.lin[iu];
  }
  for (std::size_t k = 0; k < p.equalities.size(); ++k)
    for (const auto& [col, coef] : p.equalities[k].terms)
      grad[static_cast<std::size_t>(col)] += r.eq_dual[static_cast<Eigen::Index>(k)] * coef;
  for (std::size_t k = 0; k < p.inequalities.size(); ++k)
    for (const auto& [col, coef] : p.inequalities[k].terms)
      grad[static_cast<std::size_t>(col)] += r.ineq_dual[static_cast<Eigen::Index>(k)] * coef;
  double worst = 0.0;
  for (double g : grad) worst = std::max(worst, std::abs(g));
  return worst;
}

double complementarity_gap(const ConicProblem& p, const SolverResult& r) {
  double gap = 0.0;
  for (std::size_t k = 0; k < p.inequalities.size(); ++k) {
    double ax = 0.0;
    for (const auto& [col, coef] : p.inequalities[k].terms) ax += coef * r.x[col];
    gap += r.ineq_dual[static_cast<Eigen::Index>(k)] * (p.inequalities[k].rhs - ax);
  }
  for (std::size_t k = 0; k < p.cones.size(); ++k) {
    const auto& c = p.cones[k];
    double t = c.bound_const;
    for (const auto& [col, coef] : c.bound_terms) t += coef * r.x[col];
    gap += r.cone_dual[k][0] * t;
    for (std::size_t row = 0; row < c.row_terms.size(); ++row) {
      double u = c.row_const[row];
      for (const auto& [col, coef] : c.row_terms[row]) u += coef * r.x[col];
      gap += r.cone_dual[k][static_cast<Eigen::Index>(row) + 1] * u;
    }
  }
  return gap;
}

}  // namespace

TEST_CASE("active lower bound carries its multiplier") {
  const auto r = lem::conic::solve(parabola_above_one());
  REQUIRE(r.status == SolveStatus::optimal);
  CHECK(std::abs(r.x[0] - 1.0) < 1e-6);
  CHECK(std::abs(r.ineq_dual[0] - 2.0) < 1e-6);
  CHECK(std::abs(r.objective - 1.0) < 1e-6);
  CHECK(r.tolerance_achieved <= 1e-7);
}

TEST_CASE("norm ball constraint binds at the sphere") {
  const auto r = lem::conic::solve(line_over_disk());
  REQUIRE(r.status == SolveStatus::optimal);
  CHECK(std::abs(r.x[0] + 0.8) < 1e-6);
  REQUIRE(r.cone_dual.size() == 1);
  const auto& lam = r.cone_dual[0];
  REQUIRE(lam.size() == 3);
  CHECK(std::abs(lam[1] - 1.0) < 1e-6);
  CHECK(std::abs(lam[0] - 1.25) < 1e-4);
  CHECK(lam[0] >= lam.tail(2).norm() - 1e-9);  // dual point stays in the cone
}

TEST_CASE("equality multiplier matches the objective slope at the pin") {
  const auto r = lem::conic::solve(pinned_parabola());
  REQUIRE(r.status == SolveStatus::optimal);
  CHECK(std::abs(r.x[0] - 1.0) < 1e-9);
  CHECK(std::abs(r.eq_dual[0] - 4.0) < 1e-7);
  CHECK(std::abs(r.objective - 4.0) < 1e-9);
}

TEST_CASE("multipliers price right-hand-side perturbations") {
  const double delta = 1e-4;

  SUBCASE("inequality") {
    auto p = parabola_above_one();
    const auto base = lem::conic::solve(p);
    p.inequalities[0].rhs += delta;
    const auto bumped = lem::conic::solve(p);
    const double predicted = -base.ineq_dual[0] * delta;
    const double actual = bumped.objective - base.objective;
    CHECK(std::abs(actual - predicted) <= 0.05 * std::abs(predicted));
  }

  SUBCASE("equality") {
    auto p = pinned_parabola();
    const auto base = lem::conic::solve(p);
    p.equalities[0].rhs += delta;
    const auto bumped = lem::conic::solve(p);
    const double predicted = -base.eq_dual[0] * delta;
    const double actual = bumped.objective - base.objective;
    CHECK(std::abs(actual - predicted) <= 0.05 * std::abs(predicted));
  }
}

TEST_CASE("complementarity gap closes to solver tolerance") {
  for (const auto& p : {parabola_above_one(), line_over_disk()}) {
    const auto r = lem::conic::solve(p, 1e-7);
    REQUIRE(r.status == SolveStatus::optimal);
    CHECK(std::abs(complementarity_gap(p, r)) <= 10.0 * 1e-7 * std::max(1.0, std::abs(r.objective)));
  }
}

TEST_CASE("box least squares clamps coordinatewise") {
  const std::vector<double> target = {-2.0, -0.4, 0.0, 0.7, 3.0};
  ConicProblem p;
  p.resize(5);
  for (int i = 0; i < 5; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    p.hess_diag[iu] = 1.0;
    p.lin[iu] = -2.0 * target[iu];
    p.constant += target[iu] * target[iu];
    p.add_inequality(Terms{{i, 1.0}}, 1.0, "ub");
    p.add_inequality(Terms{{i, -1.0}}, 1.0, "lb");
  }
  const auto r = lem::conic::solve(p);
  REQUIRE(r.status == SolveStatus::optimal);
  for (int i = 0; i < 5; ++i) {
    const double want = std::clamp(target[static_cast<std::size_t>(i)], -1.0, 1.0);
    CHECK(std::abs(r.x[i] - want) < 1e-6);
  }
}

TEST_CASE("general and cone-free paths agree on a dense box program") {
  const auto p = random_box_qp(42, 20);
  const auto a = lem::conic::solve(p);
  const auto b = lem::conic::solve_qp_fast(p);
  REQUIRE(a.status == SolveStatus::optimal);
  REQUIRE(b.status == SolveStatus::optimal);
  for (int i = 0; i < p.n; ++i) CHECK(std::abs(a.x[i] - b.x[i]) <= 1e-6);
  CHECK(kkt_stationarity(p, a) <= 1e-5);
  double sum = 0.0;
  for (int i = 0; i < p.n; ++i) sum += a.x[i];
  CHECK(std::abs(sum) <= 1e-6);
  for (int i = 0; i < p.n; ++i) CHECK(std::abs(a.x[i]) <= 1.0 + 1e-7);
  for (Eigen::Index k = 0; k < a.ineq_dual.size(); ++k) CHECK(a.ineq_dual[k] >= -1e-9);
}

TEST_CASE("repeated solves are bit identical") {
  const auto p = line_over_disk();
  const auto a = lem::conic::solve(p);
  const auto b = lem::conic::solve(p);
  CHECK(a.x[0] == b.x[0]);
  CHECK(a.objective == b.objective);
  CHECK(a.iterations == b.iterations);
  CHECK(a.cone_dual[0][0] == b.cone_dual[0][0]);
}

TEST_CASE("contradictory bounds produce a separating certificate") {
  ConicProblem p;
  p.resize(1);
  p.hess_diag[0] = 1.0;
  p.add_inequality(Terms{{0, -1.0}}, -1.0, "floor");  // x >= 1
  p.add_inequality(Terms{{0, 1.0}}, 0.0, "ceiling");  // x <= 0
  const auto r = lem::conic::solve(p);
  REQUIRE(r.status == SolveStatus::infeasible);
  REQUIRE(r.certificate.size() == 2);
  const double ht = -1.0 * r.certificate[0] + 0.0 * r.certificate[1];
  CHECK(std::abs(ht + 1.0) < 1e-9);  // normalized: h . cert = -1
  CHECK(std::abs(-r.certificate[0] + r.certificate[1]) <= 1e-4);  // G' cert ~ 0
  CHECK(r.certificate[0] >= 0.0);
  CHECK(r.certificate[1] >= 0.0);
}

TEST_CASE("cone-free path refuses cone blocks") {
  CHECK_THROWS_AS(lem::conic::solve_qp_fast(line_over_disk()), std::invalid_argument);
}

TEST_CASE("iteration budget is honoured") {
  const auto r = lem::conic::solve(random_box_qp(7, 20), 1e-7, 1);
  CHECK(r.status == SolveStatus::iteration_limit);
  CHECK(r.iterations <= 1);
}
