#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>

#include "fixtures.hpp"
#include "pepa/stability.hpp"

using namespace pepa;

namespace {

std::vector<Eigen::VectorXd> allocation_grid(double lo, double hi, int count) {
  std::vector<Eigen::VectorXd> grid;
  for (int i = 0; i < count; ++i) {
    Eigen::VectorXd a(1);
    a << lo + (hi - lo) * i / (count - 1);
    grid.push_back(a);
  }
  return grid;
}

Eigen::VectorXd skewed_alt() {
  Eigen::VectorXd alt(4);
  alt << 0.2, 0.3, 0.2, 0.3;
  return alt;
}

}  // namespace

TEST_CASE("constant families have zero pointwise gap") {
  // Wealth perturbations do not touch entropic agents, so the family is
  // constant on fix_c.
  const auto s = fixtures::fix_c();
  PerturbationFamily family;
  family.base_models = s.agents;
  family.base_market = s.market;
  family.kind = PerturbationKind::Wealth;
  family.schedule_length = 6;
  const Eigen::MatrixXd gaps = pointwise_convergence_check(
      family, s.bundle, allocation_grid(-2.0, 2.0, 9));
  CHECK(gaps.cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("gamma perturbations converge pointwise") {
  const auto s = fixtures::fix_b();
  PerturbationFamily family;
  family.base_models = s.agents;
  family.base_market = s.market;
  family.kind = PerturbationKind::Gamma;
  family.schedule_length = 20;
  const Eigen::MatrixXd gaps = pointwise_convergence_check(
      family, s.bundle, allocation_grid(-2.0, 2.0, 9));
  CHECK(gaps.row(20).maxCoeff() <= 1e-5);
  for (int m = 5; m < 20; ++m)
    CHECK(gaps.row(m + 1).maxCoeff() <= gaps.row(m).maxCoeff() + 1e-12);
}

TEST_CASE("probability perturbations converge at the geometric rate") {
  const auto s = fixtures::fix_c();
  PerturbationFamily family;
  family.base_models = s.agents;
  family.base_market = s.market;
  family.kind = PerturbationKind::Probs;
  family.probs_alt = skewed_alt();
  family.schedule_length = 16;
  const Eigen::MatrixXd gaps = pointwise_convergence_check(
      family, s.bundle, allocation_grid(-2.0, 2.0, 9));
  // Fit the constant from the first index; the tail must stay below it.
  const double fitted = gaps.row(0).maxCoeff();
  REQUIRE(fitted > 0);
  for (int m = 1; m <= 16; ++m)
    CHECK(gaps.row(m).maxCoeff() <=
          2.0 * fitted * perturbation_weight(m) + 1e-10);
}

TEST_CASE("perturbed scenarios keep valid parameters") {
  const auto s = fixtures::fix_c();
  PerturbationFamily family;
  family.base_models = s.agents;
  family.base_market = s.market;
  family.kind = PerturbationKind::Probs;
  family.probs_alt = skewed_alt();
  family.schedule_length = 10;
  double previous = std::numeric_limits<double>::infinity();
  for (int m = 0; m <= 10; ++m) {
    const PerturbedScenario scenario = perturb(family, m);
    CHECK(scenario.market.probs.minCoeff() > 0);
    CHECK(scenario.market.probs.sum() == Catch::Approx(1.0).margin(1e-12));
    const double gap =
        (scenario.market.probs - s.market.probs).cwiseAbs().maxCoeff();
    CHECK(gap < previous);
    previous = gap;
  }
}

TEST_CASE("endowment sweep converges to the limit equilibrium") {
  const auto s = fixtures::fix_c();
  PerturbationFamily family;
  family.base_models = s.agents;
  family.base_market = s.market;
  family.kind = PerturbationKind::Endowment;
  family.schedule_length = 20;
  const SweepReport report = run_stability_sweep(family, s.bundle);
  REQUIRE(report.rows.size() == 21);
  CHECK(report.rows.back().price_gap <= 1e-4);
  CHECK(report.rows.back().allocation_gap <= 1e-4);
  for (size_t m = 5; m + 1 < report.rows.size(); ++m) {
    CHECK(report.rows[m + 1].price_gap <= report.rows[m].price_gap + 1e-8);
    CHECK(report.rows[m + 1].allocation_gap <=
          report.rows[m].allocation_gap + 1e-8);
  }
  CHECK(report.min_convexity_margin > 0);
  // Geometric extrapolation of the tail agrees with the limit solve.
  const double p20 = report.rows[20].price(0);
  const double p19 = report.rows[19].price(0);
  const double extrapolated = p20 + (p20 - p19);
  CHECK(std::abs(extrapolated - report.limit.price(0)) <= 1e-4);
  // Every row satisfies the equilibrium residual contracts (enforced by
  // solve_pepa); spot-check the first row's reported gap scale.
  CHECK(report.rows[0].price_gap > report.rows[20].price_gap);
}

TEST_CASE("probability sweep drives allocations to the limit") {
  const auto s = fixtures::fix_c();
  PerturbationFamily family;
  family.base_models = s.agents;
  family.base_market = s.market;
  family.kind = PerturbationKind::Probs;
  family.probs_alt = skewed_alt();
  family.schedule_length = 14;
  const SweepReport report = run_stability_sweep(family, s.bundle);
  CHECK(report.rows.back().price_gap <= 1e-4);
  CHECK(report.rows.back().allocation_gap <= 1e-4);
  CHECK(report.rows.back().r_grid_gap <= 1e-4);
}

TEST_CASE("assumption failures name the schedule index") {
  const auto s = fixtures::fix_b();
  PerturbationFamily family;
  family.base_models = s.agents;
  family.base_market = s.market;
  family.kind = PerturbationKind::Gamma;
  family.schedule_length = 4;
  Bundle redundant;
  redundant.payoffs.resize(1, 4);
  redundant.payoffs = s.market.increments.row(0);
  // The limit solve itself refuses the redundant bundle.
  CHECK_THROWS_AS(run_stability_sweep(family, redundant), AssumptionViolated);
}
