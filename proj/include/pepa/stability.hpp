#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "pepa/equilibrium.hpp"
#include "pepa/errors.hpp"
#include "pepa/market.hpp"
#include "pepa/risk.hpp"

// Perturbation families over agents' preference parameters and the sweep
// harness checking that converging preference specifications produce
// converging equilibria. Schedules are geometric: the perturbation weight
// at index m is 2^-m, so parameter gaps halve at every step.

namespace pepa {

enum class PerturbationKind { Gamma, Endowment, Probs, Wealth };

inline const char* to_string(PerturbationKind kind) {
  switch (kind) {
    case PerturbationKind::Gamma: return "gamma";
    case PerturbationKind::Endowment: return "endowment";
    case PerturbationKind::Probs: return "probs";
    case PerturbationKind::Wealth: return "wealth";
  }
  return "?";
}

struct PerturbationFamily {
  std::vector<RiskModel> base_models;
  FiniteMarket base_market;
  PerturbationKind kind = PerturbationKind::Gamma;
  int schedule_length = 20;     // indices m = 0..schedule_length
  Eigen::VectorXd probs_alt;    // mixing target for Probs; empty = uniform
};

struct PerturbedScenario {
  std::vector<RiskModel> models;
  FiniteMarket market;
};

inline double perturbation_weight(int m) { return std::ldexp(1.0, -m); }

inline PerturbedScenario perturb(const PerturbationFamily& family, int m) {
  if (m < 0) throw ValidationError("schedule", "negative index");
  const double w = perturbation_weight(m);
  PerturbedScenario scenario;
  scenario.models = family.base_models;
  scenario.market = family.base_market;
  switch (family.kind) {
    case PerturbationKind::Gamma:
      for (RiskModel& model : scenario.models) {
        if (model.kind == RiskKind::Entropic) model.gamma *= 1.0 + w;
        if (model.kind == RiskKind::UtilityBased &&
            model.utility.family == UtilityFamily::Exponential)
          model.utility.gamma *= 1.0 + w;
      }
      break;
    case PerturbationKind::Endowment:
      for (RiskModel& model : scenario.models)
        if (model.endowment.size()) model.endowment *= 1.0 - w;
      break;
    case PerturbationKind::Probs: {
      const int N = family.base_market.num_states();
      Eigen::VectorXd alt = family.probs_alt.size()
                                ? family.probs_alt
                                : Eigen::VectorXd::Constant(N, 1.0 / N);
      if (alt.size() != N)
        throw ValidationError("probs_alt", "dimension mismatch");
      if (alt.minCoeff() <= 0 || std::abs(alt.sum() - 1.0) > 1e-9)
        throw ValidationError("probs_alt",
                              "mixing target must be a positive measure");
      Eigen::VectorXd probs =
          (1.0 - w) * family.base_market.probs + w * alt;
      probs /= probs.sum();
      scenario.market = build_market(probs, family.base_market.increments,
                                     family.base_market.state_labels);
      break;
    }
    case PerturbationKind::Wealth:
      for (RiskModel& model : scenario.models)
        if (model.kind == RiskKind::UtilityBased)
          model.initial_wealth *= 1.0 + w;
      break;
  }
  return scenario;
}

// Largest |r_i^(m)(a) - r_i(a)| over the grid, per schedule index and per
// agent; r_i(a) = rho_i(a.B). Pointwise convergence of these restrictions
// is the property the stability argument consumes.
inline Eigen::MatrixXd pointwise_convergence_check(
    const PerturbationFamily& family, const Bundle& bundle,
    const std::vector<Eigen::VectorXd>& grid, RiskSolveOptions options = {}) {
  const int I = static_cast<int>(family.base_models.size());
  Eigen::MatrixXd gaps(family.schedule_length + 1, I);
  std::vector<std::vector<double>> limit(I);
  for (int i = 0; i < I; ++i) {
    RiskEvaluator evaluator(family.base_models[i], family.base_market,
                            options);
    for (const Eigen::VectorXd& a : grid)
      limit[i].push_back(evaluator.evaluate(bundle.combine(a)).value);
  }
  for (int m = 0; m <= family.schedule_length; ++m) {
    const PerturbedScenario scenario = perturb(family, m);
    for (int i = 0; i < I; ++i) {
      RiskEvaluator evaluator(scenario.models[i], scenario.market, options);
      double gap = 0.0;
      for (size_t k = 0; k < grid.size(); ++k) {
        const double r =
            evaluator.evaluate(bundle.combine(grid[k])).value;
        gap = std::max(gap, std::abs(r - limit[i][k]));
      }
      gaps(m, i) = gap;
    }
  }
  return gaps;
}

struct SweepRow {
  int m = 0;
  Eigen::VectorXd price;
  Eigen::MatrixXd allocation;
  double price_gap = 0.0;       // || p^(m) - p ||_inf
  double allocation_gap = 0.0;  // || a^(m) - a ||_inf
  double r_grid_gap = 0.0;      // pointwise risk gap over the default grid
};

struct SweepReport {
  std::vector<SweepRow> rows;
  PepaResult limit;
  double min_convexity_margin = 0.0;  // across all m and agents
};

// Solves the PEPA at every schedule index and at the limit, reporting the
// distance of each perturbed equilibrium from the limit equilibrium.
inline SweepReport run_stability_sweep(const PerturbationFamily& family,
                                       const Bundle& bundle,
                                       PepaOptions options = {}) {
  SweepReport report;
  report.limit = solve_pepa(family.base_models, family.base_market, bundle,
                            options);
  report.min_convexity_margin = std::numeric_limits<double>::infinity();

  // Allocation grid for the pointwise gap column: a box around the limit
  // holdings, of side 2 in every bundle coordinate.
  const int n = bundle.count();
  std::vector<Eigen::VectorXd> grid;
  const double radius =
      report.limit.allocation.weights.cwiseAbs().maxCoeff() + 1.0;
  const int points_per_axis = 5;
  std::vector<int> idx(n, 0);
  while (true) {
    Eigen::VectorXd a(n);
    for (int k = 0; k < n; ++k)
      a(k) = -radius + 2.0 * radius * idx[k] / (points_per_axis - 1);
    grid.push_back(a);
    int k = 0;
    while (k < n && ++idx[k] == points_per_axis) idx[k++] = 0;
    if (k == n) break;
  }

  const int I = static_cast<int>(family.base_models.size());
  std::vector<std::vector<double>> limit_r(I);
  for (int i = 0; i < I; ++i) {
    RiskEvaluator evaluator(family.base_models[i], family.base_market,
                            options.risk);
    for (const Eigen::VectorXd& a : grid)
      limit_r[i].push_back(evaluator.evaluate(bundle.combine(a)).value);
  }

  PepaOptions scenario_options = options;
  scenario_options.check_assumptions = false;  // done explicitly below
  for (int m = 0; m <= family.schedule_length; ++m) {
    const PerturbedScenario scenario = perturb(family, m);
    try {
      for (const RiskModel& model : scenario.models) {
        const ConvexityProbeReport probe = strict_convexity_probe(
            model, scenario.market, bundle.payoffs, 16, 20240901,
            options.risk);
        if (!probe.passed())
          throw AssumptionViolated("strict-convexity probe failed for agent " +
                                   model.name);
        report.min_convexity_margin =
            std::min(report.min_convexity_margin, probe.min_margin);
      }
      const MarketView joint = union_view(scenario.models);
      if (!polytope_nonempty(scenario.market, joint))
        throw AssumptionViolated("agents' polytopes do not intersect");
      if (!check_non_redundancy(scenario.market, bundle.payoffs,
                                MartingalePolytope{joint})
               .non_redundant)
        throw AssumptionViolated("bundle is redundant");

      SweepRow row;
      row.m = m;
      const PepaResult pepa =
          solve_pepa(scenario.models, scenario.market, bundle,
                     scenario_options);
      row.price = pepa.price;
      row.allocation = pepa.allocation.weights;
      row.price_gap = (pepa.price - report.limit.price).cwiseAbs().maxCoeff();
      row.allocation_gap =
          (pepa.allocation.weights - report.limit.allocation.weights)
              .cwiseAbs()
              .maxCoeff();
      for (int i = 0; i < I; ++i) {
        RiskEvaluator evaluator(scenario.models[i], scenario.market,
                                options.risk);
        for (size_t k = 0; k < grid.size(); ++k) {
          const double r =
              evaluator.evaluate(bundle.combine(grid[k])).value;
          row.r_grid_gap =
              std::max(row.r_grid_gap, std::abs(r - limit_r[i][k]));
        }
      }
      report.rows.push_back(row);
    } catch (const AssumptionViolated& err) {
      throw AssumptionViolated("at schedule index m=" + std::to_string(m) +
                               ": " + err.what());
    }
  }
  return report;
}

}  // namespace pepa
