#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "pepa/errors.hpp"
#include "pepa/linprog.hpp"
#include "pepa/market.hpp"
#include "pepa/risk.hpp"
#include "pepa/solvers.hpp"

// Demand functions and the partial-equilibrium price-allocation (PEPA):
// the price at which the agents' demands for the bundle sum to zero. The
// solver minimizes the aggregate capital requirement over feasible
// allocations; the price is read off the agents' optimizer measures.

namespace pepa {

struct Bundle {
  Eigen::MatrixXd payoffs;  // n x |Omega|, one claim per row

  int count() const { return static_cast<int>(payoffs.rows()); }
  Claim combine(const Eigen::VectorXd& a) const {
    return payoffs.transpose() * a;
  }
};

struct Allocation {
  Eigen::MatrixXd weights;  // I x n, row i = agent i's holdings

  double feasibility_gap() const {
    if (weights.size() == 0) return 0.0;
    return weights.colwise().sum().cwiseAbs().maxCoeff();
  }
};

struct DemandResult {
  Eigen::VectorXd holdings;
  Eigen::VectorXd optimizer_measure;
  double foc_residual = 0.0;  // || E^q[B] - p ||_inf
  int iterations = 0;
};

struct DemandOptions {
  double grad_tol = 1e-8;
  int max_iterations = 600;
  double divergence_bound = 1e6;
  double slope_floor = 1e-7;
  RiskSolveOptions risk;
};

// Unique minimizer of a -> rho(a.B) + a.p. Throws PriceOutsideRange when
// the price sits outside the interval of marginal prices the agent can
// quote (detected by the support bounds and by diverging iterates).
inline DemandResult demand(const RiskModel& model, const FiniteMarket& market,
                           const Bundle& bundle, const Eigen::VectorXd& price,
                           const DemandOptions& options = {}) {
  const int n = bundle.count();
  if (price.size() != n)
    throw ValidationError("price", "dimension mismatch with bundle");
  const MartingalePolytope polytope{model.view};
  for (int k = 0; k < n; ++k) {
    const SupportBounds bounds =
        support_bounds(market, polytope, bundle.payoffs.row(k));
    const double scale = std::max(1.0, std::abs(bounds.upper));
    if (price(k) <= bounds.lower + 1e-12 * scale ||
        price(k) >= bounds.upper - 1e-12 * scale)
      throw PriceOutsideRange(
          "price component " + std::to_string(k + 1) +
          " is outside the open support interval (" +
          std::to_string(bounds.lower) + ", " + std::to_string(bounds.upper) +
          ")");
  }

  RiskEvaluator evaluator(model, market, options.risk);
  Eigen::VectorXd last_measure;
  auto objective = [&](const Eigen::VectorXd& a, Eigen::VectorXd& grad) {
    const RiskEvaluation eval = evaluator.evaluate(bundle.combine(a));
    last_measure = eval.optimizer_measure;
    grad = -(bundle.payoffs * eval.optimizer_measure) + price;
    return eval.value + a.dot(price);
  };

  SmoothSolveOptions solve;
  solve.grad_tol = options.grad_tol;
  solve.max_iterations = options.max_iterations;
  solve.divergence_bound = options.divergence_bound;
  solve.slope_floor = options.slope_floor;
  const SmoothSolveResult res =
      bfgs_minimize(objective, Eigen::VectorXd::Zero(n), solve);
  if (res.diverged)
    throw PriceOutsideRange(
        "demand iterates diverged; the price is outside the attainable "
        "marginal-price range");
  if (!res.converged)
    throw NonConvergence("demand solver stalled at gradient norm " +
                         std::to_string(res.grad_norm));

  DemandResult out;
  out.holdings = res.x;
  out.optimizer_measure = last_measure;
  out.foc_residual =
      ((bundle.payoffs * last_measure) - price).cwiseAbs().maxCoeff();
  out.iterations = res.iterations;
  return out;
}

// (Z(p1) - Z(p2)) . (p1 - p2); strictly negative for distinct prices.
inline double demand_monotonicity_check(const RiskModel& model,
                                        const FiniteMarket& market,
                                        const Bundle& bundle,
                                        const Eigen::VectorXd& p1,
                                        const Eigen::VectorXd& p2,
                                        const DemandOptions& options = {}) {
  const DemandResult z1 = demand(model, market, bundle, p1, options);
  const DemandResult z2 = demand(model, market, bundle, p2, options);
  return (z1.holdings - z2.holdings).dot(p1 - p2);
}

struct ParetoCheck {
  bool pareto = false;
  Eigen::VectorXd common_measure;  // set when pareto
  double max_gap = 0.0;            // largest pairwise L1 distance
  std::vector<Eigen::VectorXd> measures;
};

// The agents are in a Pareto-optimal configuration exactly when their
// optimizer measures at the zero claim coincide.
inline ParetoCheck pareto_check(const std::vector<RiskModel>& models,
                                const FiniteMarket& market,
                                RiskSolveOptions options = {}) {
  ParetoCheck out;
  const Claim zero = Eigen::VectorXd::Zero(market.num_states());
  for (const RiskModel& model : models)
    out.measures.push_back(
        capital_requirement(model, market, zero, options).optimizer_measure);
  for (size_t i = 0; i < out.measures.size(); ++i)
    for (size_t j = i + 1; j < out.measures.size(); ++j)
      out.max_gap = std::max(
          out.max_gap, (out.measures[i] - out.measures[j]).cwiseAbs().sum());
  out.pareto = out.max_gap <= 1e-7;
  if (out.pareto && !out.measures.empty()) {
    Eigen::VectorXd avg = Eigen::VectorXd::Zero(market.num_states());
    for (const auto& q : out.measures) avg += q;
    out.common_measure = avg / static_cast<double>(out.measures.size());
  }
  return out;
}

struct AgreeabilityResult {
  bool agreeable = false;
  Eigen::VectorXd price;           // witness when agreeable
  Eigen::VectorXd farkas_weights;  // refusal certificate otherwise
  double optimum = 0.0;            // min over p of max_i (a_i.p + rho_i)
  Eigen::VectorXd risk_values;     // rho_i(a_i.B)
};

// Decides whether a price exists making the allocation acceptable to every
// agent, via the minimax LP  min_p max_i (a_i.p + rho_i(a_i.B)). When the
// optimum is positive the LP dual provides nonnegative weights lambda with
// sum(lambda_i a_i) = 0 and sum(lambda_i rho_i) > 0: no price can work.
inline AgreeabilityResult check_agreeability(
    const std::vector<RiskModel>& models, const FiniteMarket& market,
    const Bundle& bundle, const Allocation& allocation,
    RiskSolveOptions options = {}) {
  const int I = static_cast<int>(models.size());
  const int n = bundle.count();
  if (allocation.weights.rows() != I || allocation.weights.cols() != n)
    throw ValidationError("allocation", "dimension mismatch");
  if (allocation.feasibility_gap() > 1e-9)
    throw ValidationError("allocation", "column sums must vanish");

  AgreeabilityResult out;
  out.risk_values.resize(I);
  for (int i = 0; i < I; ++i)
    out.risk_values(i) =
        capital_requirement(models[i], market,
                            bundle.combine(allocation.weights.row(i)), options)
            .value;

  // Variables [p+, p-, z+, z-, slack]; rows a_i.p - z + s_i = -rho_i.
  Eigen::MatrixXd A(I, 2 * n + 2 + I);
  A.setZero();
  A.block(0, 0, I, n) = allocation.weights;
  A.block(0, n, I, n) = -allocation.weights;
  A.col(2 * n).setConstant(-1.0);
  A.col(2 * n + 1).setConstant(1.0);
  A.block(0, 2 * n + 2, I, I) = Eigen::MatrixXd::Identity(I, I);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(2 * n + 2 + I);
  c(2 * n) = 1.0;
  c(2 * n + 1) = -1.0;
  const LpResult lp = solve_lp(A, c, Eigen::VectorXd(-out.risk_values));
  if (lp.status != LpStatus::Optimal)
    throw NonConvergence("agreeability LP failed");

  out.optimum = lp.objective;
  out.agreeable = out.optimum <= 1e-9;
  if (out.agreeable) {
    out.price = lp.x.head(n) - lp.x.segment(n, n);
  } else {
    out.farkas_weights = (-lp.dual).cwiseMax(0.0);
  }
  return out;
}

struct PepaResult {
  Eigen::VectorXd price;
  Allocation allocation;
  std::vector<Eigen::VectorXd> optimizer_measures;
  double clearing_residual = 0.0;  // || sum_i Z_i(p) ||_inf
  double foc_residual = 0.0;       // max_i || E^{q_i}[B] - p ||_inf
  int iterations = 0;
};

struct PepaOptions {
  double grad_tol = 1e-9;
  int max_iterations = 800;
  double foc_tol = 1e-6;
  double clearing_tol = 1e-6;
  double divergence_bound = 1e6;
  bool check_assumptions = true;
  Eigen::MatrixXd initial;  // (I-1) x n starting allocation, zero if empty
  RiskSolveOptions risk;
};

namespace detail {

inline void preflight_pepa(const std::vector<RiskModel>& models,
                           const FiniteMarket& market, const Bundle& bundle,
                           const PepaOptions& options) {
  const MarketView joint = union_view(models);
  if (joint.size() != market.num_assets())
    throw AssumptionViolated(
        "market access violated: every asset must be accessible to at least "
        "one agent");
  if (!polytope_nonempty(market, joint))
    throw AssumptionViolated(
        "nonempty-intersection assumption violated: the agents' polytopes "
        "do not intersect");

  const MartingalePolytope polytope{joint};
  const NonRedundancyReport redundancy =
      check_non_redundancy(market, bundle.payoffs, polytope);
  if (!redundancy.non_redundant) {
    std::string witness = "[";
    for (int k = 0; k < redundancy.witness.size(); ++k) {
      if (k) witness += ", ";
      witness += std::to_string(redundancy.witness(k));
    }
    witness += "]";
    throw AssumptionViolated(
        "non-redundancy assumption violated: delta = " + witness +
        " has a flat price over the joint polytope");
  }

  // Coercivity of the aggregate objective: every coordinate direction must
  // have a strictly positive price spread over the joint polytope.
  for (int k = 0; k < bundle.count(); ++k) {
    const SupportBounds bounds =
        support_bounds(market, polytope, bundle.payoffs.row(k));
    if (bounds.upper - bounds.lower <= 1e-9)
      throw AssumptionViolated("coercivity violated for bundle claim " +
                               std::to_string(k + 1));
  }

  for (const RiskModel& model : models) {
    const ConvexityProbeReport probe =
        strict_convexity_probe(model, market, bundle.payoffs, 16, 20240901,
                               options.risk);
    if (!probe.passed())
      throw AssumptionViolated("strict-convexity probe failed for agent " +
                               model.name);
  }
}

}  // namespace detail

// Minimizes f(a) = sum_{i<I} rho_i(a_i.B) + rho_I((-sum a_i).B) over the
// free allocation rows and recovers the equilibrium price from the
// agents' marginal prices, which coincide at the optimum.
inline PepaResult solve_pepa(const std::vector<RiskModel>& models,
                             const FiniteMarket& market, const Bundle& bundle,
                             const PepaOptions& options = {}) {
  const int I = static_cast<int>(models.size());
  const int n = bundle.count();
  if (I < 2)
    throw ValidationError("agents", "equilibrium requires at least two agents");
  if (options.check_assumptions)
    detail::preflight_pepa(models, market, bundle, options);

  std::vector<RiskEvaluator> evaluators;
  evaluators.reserve(I);
  for (const RiskModel& m : models)
    evaluators.emplace_back(m, market, options.risk);

  std::vector<Eigen::VectorXd> measures(I);
  auto aggregate = [&](const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
    grad.resize((I - 1) * n);
    Eigen::VectorXd last = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < I - 1; ++i) last -= x.segment(i * n, n);
    const RiskEvaluation eval_last =
        evaluators[I - 1].evaluate(bundle.combine(last));
    measures[I - 1] = eval_last.optimizer_measure;
    const Eigen::VectorXd price_last = bundle.payoffs * eval_last.optimizer_measure;
    double total = eval_last.value;
    for (int i = 0; i < I - 1; ++i) {
      const RiskEvaluation eval =
          evaluators[i].evaluate(bundle.combine(x.segment(i * n, n)));
      measures[i] = eval.optimizer_measure;
      total += eval.value;
      grad.segment(i * n, n) =
          price_last - bundle.payoffs * eval.optimizer_measure;
    }
    return total;
  };

  Eigen::VectorXd x0 = Eigen::VectorXd::Zero((I - 1) * n);
  if (options.initial.size() != 0) {
    if (options.initial.rows() != I - 1 || options.initial.cols() != n)
      throw ValidationError("initial", "expected (I-1) x n allocation");
    for (int i = 0; i < I - 1; ++i)
      x0.segment(i * n, n) = options.initial.row(i);
  }

  SmoothSolveOptions solve;
  solve.grad_tol = options.grad_tol;
  solve.max_iterations = options.max_iterations;
  solve.divergence_bound = options.divergence_bound;
  const SmoothSolveResult res = bfgs_minimize(aggregate, x0, solve);
  if (res.diverged)
    throw NonConvergence(
        "aggregate objective has no interior minimizer; assumptions likely "
        "violated");
  if (!res.converged)
    throw NonConvergence("equilibrium solver stalled at gradient norm " +
                         std::to_string(res.grad_norm));

  PepaResult result;
  result.iterations = res.iterations;
  result.allocation.weights.resize(I, n);
  Eigen::VectorXd last = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < I - 1; ++i) {
    result.allocation.weights.row(i) = res.x.segment(i * n, n);
    last -= res.x.segment(i * n, n);
  }
  result.allocation.weights.row(I - 1) = last;

  // Refresh measures at the optimum and average the marginal prices.
  Eigen::VectorXd price = Eigen::VectorXd::Zero(n);
  result.optimizer_measures.resize(I);
  for (int i = 0; i < I; ++i) {
    const RiskEvaluation eval = evaluators[i].evaluate(
        bundle.combine(result.allocation.weights.row(i)));
    result.optimizer_measures[i] = eval.optimizer_measure;
    price += bundle.payoffs * eval.optimizer_measure;
  }
  price /= static_cast<double>(I);
  result.price = price;
  for (int i = 0; i < I; ++i) {
    const double gap = ((bundle.payoffs * result.optimizer_measures[i]) - price)
                           .cwiseAbs()
                           .maxCoeff();
    result.foc_residual = std::max(result.foc_residual, gap);
  }

  // Clearing is certified by independent demand solves at the price found.
  DemandOptions demand_options;
  demand_options.grad_tol = std::min(1e-9, options.grad_tol);
  demand_options.divergence_bound = options.divergence_bound;
  demand_options.risk = options.risk;
  Eigen::VectorXd total_demand = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < I; ++i)
    total_demand +=
        demand(models[i], market, bundle, price, demand_options).holdings;
  result.clearing_residual = total_demand.cwiseAbs().maxCoeff();

  if (result.foc_residual > options.foc_tol)
    throw NonConvergence("marginal prices disagree beyond tolerance: " +
                         std::to_string(result.foc_residual));
  if (result.clearing_residual > options.clearing_tol)
    throw NonConvergence("market does not clear at the solved price: " +
                         std::to_string(result.clearing_residual));
  return result;
}

}  // namespace pepa
