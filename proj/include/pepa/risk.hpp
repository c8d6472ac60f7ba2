#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pepa/errors.hpp"
#include "pepa/linprog.hpp"
#include "pepa/market.hpp"
#include "pepa/solvers.hpp"

// Convex capital requirements over a finite-state market.
//
// An agent's preferences are either entropic (exponential tilt with
// absolute risk aversion gamma) or induced by a utility function through
// the indifference construction u(x|B+m) >= u(x|0). Both induce a convex,
// monotone, cash-invariant capital requirement that is normalized to
// rho(0) = 0 and affine along claims replicable in the agent's sub-market.

namespace pepa {

enum class RiskKind { Entropic, UtilityBased };
enum class UtilityFamily { Exponential, Power };

struct UtilitySpec {
  UtilityFamily family = UtilityFamily::Exponential;
  double gamma = 1.0;        // Exponential
  double exponent = 0.5;     // Power, p < 1 and p != 0
  double lower_bound = 0.0;  // Power domain is (lower_bound, infinity)
};

struct RiskModel {
  std::string name;
  RiskKind kind = RiskKind::Entropic;
  double gamma = 1.0;  // Entropic risk aversion
  UtilitySpec utility;
  Claim endowment;  // empty means zero
  double initial_wealth = 0.0;  // UtilityBased only
  MarketView view;
};

struct RiskEvaluation {
  double value = 0.0;
  Eigen::VectorXd optimizer_measure;  // element of the subdifferential
  Eigen::VectorXd hedge;              // optimal positions per view asset
  int iterations = 0;
  double residual = 0.0;  // martingale violation of the optimizer measure
};

// Penalty alpha(q) of the robust representation. Finite only on the
// agent's martingale polytope; infinity is an explicit marker, never a
// float travelling through arithmetic.
struct PenaltyValue {
  Eigen::VectorXd measure;
  double alpha = 0.0;
  bool finite = false;

  double value() const {
    if (!finite) throw Error("penalty is infinite for this measure");
    return alpha;
  }
};

inline void validate_model(const RiskModel& model, const FiniteMarket& market) {
  validate_view(market, model.view);
  const int N = market.num_states();
  if (model.endowment.size() != 0 && model.endowment.size() != N)
    throw ValidationError(
        "endowment", "expected " + std::to_string(N) + " entries, got " +
                         std::to_string(model.endowment.size()));
  if (model.endowment.size() != 0 && !model.endowment.allFinite())
    throw ValidationError("endowment", "entries must be finite");
  if (model.kind == RiskKind::Entropic) {
    if (!(model.gamma > 0))
      throw ValidationError("gamma", "risk aversion must be positive");
    return;
  }
  switch (model.utility.family) {
    case UtilityFamily::Exponential:
      if (!(model.utility.gamma > 0))
        throw ValidationError("utility", "exponential gamma must be positive");
      break;
    case UtilityFamily::Power: {
      const double p = model.utility.exponent;
      if (!(p < 1.0) || p == 0.0)
        throw ValidationError("utility",
                              "power exponent must satisfy p < 1, p != 0");
      if (model.utility.lower_bound > 0.0)
        throw ValidationError("utility", "domain lower bound must be <= 0");
      for (int w = 0; w < N; ++w) {
        const double e = model.endowment.size() ? model.endowment(w) : 0.0;
        if (!(model.initial_wealth + e > 0.0))
          throw ValidationError(
              "initial_wealth",
              "wealth plus endowment must be positive in every state");
      }
      break;
    }
  }
}

namespace detail {

// Orthonormal basis of the non-degenerate hedging directions: columns span
// range(G) for the view increment matrix G, so the inner objective is
// strictly convex in the reduced coordinates.
struct ReducedHedgeSpace {
  Eigen::MatrixXd basis;  // |view| x r
  Eigen::MatrixXd map;    // N x r, claim-space image of each basis vector

  ReducedHedgeSpace(const FiniteMarket& market, const MarketView& view) {
    const Eigen::MatrixXd rows = market.view_rows(view);
    if (rows.rows() == 0) {
      basis.resize(0, 0);
      map.resize(market.num_states(), 0);
      return;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(rows, Eigen::ComputeFullU);
    const double smax = svd.singularValues()(0);
    int r = 0;
    for (int i = 0; i < svd.singularValues().size(); ++i)
      if (svd.singularValues()(i) > 1e-12 * std::max(1.0, smax)) ++r;
    basis = svd.matrixU().leftCols(r);
    map = rows.transpose() * basis;
  }

  int dim() const { return static_cast<int>(map.cols()); }
};

struct InnerSolve {
  double objective = 0.0;  // family-specific, see the evaluators
  Eigen::VectorXd z;
  Eigen::VectorXd measure;
  int iterations = 0;
  double residual = 0.0;
  bool converged = true;
};

}  // namespace detail

struct RiskSolveOptions {
  double inner_tol = 1e-11;      // martingale residual of the optimizer
  int inner_max_iterations = 200;
  double bisection_tol = 1e-12;  // UtilityBased capital requirement
};

// Entropic capital requirement
//   rho(B) = l(B) - l(0),
//   l(B) = (1/gamma) log min_theta E[exp(-gamma (E + B + theta.dS))],
// solved by damped Newton in the reduced hedge coordinates. The optimizer
// measure is the normalized exponential tilt at the optimal hedge.
class EntropicEvaluator {
 public:
  EntropicEvaluator(const RiskModel& model, const FiniteMarket& market,
                    RiskSolveOptions options = {})
      : market_(market),
        gamma_(model.kind == RiskKind::Entropic ? model.gamma
                                                : model.utility.gamma),
        view_(model.view),
        space_(market, model.view),
        options_(options) {
    endowment_ = model.endowment.size() ? model.endowment
                                        : Eigen::VectorXd::Zero(market.num_states());
    log_probs_ = market.probs.array().log();
    warm_ = Eigen::VectorXd::Zero(space_.dim());
  }

  // min_z psi(z) with psi = log sum_w exp(log p_w - gamma(E+B+map z)_w).
  detail::InnerSolve minimize_log_moment(const Claim& claim) {
    const Eigen::VectorXd base =
        log_probs_ - gamma_ * (endowment_ + claim);
    const Eigen::MatrixXd A = -gamma_ * space_.map;
    const int r = space_.dim();

    Eigen::VectorXd z = warm_;
    detail::InnerSolve out;
    if (r == 0) {
      out.z = z;
      out.objective = log_sum_exp(base);
      out.measure = softmax(base);
      out.residual = 0.0;
      return out;
    }

    Eigen::VectorXd c = base + A * z;
    double psi = log_sum_exp(c);
    Eigen::VectorXd s = softmax(c);
    auto martingale_residual = [&](const Eigen::VectorXd& weights) {
      const Eigen::VectorXd mart = space_.map.transpose() * weights;
      return mart.size() ? mart.cwiseAbs().maxCoeff() : 0.0;
    };
    for (int iter = 0; iter < options_.inner_max_iterations; ++iter) {
      out.iterations = iter;
      out.residual = martingale_residual(s);
      if (out.residual <= options_.inner_tol) break;

      const Eigen::VectorXd g = A.transpose() * s;
      Eigen::MatrixXd H = A.transpose() * s.asDiagonal() * A -
                          (A.transpose() * s) * (s.transpose() * A);
      Eigen::VectorXd d = -H.ldlt().solve(g);
      if (!d.allFinite() || d.dot(g) >= 0) d = -g;

      double step = 1.0;
      bool moved = false;
      for (int ls = 0; ls < 60; ++ls) {
        const Eigen::VectorXd z_try = z + step * d;
        const Eigen::VectorXd c_try = base + A * z_try;
        const double psi_try = log_sum_exp(c_try);
        // Near the optimum the value is flat to machine precision while
        // the martingale residual is still informative; accept on either.
        const bool value_ok = psi_try <= psi + 1e-4 * step * g.dot(d);
        const bool residual_ok =
            !value_ok && psi_try <= psi + 1e-14 * std::abs(psi) &&
            martingale_residual(softmax(c_try)) < 0.9 * out.residual;
        if (value_ok || residual_ok) {
          z = z_try;
          c = c_try;
          psi = psi_try;
          s = softmax(c);
          moved = true;
          break;
        }
        step *= 0.5;
      }
      if (!moved) break;  // stalled at numerical floor
    }
    out.residual = martingale_residual(s);
    out.converged = out.residual <= options_.inner_tol;
    out.z = z;
    out.objective = psi;
    out.measure = s;
    warm_ = z;
    return out;
  }

  double log_moment(const Claim& claim) {
    return minimize_log_moment(claim).objective / gamma_;
  }

  RiskEvaluation evaluate(const Claim& claim) {
    detail::InnerSolve inner = minimize_log_moment(claim);
    if (!inner.converged && inner.residual > 1e-8) {
      warm_.setZero();  // cold restart
      inner = minimize_log_moment(claim);
    }
    if (inner.residual > 1e-8)
      throw NonConvergence("entropic inner solver stalled at residual " +
                           std::to_string(inner.residual));
    RiskEvaluation eval;
    eval.value = inner.objective / gamma_ - baseline();
    eval.optimizer_measure = inner.measure;
    eval.hedge = space_.basis * inner.z;
    eval.iterations = inner.iterations;
    eval.residual = inner.residual;
    return eval;
  }

  // l(0); cached since it only depends on the model.
  double baseline() {
    if (!baseline_) {
      const Eigen::VectorXd save = warm_;
      warm_.setZero();
      baseline_ = log_moment(Eigen::VectorXd::Zero(market_.num_states()));
      warm_ = save;
    }
    return *baseline_;
  }

  double gamma() const { return gamma_; }
  const Eigen::VectorXd& endowment() const { return endowment_; }
  const detail::ReducedHedgeSpace& space() const { return space_; }

 private:
  static Eigen::VectorXd softmax(const Eigen::VectorXd& c) {
    const Eigen::ArrayXd shifted = c.array() - c.maxCoeff();
    const Eigen::ArrayXd e = shifted.exp();
    return (e / e.sum()).matrix();
  }

  const FiniteMarket& market_;
  double gamma_;
  MarketView view_;
  detail::ReducedHedgeSpace space_;
  RiskSolveOptions options_;
  Eigen::VectorXd endowment_;
  Eigen::VectorXd log_probs_;
  Eigen::VectorXd warm_;
  std::optional<double> baseline_;
};

// Utility-based capital requirement: smallest m with u(x|B+m) >= u(x|0),
// found by monotone bisection over the bracket [-||B||, ||B||]; each u is
// an inner concave maximization over the reduced hedge coordinates.
class UtilityEvaluator {
 public:
  UtilityEvaluator(const RiskModel& model, const FiniteMarket& market,
                   RiskSolveOptions options = {})
      : market_(market),
        spec_(model.utility),
        wealth_(model.initial_wealth),
        space_(market, model.view),
        options_(options),
        exponential_(model, market, options) {
    endowment_ = model.endowment.size() ? model.endowment
                                        : Eigen::VectorXd::Zero(market.num_states());
    warm_ = Eigen::VectorXd::Zero(space_.dim());
  }

  RiskEvaluation evaluate(const Claim& claim) {
    const double bound = claim.size() ? claim.cwiseAbs().maxCoeff() : 0.0;
    const double u0 = baseline_utility();
    int total_iterations = 0;
    // Probe solves feed only the acceptability comparison; their values
    // settle long before the optimizer measure does, so stalls are fine.
    auto acceptable = [&](double m) {
      const detail::InnerSolve inner = indirect_utility(
          claim + Eigen::VectorXd::Constant(market_.num_states(), m));
      total_iterations += inner.iterations + 1;
      return inner.objective >= u0;
    };
    const double tol = options_.bisection_tol * std::max(1.0, bound);
    const double m = bisect_smallest_acceptable(acceptable, -bound, bound, tol);

    detail::InnerSolve inner = indirect_utility(
        claim + Eigen::VectorXd::Constant(market_.num_states(), m));
    if (!inner.converged) {
      warm_.setZero();  // cold restart away from a boundary-hugging iterate
      inner = indirect_utility(
          claim + Eigen::VectorXd::Constant(market_.num_states(), m));
    }
    if (inner.residual > 1e-8)
      throw NonConvergence("utility inner solver stalled at residual " +
                           std::to_string(inner.residual));
    RiskEvaluation eval;
    eval.value = m;
    eval.optimizer_measure = inner.measure;
    eval.hedge = space_.basis * inner.z;
    eval.iterations = total_iterations;
    eval.residual = inner.residual;
    return eval;
  }

  double baseline_utility() {
    if (!baseline_) {
      const detail::InnerSolve inner =
          indirect_utility(Eigen::VectorXd::Zero(market_.num_states()));
      if (!std::isfinite(inner.objective))
        throw DomainViolation(
            "power utility wealth is outside the domain for every strategy");
      baseline_ = inner.objective;
    }
    return *baseline_;
  }

  // sup_theta E[U(x + E + claim + theta.dS)]. For the exponential family
  // this is evaluated through the log-moment problem (a monotone
  // transform), which keeps extreme positions finite. objective is
  // -infinity when no strategy keeps wealth inside the power domain.
  detail::InnerSolve indirect_utility(const Claim& claim) {
    if (spec_.family == UtilityFamily::Exponential) {
      detail::InnerSolve inner = exponential_.minimize_log_moment(
          claim + Eigen::VectorXd::Constant(market_.num_states(), wealth_));
      inner.objective = -inner.objective;  // log-scale utility surrogate
      return inner;
    }
    return power_inner(claim);
  }

 private:
  detail::InnerSolve power_inner(const Claim& claim) {
    const int N = market_.num_states();
    const int r = space_.dim();
    const double lb = spec_.lower_bound;
    const double p = spec_.exponent;
    const Eigen::VectorXd base =
        Eigen::VectorXd::Constant(N, wealth_) + endowment_ + claim;
    const Eigen::VectorXd& probs = market_.probs;

    detail::InnerSolve out;
    Eigen::VectorXd z = warm_;
    Eigen::VectorXd w = base + space_.map * z;
    if ((w.array() <= lb).any()) {
      z.setZero();
      w = base + space_.map * z;
    }
    if ((w.array() <= lb).any()) {
      z = feasible_start(base);
      if (z.size() == 0) {
        out.objective = -std::numeric_limits<double>::infinity();
        out.z = Eigen::VectorXd::Zero(r);
        out.measure = Eigen::VectorXd();
        return out;
      }
      w = base + space_.map * z;
    }

    auto value = [&](const Eigen::VectorXd& wealth) {
      return (probs.array() * ((wealth.array() - lb).pow(p) / p)).sum();
    };
    double phi = value(w);
    for (int iter = 0; iter < options_.inner_max_iterations; ++iter) {
      out.iterations = iter;
      const Eigen::ArrayXd margin = w.array() - lb;
      const Eigen::VectorXd weights =
          (probs.array() * margin.pow(p - 1.0)).matrix();
      const Eigen::VectorXd tilt = weights / weights.sum();
      const Eigen::VectorXd mart = space_.map.transpose() * tilt;
      out.residual = mart.size() ? mart.cwiseAbs().maxCoeff() : 0.0;
      if (out.residual <= options_.inner_tol || r == 0) break;

      const Eigen::VectorXd g = space_.map.transpose() * weights;
      const Eigen::VectorXd curv =
          (probs.array() * (p - 1.0) * margin.pow(p - 2.0)).matrix();
      const Eigen::MatrixXd H =
          space_.map.transpose() * curv.asDiagonal() * space_.map;
      Eigen::VectorXd d = -H.ldlt().solve(g);
      if (!d.allFinite() || d.dot(g) <= 0) d = g;  // ascent fallback

      // Fraction-to-boundary, then backtracking on the concave objective.
      // As in the entropic solver, steps that leave the value flat but
      // shrink the martingale residual are accepted.
      const Eigen::VectorXd dw = space_.map * d;
      double step_max = std::numeric_limits<double>::infinity();
      for (int ww = 0; ww < N; ++ww)
        if (dw(ww) < 0) step_max = std::min(step_max, (lb - w(ww)) / dw(ww));
      double step = std::min(1.0, 0.95 * step_max);
      bool moved = false;
      for (int ls = 0; ls < 60 && step > 1e-18; ++ls) {
        const Eigen::VectorXd w_try = w + step * dw;
        if ((w_try.array() > lb).all()) {
          const double phi_try = value(w_try);
          bool accept = phi_try >= phi + 1e-4 * step * g.dot(d);
          if (!accept && phi_try >= phi - 1e-14 * std::abs(phi)) {
            const Eigen::VectorXd weights_try =
                (probs.array() * (w_try.array() - lb).pow(p - 1.0)).matrix();
            const Eigen::VectorXd mart_try =
                space_.map.transpose() * (weights_try / weights_try.sum());
            accept = mart_try.cwiseAbs().maxCoeff() < 0.9 * out.residual;
          }
          if (accept) {
            z += step * d;
            w = w_try;
            phi = phi_try;
            moved = true;
            break;
          }
        }
        step *= 0.5;
      }
      if (!moved) break;
    }
    const Eigen::ArrayXd margin = w.array() - lb;
    const Eigen::VectorXd weights =
        (probs.array() * margin.pow(p - 1.0)).matrix();
    out.measure = weights / weights.sum();
    const Eigen::VectorXd mart = space_.map.transpose() * out.measure;
    out.residual = mart.size() ? mart.cwiseAbs().maxCoeff() : 0.0;
    out.converged = r == 0 || out.residual <= options_.inner_tol;
    out.z = z;
    out.objective = phi;
    warm_ = z;
    return out;
  }

  // Max-margin LP: maximize t with base + map z >= lb + t in every state.
  // Empty return means no strategy reaches the utility domain.
  Eigen::VectorXd feasible_start(const Eigen::VectorXd& base) const {
    const int N = market_.num_states();
    const int r = space_.dim();
    if (r == 0) return Eigen::VectorXd();
    Eigen::MatrixXd A(N, 2 * r + 2 + N);
    A.setZero();
    A.block(0, 0, N, r) = -space_.map;
    A.block(0, r, N, r) = space_.map;
    A.col(2 * r).setOnes();
    A.col(2 * r + 1) = -Eigen::VectorXd::Ones(N);
    A.block(0, 2 * r + 2, N, N) = Eigen::MatrixXd::Identity(N, N);
    const Eigen::VectorXd b =
        base - Eigen::VectorXd::Constant(N, spec_.lower_bound);
    Eigen::VectorXd c = Eigen::VectorXd::Zero(2 * r + 2 + N);
    c(2 * r) = -1.0;
    c(2 * r + 1) = 1.0;
    const LpResult lp = solve_lp(A, c, b);
    if (lp.status != LpStatus::Optimal || -lp.objective <= 1e-12)
      return Eigen::VectorXd();
    return lp.x.head(r) - lp.x.segment(r, r);
  }

  const FiniteMarket& market_;
  UtilitySpec spec_;
  double wealth_;
  detail::ReducedHedgeSpace space_;
  RiskSolveOptions options_;
  EntropicEvaluator exponential_;  // engine for the exponential family
  Eigen::VectorXd endowment_;
  Eigen::VectorXd warm_;
  std::optional<double> baseline_;
};

// Convenience wrapper owning either evaluator kind.
class RiskEvaluator {
 public:
  RiskEvaluator(const RiskModel& model, const FiniteMarket& market,
                RiskSolveOptions options = {})
      : model_(model) {
    validate_model(model, market);
    if (model.kind == RiskKind::Entropic)
      entropic_.emplace(model, market, options);
    else
      utility_.emplace(model, market, options);
  }

  RiskEvaluation evaluate(const Claim& claim) {
    return entropic_ ? entropic_->evaluate(claim) : utility_->evaluate(claim);
  }

  const RiskModel& model() const { return model_; }
  EntropicEvaluator* entropic() { return entropic_ ? &*entropic_ : nullptr; }

 private:
  RiskModel model_;
  std::optional<EntropicEvaluator> entropic_;
  std::optional<UtilityEvaluator> utility_;
};

inline RiskEvaluation capital_requirement(const RiskModel& model,
                                          const FiniteMarket& market,
                                          const Claim& claim,
                                          RiskSolveOptions options = {}) {
  RiskEvaluator evaluator(model, market, options);
  return evaluator.evaluate(claim);
}

struct PositionRisk {
  double value = 0.0;
  Eigen::VectorXd gradient;  // d rho(a.B) / d a_k = E^{q*}[-B_k]
};

// Risk of holding the portfolio a of bundle claims, with its gradient from
// the optimizer measure.
inline PositionRisk position_risk(const RiskModel& model,
                                  const FiniteMarket& market,
                                  const Eigen::MatrixXd& bundle_payoffs,
                                  const Eigen::VectorXd& a,
                                  RiskSolveOptions options = {}) {
  const Claim combined = bundle_payoffs.transpose() * a;
  const RiskEvaluation eval =
      capital_requirement(model, market, combined, options);
  PositionRisk out;
  out.value = eval.value;
  out.gradient = -(bundle_payoffs * eval.optimizer_measure);
  return out;
}

// Penalty function of the robust representation. Entropic models admit the
// relative-entropy closed form; for utility-based models the conjugate
// sup_C { E^q[-C] - rho(C) } is computed numerically (the definition, not
// an invented formula), which requires q in the interior of the polytope.
inline PenaltyValue penalty_value(const RiskModel& model,
                                  const FiniteMarket& market,
                                  const Eigen::VectorXd& q,
                                  RiskSolveOptions options = {}) {
  validate_model(model, market);
  const int N = market.num_states();
  if (q.size() != N)
    throw ValidationError("measure", "dimension mismatch");
  if (q.minCoeff() < -1e-12 || std::abs(q.sum() - 1.0) > 1e-9)
    throw ValidationError("measure", "not a probability vector");

  PenaltyValue penalty;
  penalty.measure = q;
  const Eigen::MatrixXd rows = market.view_rows(model.view);
  if (rows.rows() > 0 && (rows * q).cwiseAbs().maxCoeff() > 1e-9) {
    penalty.finite = false;  // outside the polytope the penalty is +infinity
    return penalty;
  }

  if (model.kind == RiskKind::Entropic) {
    EntropicEvaluator evaluator(model, market, options);
    double entropy = 0.0;
    for (int w = 0; w < N; ++w)
      if (q(w) > 0) entropy += q(w) * std::log(q(w) / market.probs(w));
    const double alpha = entropy / model.gamma +
                         q.dot(evaluator.endowment()) + evaluator.baseline();
    penalty.alpha = std::max(0.0, alpha);
    penalty.finite = true;
    return penalty;
  }

  // Numeric conjugate for utility-based models.
  RiskEvaluator evaluator(model, market, options);
  auto neg_conjugate = [&](const Eigen::VectorXd& c, Eigen::VectorXd& grad) {
    const RiskEvaluation eval = evaluator.evaluate(c);
    grad = q - eval.optimizer_measure;
    return q.dot(c) + eval.value;
  };
  SmoothSolveOptions solve;
  solve.grad_tol = 1e-8;
  solve.max_iterations = 300;
  solve.divergence_bound = 100.0;
  const SmoothSolveResult res =
      bfgs_minimize(neg_conjugate, Eigen::VectorXd::Zero(N), solve);
  if (!res.converged)
    throw NonConvergence(
        "penalty conjugate did not converge; the measure may lie outside "
        "the interior of the effective domain");
  penalty.alpha = std::max(0.0, -res.value);
  penalty.finite = true;
  return penalty;
}

inline bool polytope_nonempty(const FiniteMarket& market,
                              const MarketView& view) {
  const Eigen::MatrixXd rows = market.view_rows(view);
  const int N = market.num_states();
  Eigen::MatrixXd A(rows.rows() + 1, N);
  A.topRows(rows.rows()) = rows;
  A.bottomRows(1).setOnes();
  Eigen::VectorXd b = Eigen::VectorXd::Zero(rows.rows() + 1);
  b(rows.rows()) = 1.0;
  return solve_lp(A, Eigen::VectorXd::Zero(N), b).status == LpStatus::Optimal;
}

inline MarketView union_view(const std::vector<RiskModel>& models) {
  MarketView view;
  for (const RiskModel& m : models)
    view.asset_indices.insert(view.asset_indices.end(),
                              m.view.asset_indices.begin(),
                              m.view.asset_indices.end());
  std::sort(view.asset_indices.begin(), view.asset_indices.end());
  view.asset_indices.erase(
      std::unique(view.asset_indices.begin(), view.asset_indices.end()),
      view.asset_indices.end());
  return view;
}

struct InfConvolution {
  double value = 0.0;
  std::vector<Claim> split;
  double first_order_residual = 0.0;
  int iterations = 0;
};

// Minimal aggregate capital over all ways of splitting the claim among the
// agents. Smooth convex program over the first I-1 parts; the optimal
// split is unique only up to replicable transfers, the value is unique.
inline InfConvolution inf_convolution(const std::vector<RiskModel>& models,
                                      const FiniteMarket& market,
                                      const Claim& claim,
                                      RiskSolveOptions options = {}) {
  const int I = static_cast<int>(models.size());
  if (I == 0) throw ValidationError("agents", "at least one agent required");
  const int N = market.num_states();

  if (!polytope_nonempty(market, union_view(models)))
    throw EmptyIntersection(
        "the intersection of the agents' martingale polytopes is empty");

  std::vector<RiskEvaluator> evaluators;
  evaluators.reserve(I);
  for (const RiskModel& m : models) evaluators.emplace_back(m, market, options);

  InfConvolution out;
  if (I == 1) {
    out.value = evaluators[0].evaluate(claim).value;
    out.split = {claim};
    return out;
  }

  auto objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
    grad.resize((I - 1) * N);
    Claim last = claim;
    for (int i = 0; i < I - 1; ++i) last -= x.segment(i * N, N);
    const RiskEvaluation eval_last = evaluators[I - 1].evaluate(last);
    double total = eval_last.value;
    for (int i = 0; i < I - 1; ++i) {
      const RiskEvaluation eval = evaluators[i].evaluate(x.segment(i * N, N));
      total += eval.value;
      grad.segment(i * N, N) =
          eval_last.optimizer_measure - eval.optimizer_measure;
    }
    return total;
  };

  Eigen::VectorXd x0((I - 1) * N);
  for (int i = 0; i < I - 1; ++i) x0.segment(i * N, N) = claim / I;

  SmoothSolveOptions solve;
  solve.grad_tol = 1e-8;
  solve.max_iterations = 800;
  const SmoothSolveResult res = bfgs_minimize(objective, x0, solve);
  if (!res.converged)
    throw NonConvergence("inf-convolution solver stalled at residual " +
                         std::to_string(res.grad_norm));

  out.value = res.value;
  out.first_order_residual = res.grad_norm;
  out.iterations = res.iterations;
  out.split.resize(I);
  Claim last = claim;
  for (int i = 0; i < I - 1; ++i) {
    out.split[i] = res.x.segment(i * N, N);
    last -= out.split[i];
  }
  out.split[I - 1] = last;

  const double bound = claim.size() ? claim.cwiseAbs().maxCoeff() : 0.0;
  if (out.value < -bound * I - 1e-9)
    throw NonConvergence("inf-convolution value violates its lower bound");
  return out;
}

struct ConvexityProbeReport {
  int sampled_pairs = 0;
  int equality_directions = 0;  // pairs differing by a replicable claim
  int violations = 0;
  double min_margin = std::numeric_limits<double>::infinity();
  double max_equality_gap = 0.0;

  bool passed() const { return violations == 0; }
};

// Midpoint strict-convexity probe of a |-> rho(a.B). Pairs differing by a
// replicable combination must sit on the affine part (equality within
// 1e-9); all other pairs must show a strictly positive midpoint margin.
inline ConvexityProbeReport strict_convexity_probe(
    const RiskModel& model, const FiniteMarket& market,
    const Eigen::MatrixXd& bundle_payoffs, int samples = 32,
    unsigned seed = 20240901, RiskSolveOptions options = {}) {
  const int n = static_cast<int>(bundle_payoffs.rows());
  RiskEvaluator evaluator(model, market, options);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-2.0, 2.0);

  ConvexityProbeReport report;
  auto risk_of = [&](const Eigen::VectorXd& a) {
    return evaluator.evaluate(bundle_payoffs.transpose() * a).value;
  };
  auto probe_pair = [&](const Eigen::VectorXd& a, const Eigen::VectorXd& d) {
    ++report.sampled_pairs;
    const double margin =
        0.5 * risk_of(a) + 0.5 * risk_of(d) - risk_of(0.5 * (a + d));
    const Claim diff = bundle_payoffs.transpose() * (a - d);
    const bool equivalent =
        replicable_split(market, model.view, diff).is_replicable;
    if (equivalent) {
      ++report.equality_directions;
      report.max_equality_gap =
          std::max(report.max_equality_gap, std::abs(margin));
      if (std::abs(margin) > 1e-9) ++report.violations;
    } else {
      report.min_margin = std::min(report.min_margin, margin);
      if (margin <= 1e-11) ++report.violations;
    }
  };

  for (int k = 0; k < samples; ++k) {
    Eigen::VectorXd a(n), d(n);
    for (int j = 0; j < n; ++j) {
      a(j) = unif(rng);
      d(j) = unif(rng);
    }
    if ((a - d).cwiseAbs().maxCoeff() < 1e-6) d(0) += 1.0;
    probe_pair(a, d);
  }

  // Directed pairs along any redundant direction of the bundle, where the
  // restriction must be affine.
  const NonRedundancyReport redundancy = check_non_redundancy(
      market, bundle_payoffs, MartingalePolytope{model.view});
  if (!redundancy.non_redundant && redundancy.witness.size() == n) {
    for (int k = 0; k < 4; ++k) {
      Eigen::VectorXd a(n);
      for (int j = 0; j < n; ++j) a(j) = unif(rng);
      probe_pair(a, a + (1.0 + k) * redundancy.witness);
    }
  }
  return report;
}

}  // namespace pepa
