#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <string>
#include <vector>

#include "pepa/errors.hpp"
#include "pepa/linprog.hpp"

// Finite-state one-period market: a reference measure over |Omega| states
// and a d x |Omega| matrix of discounted asset increments. Every market
// object accepted by build_market carries a strictly positive martingale
// measure as its no-arbitrage certificate.

namespace pepa {

using Claim = Eigen::VectorXd;  // payoff per state

// Sub-market an agent may trade; indices are 1-based asset numbers.
struct MarketView {
  std::vector<int> asset_indices;

  int size() const { return static_cast<int>(asset_indices.size()); }
};

struct FiniteMarket {
  std::vector<std::string> state_labels;
  Eigen::VectorXd probs;       // strictly positive, sums to one
  Eigen::MatrixXd increments;  // d x |Omega|
  Eigen::VectorXd martingale_certificate;  // attached by build_market

  int num_states() const { return static_cast<int>(probs.size()); }
  int num_assets() const { return static_cast<int>(increments.rows()); }

  // Increment rows restricted to a view, |view| x |Omega|.
  Eigen::MatrixXd view_rows(const MarketView& view) const {
    Eigen::MatrixXd rows(view.size(), num_states());
    for (int k = 0; k < view.size(); ++k)
      rows.row(k) = increments.row(view.asset_indices[k] - 1);
    return rows;
  }
};

// {q in simplex : increments[view] . q = 0}; nonempty for any validated
// market since the arbitrage certificate lies in every view's polytope.
struct MartingalePolytope {
  MarketView view;
};

inline MarketView full_view(const FiniteMarket& market) {
  MarketView v;
  v.asset_indices.resize(market.num_assets());
  for (int j = 0; j < market.num_assets(); ++j) v.asset_indices[j] = j + 1;
  return v;
}

inline void validate_view(const FiniteMarket& market, const MarketView& view) {
  int prev = 0;
  for (int idx : view.asset_indices) {
    if (idx < 1 || idx > market.num_assets())
      throw ValidationError("view", "asset index " + std::to_string(idx) +
                                        " out of range 1.." +
                                        std::to_string(market.num_assets()));
    if (idx <= prev)
      throw ValidationError("view", "asset indices must be strictly increasing");
    prev = idx;
  }
}

// Maximizes the smallest component of a martingale measure for the given
// rows; the optimum is positive exactly when no arbitrage exists.
inline Eigen::VectorXd strictly_positive_martingale_measure(
    const Eigen::MatrixXd& rows, int num_states) {
  const int d = static_cast<int>(rows.rows());
  const int N = num_states;
  // Variables (s, t) >= 0 with q = s + t*1: max t subject to
  // rows * q = 0 and sum(q) = 1.
  Eigen::MatrixXd A(d + 1, N + 1);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(d + 1);
  for (int j = 0; j < d; ++j) {
    A.block(j, 0, 1, N) = rows.row(j);
    A(j, N) = rows.row(j).sum();
  }
  A.block(d, 0, 1, N).setOnes();
  A(d, N) = static_cast<double>(N);
  b(d) = 1.0;
  Eigen::VectorXd c = Eigen::VectorXd::Zero(N + 1);
  c(N) = -1.0;  // maximize t

  const LpResult lp = solve_lp(A, c, b);
  if (lp.status != LpStatus::Optimal || -lp.objective <= 1e-9)
    throw ArbitrageDetected(
        "no equivalent martingale measure: the market admits arbitrage");
  const double t = lp.x(N);
  return lp.x.head(N) + Eigen::VectorXd::Constant(N, t);
}

inline FiniteMarket build_market(const Eigen::VectorXd& probs,
                                 const Eigen::MatrixXd& increments,
                                 std::vector<std::string> state_labels = {}) {
  const int N = static_cast<int>(probs.size());
  if (N == 0) throw InvalidProbabilities("empty probability vector");
  if (increments.size() > 0 && increments.cols() != N)
    throw InvalidProbabilities("increment matrix has " +
                               std::to_string(increments.cols()) +
                               " columns for " + std::to_string(N) + " states");
  for (int w = 0; w < N; ++w) {
    if (!(probs(w) > 0.0) || !std::isfinite(probs(w)))
      throw InvalidProbabilities("probabilities must be strictly positive");
  }
  if (std::abs(probs.sum() - 1.0) > 1e-12)
    throw InvalidProbabilities("probabilities sum to " +
                               std::to_string(probs.sum()));
  FiniteMarket market;
  market.probs = probs;
  market.increments =
      increments.size() > 0 ? increments : Eigen::MatrixXd(0, N);
  if (state_labels.empty()) {
    for (int w = 0; w < N; ++w)
      market.state_labels.push_back("s" + std::to_string(w + 1));
  } else {
    if (static_cast<int>(state_labels.size()) != N)
      throw ValidationError("states", "label count does not match probs");
    market.state_labels = std::move(state_labels);
  }
  market.martingale_certificate =
      strictly_positive_martingale_measure(market.increments, N);
  return market;
}

struct ReplicableSplit {
  Eigen::VectorXd hedge;     // one weight per view asset
  double constant = 0.0;
  Eigen::VectorXd residual;  // claim - constant - hedge . increments
  bool is_replicable = false;
};

// Orthogonal decomposition of a claim onto span{1, view increments} in the
// P-weighted inner product <x,y> = sum_w p_w x_w y_w. The hedge is the
// minimum-norm solution, so redundant view assets stay deterministic.
inline ReplicableSplit replicable_split(const FiniteMarket& market,
                                        const MarketView& view,
                                        const Claim& claim) {
  validate_view(market, view);
  const int N = market.num_states();
  const int k = view.size();
  Eigen::MatrixXd basis(N, k + 1);
  basis.col(0).setOnes();
  const Eigen::MatrixXd rows = market.view_rows(view);
  for (int j = 0; j < k; ++j) basis.col(j + 1) = rows.row(j).transpose();

  const Eigen::VectorXd w = market.probs.cwiseSqrt();
  const Eigen::MatrixXd weighted = w.asDiagonal() * basis;
  const Eigen::VectorXd beta =
      weighted.bdcSvd(Eigen::ComputeThinU | Eigen::ComputeThinV)
          .solve(w.cwiseProduct(claim));

  ReplicableSplit split;
  split.constant = beta(0);
  split.hedge = beta.tail(k);
  split.residual = claim - basis * beta;
  const double scale = std::max(1.0, claim.cwiseAbs().maxCoeff());
  split.is_replicable = split.residual.cwiseAbs().maxCoeff() <= 1e-10 * scale;
  return split;
}

struct SupportBounds {
  double lower = 0.0;
  double upper = 0.0;
  Eigen::VectorXd argmin;  // measures attaining the bounds
  Eigen::VectorXd argmax;
};

// Exact LP optima of E^q[claim] over the polytope.
inline SupportBounds support_bounds(const FiniteMarket& market,
                                    const MartingalePolytope& polytope,
                                    const Claim& claim) {
  validate_view(market, polytope.view);
  const int N = market.num_states();
  const Eigen::MatrixXd rows = market.view_rows(polytope.view);
  const int d = static_cast<int>(rows.rows());
  Eigen::MatrixXd A(d + 1, N);
  A.topRows(d) = rows;
  A.bottomRows(1).setOnes();
  Eigen::VectorXd b = Eigen::VectorXd::Zero(d + 1);
  b(d) = 1.0;

  const LpResult lo = solve_lp(A, claim, b);
  if (lo.status != LpStatus::Optimal)
    throw InfeasiblePolytope("martingale polytope is empty for this view");
  const LpResult hi = solve_lp(A, Eigen::VectorXd(-claim), b);
  if (hi.status != LpStatus::Optimal)
    throw InfeasiblePolytope("martingale polytope is empty for this view");

  SupportBounds bounds;
  bounds.lower = lo.objective;
  bounds.upper = -hi.objective;
  bounds.argmin = lo.x;
  bounds.argmax = hi.x;
  return bounds;
}

struct NonRedundancyReport {
  bool non_redundant = false;
  Eigen::VectorXd witness;  // delta with delta.B constant over the polytope
  double min_spread = 0.0;  // smallest LP spread found for a kernel direction
};

// A bundle is non-redundant when no nonzero combination delta.B has a
// constant expectation over the polytope, i.e. no delta.B lies in
// span{1, view increments}. Rank test on the projection residuals, then an
// LP confirmation of any kernel direction found.
inline NonRedundancyReport check_non_redundancy(
    const FiniteMarket& market, const Eigen::MatrixXd& bundle_payoffs,
    const MartingalePolytope& polytope) {
  const int n = static_cast<int>(bundle_payoffs.rows());
  const int N = market.num_states();
  NonRedundancyReport report;
  if (n == 0) {
    report.non_redundant = true;
    return report;
  }

  Eigen::MatrixXd residuals(n, N);
  for (int kk = 0; kk < n; ++kk) {
    residuals.row(kk) =
        replicable_split(market, polytope.view, bundle_payoffs.row(kk))
            .residual;
  }
  const Eigen::VectorXd w = market.probs.cwiseSqrt();
  const Eigen::MatrixXd weighted = residuals * w.asDiagonal();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(
      weighted, Eigen::ComputeFullU | Eigen::ComputeThinV);
  const double sigma_max = svd.singularValues().size() > 0
                               ? svd.singularValues()(0)
                               : 0.0;
  const double threshold = 1e-9 * std::max(1.0, sigma_max);
  int rank = 0;
  for (int i = 0; i < svd.singularValues().size(); ++i)
    if (svd.singularValues()(i) > threshold) ++rank;

  if (rank == n) {
    report.non_redundant = true;
    return report;
  }

  // Kernel direction with the smallest singular value; confirm by LP that
  // its expectation really is flat across the polytope.
  Eigen::VectorXd delta = svd.matrixU().col(n - 1);
  const Claim combo = bundle_payoffs.transpose() * delta;
  const SupportBounds bounds = support_bounds(market, polytope, combo);
  report.min_spread = bounds.upper - bounds.lower;
  report.non_redundant = report.min_spread > 1e-9;
  if (!report.non_redundant) report.witness = delta;
  return report;
}

}  // namespace pepa
