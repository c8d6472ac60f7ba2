#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "pepa/equilibrium.hpp"
#include "pepa/errors.hpp"
#include "pepa/market.hpp"
#include "pepa/risk.hpp"

// Brute-force reference implementations used by the test suites. They are
// deliberately slow and simple: plain grids, golden-section searches, no
// warm starts. They share only the market utilities with the engine, never
// its solvers, so their failure modes are independent.

namespace pepa::oracle {

struct GridSpec {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  double step = 0.0;

  int dims() const { return static_cast<int>(lower.size()); }

  long long axis_points(int i) const {
    return static_cast<long long>(
               std::floor((upper(i) - lower(i)) / step + 1e-9)) + 1;
  }

  void validate() const {
    if (!(step > 0)) throw std::invalid_argument("grid step must be positive");
    if (lower.size() != upper.size())
      throw std::invalid_argument("grid bounds dimension mismatch");
    long long total = 1;
    for (int i = 0; i < dims(); ++i) {
      if (!std::isfinite(lower(i)) || !std::isfinite(upper(i)) ||
          upper(i) < lower(i))
        throw std::invalid_argument("grid bounds must be finite and ordered");
      total *= axis_points(i);
      if (total > 100'000'000)
        throw std::invalid_argument("grid exceeds the 1e8 point guard");
    }
  }
};

namespace detail {

inline double golden_minimize(const std::function<double(double)>& f,
                              double lo, double hi, double tol = 1e-12) {
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  while (b - a > tol) {
    if (f1 <= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - phi * (b - a);
      f1 = f(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + phi * (b - a);
      f2 = f(x2);
    }
  }
  return 0.5 * (a + b);
}

struct UtilityOps {
  std::function<double(double)> value;  // w -> U(w), -inf outside the domain
  double domain_lower = -std::numeric_limits<double>::infinity();
};

inline UtilityOps utility_ops(const RiskModel& model) {
  UtilityOps ops;
  if (model.kind == RiskKind::Entropic) {
    const double g = model.gamma;
    ops.value = [g](double w) { return -std::exp(-g * w); };
    return ops;
  }
  if (model.utility.family == UtilityFamily::Exponential) {
    const double g = model.utility.gamma;
    ops.value = [g](double w) { return -std::exp(-g * w); };
    return ops;
  }
  const double p = model.utility.exponent;
  const double lb = model.utility.lower_bound;
  ops.domain_lower = lb;
  ops.value = [p, lb](double w) {
    if (w <= lb) return -std::numeric_limits<double>::infinity();
    return std::pow(w - lb, p) / p;
  };
  return ops;
}

inline Eigen::VectorXd model_endowment(const RiskModel& model, int N) {
  return model.endowment.size() ? model.endowment : Eigen::VectorXd::Zero(N);
}

// Expected utility of x + E + claim + theta.dS maximized over theta by
// nested golden-section search; supports at most two view assets.
inline double golden_indirect_utility(const RiskModel& model,
                                      const FiniteMarket& market,
                                      const Claim& claim, double theta_box) {
  const UtilityOps ops = utility_ops(model);
  const int N = market.num_states();
  const Eigen::MatrixXd rows = market.view_rows(model.view);
  const int d = static_cast<int>(rows.rows());
  if (d > 2)
    throw std::invalid_argument("reference risk supports at most two assets");
  const Eigen::VectorXd base = Eigen::VectorXd::Constant(N, model.initial_wealth) +
                               model_endowment(model, N) + claim;

  auto expected = [&](const Eigen::VectorXd& theta) {
    const Eigen::VectorXd w = base + rows.transpose() * theta;
    double total = 0.0;
    for (int s = 0; s < N; ++s) {
      const double u = ops.value(w(s));
      if (!std::isfinite(u) && u < 0) return u;
      total += market.probs(s) * u;
    }
    return total;
  };

  if (d == 0) return expected(Eigen::VectorXd());
  if (d == 1) {
    double lo = -theta_box, hi = theta_box;
    if (std::isfinite(ops.domain_lower)) {
      // Exact feasible interval for one asset.
      for (int s = 0; s < N; ++s) {
        const double slope = rows(0, s);
        const double room = base(s) - ops.domain_lower;
        if (slope > 1e-14) lo = std::max(lo, -room / slope + 1e-12);
        if (slope < -1e-14) hi = std::min(hi, -room / slope - 1e-12);
      }
      if (lo >= hi) return -std::numeric_limits<double>::infinity();
    }
    const double theta = golden_minimize(
        [&](double t) {
          Eigen::VectorXd th(1);
          th << t;
          return -expected(th);
        },
        lo, hi);
    Eigen::VectorXd th(1);
    th << theta;
    return expected(th);
  }
  // d == 2: nested golden section (entropic family only; domains unbounded).
  if (std::isfinite(ops.domain_lower))
    throw std::invalid_argument(
        "reference risk with a bounded domain supports one asset");
  auto inner_best = [&](double t1) {
    return -golden_minimize(
        [&](double t2) {
          Eigen::VectorXd th(2);
          th << t1, t2;
          return -expected(th);
        },
        -theta_box, theta_box, 1e-10);
  };
  const double t1 =
      golden_minimize([&](double t) { return -inner_best(t); }, -theta_box,
                      theta_box, 1e-10);
  return inner_best(t1);
}

}  // namespace detail

// Reference capital requirement: bisection on the cash amount with a
// golden-section inner utility maximization. Independent of the engine's
// Newton/BFGS path.
inline double reference_risk(const RiskModel& model, const FiniteMarket& market,
                             const Claim& claim, double tol = 1e-11) {
  const int N = market.num_states();
  const double bound = claim.size() ? claim.cwiseAbs().maxCoeff() : 0.0;
  const double theta_box =
      50.0 * (1.0 + bound +
              (model.endowment.size() ? model.endowment.cwiseAbs().maxCoeff()
                                      : 0.0));
  const double u0 = detail::golden_indirect_utility(
      model, market, Eigen::VectorXd::Zero(N), theta_box);
  if (!std::isfinite(u0))
    throw DomainViolation("reference risk: zero claim is infeasible");

  double lo = -bound, hi = bound;
  auto acceptable = [&](double m) {
    return detail::golden_indirect_utility(
               model, market,
               claim + Eigen::VectorXd::Constant(N, m), theta_box) >= u0;
  };
  if (acceptable(lo)) return lo;
  for (int i = 0; i < 200 && hi - lo > tol; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (acceptable(mid))
      hi = mid;
    else
      lo = mid;
  }
  return hi;
}

// Smallest m on the grid making claim + m acceptable, with the inner
// utility maximization restricted to a theta grid. Grid axes: dimension 0
// is the cash axis, the rest are view assets.
inline double primal_risk_grid(const RiskModel& model,
                               const FiniteMarket& market, const Claim& claim,
                               const GridSpec& grid) {
  grid.validate();
  const Eigen::MatrixXd rows = market.view_rows(model.view);
  const int d = static_cast<int>(rows.rows());
  if (d > 2)
    throw std::invalid_argument("primal grid supports at most two assets");
  if (grid.dims() != 1 + d)
    throw std::invalid_argument("grid must have one cash axis plus one axis "
                                "per view asset");
  if (market.num_states() > 8)
    throw std::invalid_argument("primal grid supports at most eight states");

  const detail::UtilityOps ops = detail::utility_ops(model);
  const int N = market.num_states();
  const Eigen::VectorXd base =
      Eigen::VectorXd::Constant(N, model.initial_wealth) +
      detail::model_endowment(model, N);

  auto grid_utility = [&](const Claim& payoff) {
    double best = -std::numeric_limits<double>::infinity();
    std::vector<long long> idx(d, 0);
    while (true) {
      Eigen::VectorXd theta(d);
      for (int k = 0; k < d; ++k)
        theta(k) = grid.lower(k + 1) + grid.step * idx[k];
      const Eigen::VectorXd w = base + payoff + rows.transpose() * theta;
      double total = 0.0;
      for (int s = 0; s < N; ++s) {
        const double u = ops.value(w(s));
        if (!std::isfinite(u) && u < 0) {
          total = u;
          break;
        }
        total += market.probs(s) * u;
      }
      best = std::max(best, total);
      if (d == 0) break;
      int k = 0;
      while (k < d && ++idx[k] == grid.axis_points(k + 1)) idx[k++] = 0;
      if (k == d) break;
    }
    return best;
  };

  const double u0 = grid_utility(Eigen::VectorXd::Zero(N));
  const long long m_points = grid.axis_points(0);
  for (long long j = 0; j < m_points; ++j) {
    const double m = grid.lower(0) + grid.step * j;
    const bool ok =
        grid_utility(claim + Eigen::VectorXd::Constant(N, m)) >= u0;
    if (ok) {
      if (j == 0)
        throw GridTooCoarse(
            "cash grid does not bracket the acceptability boundary from "
            "below");
      return m;
    }
  }
  throw GridTooCoarse("no grid point reaches acceptability");
}

// Dual route for entropic-family models: maximize E^q[-claim] - alpha(q)
// over the lattice points of the simplex that satisfy the view's
// martingale constraints. alpha is assembled inside the oracle from the
// relative entropy, the endowment term and a lattice baseline, so the
// computation shares nothing with the engine.
inline double dual_risk_grid(const RiskModel& model, const FiniteMarket& market,
                             const Claim& claim, double step) {
  double gamma = 0.0;
  if (model.kind == RiskKind::Entropic) {
    gamma = model.gamma;
  } else if (model.utility.family == UtilityFamily::Exponential) {
    gamma = model.utility.gamma;
  } else {
    throw std::invalid_argument(
        "dual grid requires an entropic-family model");
  }
  const int N = market.num_states();
  if (N > 4)
    throw std::invalid_argument("dual grid supports at most four states");
  if (!(step > 0)) throw std::invalid_argument("step must be positive");
  const long long K = std::llround(1.0 / step);
  double combinations = 1.0;
  for (int i = 1; i < N; ++i)
    combinations *= static_cast<double>(K + i) / i;
  if (combinations > 2e8)
    throw std::invalid_argument("simplex grid exceeds the point guard");

  const Eigen::MatrixXd rows = market.view_rows(model.view);
  const int d = static_cast<int>(rows.rows());
  const Eigen::VectorXd endow = detail::model_endowment(model, N);

  // Row-wise min/max of the remaining increments, for pruning.
  Eigen::MatrixXd tail_min(d, N + 1), tail_max(d, N + 1);
  for (int j = 0; j < d; ++j) {
    tail_min(j, N) = std::numeric_limits<double>::infinity();
    tail_max(j, N) = -std::numeric_limits<double>::infinity();
    for (int s = N - 1; s >= 0; --s) {
      tail_min(j, s) = std::min(tail_min(j, s + 1), rows(j, s));
      tail_max(j, s) = std::max(tail_max(j, s + 1), rows(j, s));
    }
  }

  double best_claim = -std::numeric_limits<double>::infinity();
  double best_zero = -std::numeric_limits<double>::infinity();
  bool any_feasible = false;

  Eigen::VectorXd point = Eigen::VectorXd::Zero(N);
  std::function<void(int, long long)> recurse = [&](int state,
                                                    long long remaining) {
    if (state == N - 1) {
      point(state) = static_cast<double>(remaining) / K;
      if (d > 0 && (rows * point).cwiseAbs().maxCoeff() > 1e-9) return;
      any_feasible = true;
      double entropy = 0.0;
      for (int s = 0; s < N; ++s)
        if (point(s) > 0)
          entropy += point(s) * std::log(point(s) / market.probs(s));
      const double penalty_core = entropy / gamma + point.dot(endow);
      best_zero = std::max(best_zero, -penalty_core);
      best_claim = std::max(best_claim, -point.dot(claim) - penalty_core);
      return;
    }
    for (long long k = 0; k <= remaining; ++k) {
      point(state) = static_cast<double>(k) / K;
      bool feasible = true;
      const double mass_left = static_cast<double>(remaining - k) / K;
      for (int j = 0; j < d && feasible; ++j) {
        double s = 0.0;
        for (int t = 0; t <= state; ++t) s += rows(j, t) * point(t);
        const double lo = s + mass_left * tail_min(j, state + 1);
        const double hi = s + mass_left * tail_max(j, state + 1);
        if (lo > 1e-9 || hi < -1e-9) feasible = false;
      }
      if (feasible) recurse(state + 1, remaining - k);
    }
  };
  recurse(0, K);

  if (!any_feasible)
    throw GridTooCoarse("no lattice point satisfies the view constraints");
  // rho = G(claim) - G(0): the baseline shift normalizes alpha >= 0.
  return best_claim - best_zero;
}

struct GridEquilibrium {
  Eigen::VectorXd price;
  Eigen::MatrixXd allocation;  // I x n
  Eigen::VectorXd argmin;      // free coordinates
  double value = 0.0;
};

// Exhaustive minimization of the aggregate objective over an allocation
// grid; the price is recovered from a central-difference gradient of the
// reference risk at the argmin. Ties go to the lexicographically smallest
// grid point.
inline GridEquilibrium equilibrium_grid(const std::vector<RiskModel>& models,
                                        const FiniteMarket& market,
                                        const Bundle& bundle,
                                        const GridSpec& grid) {
  grid.validate();
  const int I = static_cast<int>(models.size());
  const int n = bundle.count();
  const int dims = (I - 1) * n;
  if (dims != grid.dims())
    throw std::invalid_argument("grid must have (I-1)*n dimensions");
  if (dims > 2)
    throw std::invalid_argument("equilibrium grid supports at most two "
                                "free coordinates");

  auto aggregate = [&](const Eigen::VectorXd& x) {
    double total = 0.0;
    Eigen::VectorXd last = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < I - 1; ++i) {
      const Eigen::VectorXd a = x.segment(i * n, n);
      total += reference_risk(models[i], market, bundle.combine(a));
      last -= a;
    }
    total += reference_risk(models[I - 1], market, bundle.combine(last));
    return total;
  };

  GridEquilibrium out;
  double best = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_x(dims);
  std::vector<long long> best_idx(dims, 0);
  std::vector<long long> idx(dims, 0);
  while (true) {
    Eigen::VectorXd x(dims);
    for (int k = 0; k < dims; ++k) x(k) = grid.lower(k) + grid.step * idx[k];
    const double value = aggregate(x);
    if (value < best) {
      best = value;
      best_x = x;
      best_idx = idx;
    }
    int k = dims - 1;  // lexicographic scan: last axis fastest
    while (k >= 0 && ++idx[k] == grid.axis_points(k)) idx[k--] = 0;
    if (k < 0) break;
  }
  for (int k = 0; k < dims; ++k)
    if (best_idx[k] == 0 || best_idx[k] == grid.axis_points(k) - 1)
      throw MinimumOnBoundary("grid argmin touches the box boundary");

  out.value = best;
  out.argmin = best_x;
  out.allocation.resize(I, n);
  Eigen::VectorXd last = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < I - 1; ++i) {
    out.allocation.row(i) = best_x.segment(i * n, n);
    last -= best_x.segment(i * n, n);
  }
  out.allocation.row(I - 1) = last;

  // p = -grad rho_i(a_i . B) by central differences, averaged over agents.
  out.price = Eigen::VectorXd::Zero(n);
  const double h = grid.step;
  for (int i = 0; i < I; ++i) {
    const Eigen::VectorXd holdings = out.allocation.row(i);
    for (int k = 0; k < n; ++k) {
      Eigen::VectorXd up = holdings, down = holdings;
      up(k) += h;
      down(k) -= h;
      const double slope =
          (reference_risk(models[i], market, bundle.combine(up)) -
           reference_risk(models[i], market, bundle.combine(down))) /
          (2.0 * h);
      out.price(k) += -slope;
    }
  }
  out.price /= static_cast<double>(I);
  return out;
}

}  // namespace pepa::oracle
