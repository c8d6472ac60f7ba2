#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <limits>
#include <vector>

#include "pepa/errors.hpp"

// Dense two-phase primal simplex for the small LPs that arise from
// martingale polytopes and agreeability checks (tens of variables at most).
// Bland's rule keeps the pivot sequence deterministic and cycle-free, which
// we value over speed at these sizes.

namespace pepa {

enum class LpStatus { Optimal, Infeasible, Unbounded };

struct LpResult {
  LpStatus status = LpStatus::Infeasible;
  Eigen::VectorXd x;          // primal solution, empty unless Optimal
  Eigen::VectorXd dual;       // y with B^T y = c_B for the final basis
  double objective = std::numeric_limits<double>::quiet_NaN();
};

// Solves  min c.x  s.t.  A x = b, x >= 0.  Rows with b < 0 are flipped
// internally, so callers may pass b of any sign.
inline LpResult solve_lp(Eigen::MatrixXd A, const Eigen::VectorXd& c,
                         Eigen::VectorXd b, double tol = 1e-9) {
  const int m = static_cast<int>(A.rows());
  const int n = static_cast<int>(A.cols());
  Eigen::VectorXd flip = Eigen::VectorXd::Ones(m);
  for (int i = 0; i < m; ++i) {
    if (b(i) < 0) {
      A.row(i) = -A.row(i);
      b(i) = -b(i);
      flip(i) = -1.0;
    }
  }

  // Tableau over the original columns plus m artificials.
  Eigen::MatrixXd T(m, n + m);
  T.leftCols(n) = A;
  T.rightCols(m) = Eigen::MatrixXd::Identity(m, m);
  Eigen::VectorXd rhs = b;
  std::vector<int> basis(m);
  for (int i = 0; i < m; ++i) basis[i] = n + i;

  auto price_out = [&](const Eigen::VectorXd& cost, int col_limit) {
    // Bland: entering = lowest-index column with negative reduced cost,
    // leaving = min-ratio row, ties broken by lowest basis index.
    while (true) {
      Eigen::VectorXd y(m);
      for (int i = 0; i < m; ++i) y(i) = cost(basis[i]);
      int enter = -1;
      for (int j = 0; j < col_limit; ++j) {
        if (std::find(basis.begin(), basis.end(), j) != basis.end()) continue;
        const double reduced = cost(j) - y.dot(T.col(j));
        if (reduced < -tol) {
          enter = j;
          break;
        }
      }
      if (enter < 0) return true;
      int leave = -1;
      double best_ratio = std::numeric_limits<double>::infinity();
      for (int i = 0; i < m; ++i) {
        if (T(i, enter) > tol) {
          const double ratio = rhs(i) / T(i, enter);
          if (ratio < best_ratio - 1e-12 ||
              (ratio < best_ratio + 1e-12 &&
               (leave < 0 || basis[i] < basis[leave]))) {
            best_ratio = ratio;
            leave = i;
          }
        }
      }
      if (leave < 0) return false;  // unbounded in the entering direction
      const double piv = T(leave, enter);
      T.row(leave) /= piv;
      rhs(leave) /= piv;
      for (int i = 0; i < m; ++i) {
        if (i == leave) continue;
        const double f = T(i, enter);
        if (f != 0.0) {
          T.row(i) -= f * T.row(leave);
          rhs(i) -= f * rhs(leave);
        }
      }
      basis[leave] = enter;
    }
  };

  LpResult res;

  // Phase 1: minimize the sum of artificials.
  Eigen::VectorXd c1 = Eigen::VectorXd::Zero(n + m);
  c1.tail(m).setOnes();
  price_out(c1, n + m);
  double infeas = 0.0;
  for (int i = 0; i < m; ++i)
    if (basis[i] >= n) infeas += rhs(i);
  if (infeas > 1e-7) {
    res.status = LpStatus::Infeasible;
    return res;
  }
  // Pivot remaining artificials out of the basis where possible.
  for (int i = 0; i < m; ++i) {
    if (basis[i] < n) continue;
    int enter = -1;
    for (int j = 0; j < n; ++j) {
      if (std::abs(T(i, j)) > tol &&
          std::find(basis.begin(), basis.end(), j) == basis.end()) {
        enter = j;
        break;
      }
    }
    if (enter < 0) continue;  // redundant row; artificial stays at zero
    const double piv = T(i, enter);
    T.row(i) /= piv;
    rhs(i) /= piv;
    for (int k = 0; k < m; ++k) {
      if (k == i) continue;
      const double f = T(k, enter);
      if (f != 0.0) {
        T.row(k) -= f * T.row(i);
        rhs(k) -= f * rhs(i);
      }
    }
    basis[i] = enter;
  }

  // Phase 2 over the original columns only.
  Eigen::VectorXd c2 = Eigen::VectorXd::Zero(n + m);
  c2.head(n) = c;
  if (!price_out(c2, n)) {
    res.status = LpStatus::Unbounded;
    return res;
  }

  res.status = LpStatus::Optimal;
  res.x = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < m; ++i)
    if (basis[i] < n) res.x(basis[i]) = rhs(i);
  res.objective = c.dot(res.x);

  // Duals from the original (unflipped columns are unchanged) basis matrix.
  Eigen::MatrixXd B(m, m);
  Eigen::VectorXd cb(m);
  for (int i = 0; i < m; ++i) {
    if (basis[i] < n) {
      B.col(i) = A.col(basis[i]);
      cb(i) = c(basis[i]);
    } else {
      B.col(i) = Eigen::VectorXd::Unit(m, basis[i] - n);
      cb(i) = 0.0;
    }
  }
  // Duals are computed in the sign-flipped system; undo the flips so the
  // result matches the caller's row orientation.
  res.dual = B.transpose().fullPivLu().solve(cb).cwiseProduct(flip);
  return res;
}

}  // namespace pepa
