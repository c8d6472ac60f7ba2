#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include "pepa/errors.hpp"

// Shared unconstrained smooth minimization utilities. The objectives here
// are small (at most a few dozen variables) and smooth, so a dense BFGS
// with a strong-Wolfe line search covers all outer solves.

namespace pepa {

inline double log_sum_exp(const Eigen::VectorXd& v) {
  const double shift = v.maxCoeff();
  if (!std::isfinite(shift)) return shift;
  return shift + std::log((v.array() - shift).exp().sum());
}

struct SmoothSolveOptions {
  double grad_tol = 1e-9;
  int max_iterations = 500;
  double divergence_bound = 1e6;  // infinity-norm box for the iterates
  double slope_floor = 1e-7;      // gradient level separating divergence
                                  // from slow convergence
};

struct SmoothSolveResult {
  Eigen::VectorXd x;
  double value = std::numeric_limits<double>::quiet_NaN();
  double grad_norm = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  bool converged = false;
  bool diverged = false;
};

// Minimizes eval: double(const VectorXd&, VectorXd& grad) by BFGS.
// `diverged` is set when the iterates leave the divergence box while the
// slope stays above slope_floor, the signature of a minimizer escaping to
// infinity along a recession direction.
template <class F>
SmoothSolveResult bfgs_minimize(F&& eval, Eigen::VectorXd x,
                                const SmoothSolveOptions& opt = {}) {
  const int n = static_cast<int>(x.size());
  SmoothSolveResult res;
  Eigen::VectorXd g(n);
  double f = eval(x, g);
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);

  const double c1 = 1e-4, c2 = 0.9;
  for (int iter = 0; iter < opt.max_iterations; ++iter) {
    res.iterations = iter;
    const double gnorm = n == 0 ? 0.0 : g.cwiseAbs().maxCoeff();
    if (gnorm <= opt.grad_tol) {
      res.converged = true;
      break;
    }
    if (n > 0 && x.cwiseAbs().maxCoeff() > opt.divergence_bound &&
        gnorm > opt.slope_floor) {
      res.diverged = true;
      break;
    }

    Eigen::VectorXd d = -(H * g);
    double dg = d.dot(g);
    if (!(dg < 0)) {  // reset to steepest descent
      H.setIdentity();
      d = -g;
      dg = d.dot(g);
    }

    // Strong Wolfe line search (bracket + zoom).
    const double f0 = f, dg0 = dg;
    double alpha_prev = 0.0, f_prev = f0;
    double alpha = 1.0;
    double alpha_lo = -1, alpha_hi = -1, f_lo = 0;
    bool bracketed = false;
    Eigen::VectorXd x_trial, g_trial(n);
    double f_trial = f0;
    for (int ls = 0; ls < 30; ++ls) {
      x_trial = x + alpha * d;
      f_trial = eval(x_trial, g_trial);
      if (f_trial > f0 + c1 * alpha * dg0 || (ls > 0 && f_trial >= f_prev)) {
        alpha_lo = alpha_prev;
        f_lo = f_prev;
        alpha_hi = alpha;
        bracketed = true;
        break;
      }
      const double dg_trial = g_trial.dot(d);
      if (std::abs(dg_trial) <= -c2 * dg0) break;  // Wolfe satisfied
      if (dg_trial >= 0) {
        alpha_lo = alpha;
        f_lo = f_trial;
        alpha_hi = alpha_prev;
        bracketed = true;
        break;
      }
      alpha_prev = alpha;
      f_prev = f_trial;
      alpha *= 2.0;
    }
    if (bracketed) {
      for (int zoom = 0; zoom < 40; ++zoom) {
        alpha = 0.5 * (alpha_lo + alpha_hi);
        x_trial = x + alpha * d;
        f_trial = eval(x_trial, g_trial);
        if (f_trial > f0 + c1 * alpha * dg0 || f_trial >= f_lo) {
          alpha_hi = alpha;
        } else {
          const double dg_trial = g_trial.dot(d);
          if (std::abs(dg_trial) <= -c2 * dg0) break;
          if (dg_trial * (alpha_hi - alpha_lo) >= 0) alpha_hi = alpha_lo;
          alpha_lo = alpha;
          f_lo = f_trial;
        }
        if (std::abs(alpha_hi - alpha_lo) < 1e-16) break;
      }
    }
    if (!(f_trial < f0)) {
      // Flat to machine precision along d. The gradient is still accurate,
      // so polish on the gradient norm instead of the value.
      const double gnorm0 = g.cwiseAbs().maxCoeff();
      bool polished = false;
      double alpha_try = 1.0;
      for (int k = 0; k < 12 && !polished; ++k, alpha_try *= 0.5) {
        x_trial = x + alpha_try * d;
        f_trial = eval(x_trial, g_trial);
        polished = g_trial.cwiseAbs().maxCoeff() < 0.9 * gnorm0;
      }
      if (!polished) {
        res.converged = gnorm0 <= 10 * opt.grad_tol;
        break;
      }
    }

    const Eigen::VectorXd s = x_trial - x;
    const Eigen::VectorXd y = g_trial - g;
    const double sy = s.dot(y);
    x = x_trial;
    f = f_trial;
    g = g_trial;
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (iter == 0) H *= sy / y.squaredNorm();
      const Eigen::VectorXd Hy = H * y;
      const double yHy = y.dot(Hy);
      H += ((sy + yHy) / (sy * sy)) * (s * s.transpose());
      H -= (Hy * s.transpose() + s * Hy.transpose()) / sy;
    }
  }
  res.x = x;
  res.value = f;
  res.grad_norm = n == 0 ? 0.0 : g.cwiseAbs().maxCoeff();
  if (!res.converged && !res.diverged)
    res.converged = res.grad_norm <= opt.grad_tol;
  return res;
}

// Smallest m in [lo, hi] with acceptable(m) true, assuming monotonicity.
// acceptable(hi) must hold; if acceptable(lo) holds the bracket is
// degenerate and lo is returned.
template <class Pred>
double bisect_smallest_acceptable(Pred&& acceptable, double lo, double hi,
                                  double tol, int max_iterations = 200) {
  if (!(hi >= lo)) throw NonConvergence("empty bisection bracket");
  if (acceptable(lo)) return lo;
  if (!acceptable(hi))
    throw NonConvergence("bisection bracket does not contain the boundary");
  for (int i = 0; i < max_iterations && hi - lo > tol; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (acceptable(mid))
      hi = mid;
    else
      lo = mid;
  }
  return hi;
}

}  // namespace pepa
