// rvdock: dense SQP solver for smooth nonlinear programs.
//
//   min f(z)   s.t.  ceq(z) = 0,  cin(z) >= 0,  lower <= z <= upper
//
// Each iteration linearizes the constraints, builds a convex QP from a
// damped-BFGS model of the Lagrangian Hessian, and globalizes the QP step by
// backtracking on the l1 exact-penalty merit
//   phi(z) = f(z) + mu * (sum |ceq_i| + sum max(0, -cin_i)).
// Powell damping keeps the Hessian model positive definite, and the penalty
// weight is raised whenever it falls below the current multiplier scale, so
// the QP direction stays a descent direction for the merit.
//
// Derivatives are finite differences over a combined evaluator: one call
// yields the objective and every constraint, so a Jacobian column costs a
// single evaluation. Bound rows are appended analytically, never differenced.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <limits>
#include <ostream>
#include <string>

#include "rvdock/errors.hpp"
#include "rvdock/qp.hpp"

namespace rvdock {

/// One-shot evaluation of the objective and all constraint values.
struct NLPEvaluation {
  double objective = 0.0;
  Eigen::VectorXd eq;    ///< must vanish at a feasible point
  Eigen::VectorXd ineq;  ///< must be nonnegative at a feasible point
};

/// Problem statement over a flat decision array. Bound vectors may be empty
/// (unbounded) or sized n with +-infinity marking absent entries.
struct NLPProblem {
  int n = 0;
  int num_eq = 0;
  int num_ineq = 0;
  std::function<NLPEvaluation(const Eigen::VectorXd&)> evaluate;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  /// Optional diagonal seed for the solver's curvature model (empty keeps
  /// the identity). When the objective Hessian is known, starting from it
  /// saves the quasi-Newton update hundreds of iterations of scale-finding.
  Eigen::VectorXd hessian_seed;
  /// Optional per-iteration cap on each step component (empty or infinite
  /// entries leave the component uncapped). Use it for coordinates whose
  /// linearization is only locally valid; the solver adapts the cap within
  /// a bounded factor as full steps succeed or fail.
  Eigen::VectorXd step_bound;
};

enum class GradientMode { ForwardDifference, CentralDifference };

struct SQPSettings {
  double kkt_tol = 1e-6;
  double feas_tol = 1e-8;
  int max_iterations = 100;
  GradientMode gradient = GradientMode::ForwardDifference;
  double fd_step = 0.0;  ///< relative step; 0 selects 1e-7 forward, 1e-5 central
  double armijo_c = 1e-4;
  double backtrack_ratio = 0.5;
  int max_backtracks = 30;
  double bfgs_damping = 0.2;       ///< Powell threshold on s'y / s'Bs
  double penalty_margin = 1.1;     ///< raise mu when below margin * |multipliers|
  double penalty_growth = 2.0;     ///< new mu = growth * |multipliers|
  std::ostream* log = nullptr;     ///< iteration log sink; null silences it
  /// Observability hook, invoked after each accepted step with the updated
  /// Hessian model.
  std::function<void(int iteration, const Eigen::MatrixXd& hessian)> hessian_observer;
};

enum class SQPStatus { Converged, MaxIterations, LineSearchFailure, QPFailure };

inline const char* to_string(SQPStatus s) {
  switch (s) {
    case SQPStatus::Converged: return "converged";
    case SQPStatus::MaxIterations: return "max_iter";
    case SQPStatus::LineSearchFailure: return "linesearch_failure";
    default: return "qp_failure";
  }
}

/// Lagrange multipliers: equality rows, inequality rows, then the variable
/// bounds (sized n, zero where a bound is absent or inactive).
struct Multipliers {
  Eigen::VectorXd eq;
  Eigen::VectorXd ineq;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

struct KKTResiduals {
  double stationarity = std::numeric_limits<double>::infinity();
  double feasibility = std::numeric_limits<double>::infinity();
  double complementarity = std::numeric_limits<double>::infinity();
};

struct SolveReport {
  SQPStatus status = SQPStatus::MaxIterations;
  Eigen::VectorXd z;
  Multipliers multipliers;
  double objective = 0.0;
  double kkt_stationarity = std::numeric_limits<double>::infinity();
  double max_constraint_violation = std::numeric_limits<double>::infinity();
  double complementarity = std::numeric_limits<double>::infinity();
  int iterations = 0;
  int evaluations = 0;
};

namespace detail {

inline double default_fd_step(const SQPSettings& s) {
  if (s.fd_step > 0.0) return s.fd_step;
  return s.gradient == GradientMode::ForwardDifference ? 1e-7 : 1e-5;
}

inline bool finite(const NLPEvaluation& e) {
  return std::isfinite(e.objective) && e.eq.allFinite() && e.ineq.allFinite();
}

/// First-order data at a point: objective gradient and constraint Jacobians
/// of the problem's own rows (bounds are handled analytically elsewhere).
struct FirstOrder {
  Eigen::VectorXd grad;
  Eigen::MatrixXd jac_eq;
  Eigen::MatrixXd jac_ineq;
};

template <typename Eval>
FirstOrder fd_first_order(const Eval& eval, const Eigen::VectorXd& z, const NLPEvaluation& base,
                          const SQPSettings& settings) {
  const int n = static_cast<int>(z.size());
  const double rel = default_fd_step(settings);
  FirstOrder out;
  out.grad.resize(n);
  out.jac_eq.resize(base.eq.size(), n);
  out.jac_ineq.resize(base.ineq.size(), n);
  Eigen::VectorXd zp = z;
  for (int j = 0; j < n; ++j) {
    double h = rel * std::max(1.0, std::abs(z[j]));
    const double zj = z[j];
    volatile double probe = zj + h;
    h = probe - zj;  // exactly representable step
    if (settings.gradient == GradientMode::ForwardDifference) {
      zp[j] = zj + h;
      const NLPEvaluation plus = eval(zp);
      if (!finite(plus)) throw EvaluatorFailure("non-finite forward probe at column " + std::to_string(j));
      out.grad[j] = (plus.objective - base.objective) / h;
      out.jac_eq.col(j) = (plus.eq - base.eq) / h;
      out.jac_ineq.col(j) = (plus.ineq - base.ineq) / h;
    } else {
      zp[j] = zj + h;
      const NLPEvaluation plus = eval(zp);
      zp[j] = zj - h;
      const NLPEvaluation minus = eval(zp);
      if (!finite(plus) || !finite(minus))
        throw EvaluatorFailure("non-finite central probe at column " + std::to_string(j));
      out.grad[j] = (plus.objective - minus.objective) / (2.0 * h);
      out.jac_eq.col(j) = (plus.eq - minus.eq) / (2.0 * h);
      out.jac_ineq.col(j) = (plus.ineq - minus.ineq) / (2.0 * h);
    }
    zp[j] = zj;
  }
  return out;
}

inline double l1_violation(const NLPEvaluation& e) {
  double v = 0.0;
  for (int i = 0; i < e.eq.size(); ++i) v += std::abs(e.eq[i]);
  for (int i = 0; i < e.ineq.size(); ++i) v += std::max(0.0, -e.ineq[i]);
  return v;
}

inline double max_violation(const NLPEvaluation& e) {
  double v = 0.0;
  if (e.eq.size() > 0) v = e.eq.cwiseAbs().maxCoeff();
  if (e.ineq.size() > 0) v = std::max(v, -std::min(0.0, e.ineq.minCoeff()));
  return v;
}

}  // namespace detail

/// Finite-difference gradient of a scalar function, forward or central per
/// the settings, with the relative step rule h_i = fd_step * max(1, |z_i|).
inline Eigen::VectorXd gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                const Eigen::VectorXd& z, const SQPSettings& settings = {}) {
  const auto wrap = [&f](const Eigen::VectorXd& x) {
    NLPEvaluation e;
    e.objective = f(x);
    e.eq.resize(0);
    e.ineq.resize(0);
    return e;
  };
  NLPEvaluation base = wrap(z);
  if (!std::isfinite(base.objective)) throw EvaluatorFailure("non-finite objective at base point");
  return detail::fd_first_order(wrap, z, base, settings).grad;
}

/// KKT residuals at (z, multipliers): stationarity ||grad L||_inf, the worst
/// equality/inequality/bound violation, and max |lambda_i * g_i| over all
/// inequality rows including bounds.
inline KKTResiduals kkt_residuals(const NLPProblem& problem, const Eigen::VectorXd& z,
                                  const Multipliers& mult, const SQPSettings& settings = {}) {
  if (z.size() != problem.n || mult.eq.size() != problem.num_eq ||
      mult.ineq.size() != problem.num_ineq ||
      (mult.lower.size() != 0 && mult.lower.size() != problem.n) ||
      (mult.upper.size() != 0 && mult.upper.size() != problem.n))
    throw DimensionMismatch("kkt_residuals: multiplier sizes disagree with the problem");
  const NLPEvaluation base = problem.evaluate(z);
  if (!detail::finite(base)) throw EvaluatorFailure("non-finite evaluation at z");
  const detail::FirstOrder fo = detail::fd_first_order(problem.evaluate, z, base, settings);

  Eigen::VectorXd gradL = fo.grad;
  if (problem.num_eq > 0) gradL -= fo.jac_eq.transpose() * mult.eq;
  if (problem.num_ineq > 0) gradL -= fo.jac_ineq.transpose() * mult.ineq;
  if (mult.lower.size() > 0) gradL -= mult.lower;
  if (mult.upper.size() > 0) gradL += mult.upper;

  KKTResiduals r;
  r.stationarity = gradL.size() > 0 ? gradL.cwiseAbs().maxCoeff() : 0.0;
  r.feasibility = detail::max_violation(base);
  r.complementarity = 0.0;
  for (int i = 0; i < problem.num_ineq; ++i)
    r.complementarity = std::max(r.complementarity, std::abs(mult.ineq[i] * base.ineq[i]));
  for (int i = 0; i < problem.n; ++i) {
    if (problem.lower.size() > 0 && std::isfinite(problem.lower[i])) {
      r.feasibility = std::max(r.feasibility, problem.lower[i] - z[i]);
      if (mult.lower.size() > 0)
        r.complementarity = std::max(r.complementarity,
                                     std::abs(mult.lower[i] * (z[i] - problem.lower[i])));
    }
    if (problem.upper.size() > 0 && std::isfinite(problem.upper[i])) {
      r.feasibility = std::max(r.feasibility, z[i] - problem.upper[i]);
      if (mult.upper.size() > 0)
        r.complementarity = std::max(r.complementarity,
                                     std::abs(mult.upper[i] * (problem.upper[i] - z[i])));
    }
  }
  return r;
}

namespace detail {

inline void log_header(std::ostream* log) {
  if (!log) return;
  *log << "  iter        objective            merit       step    kkt_stat    max_viol\n";
}

inline void log_row(std::ostream* log, int iter, double f, double merit, double step, double kkt,
                    double viol) {
  if (!log) return;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%6d %16.8e %16.8e %10.3e %11.3e %11.3e\n", iter, f, merit,
                step, kkt, viol);
  *log << buf;
}

}  // namespace detail

inline SolveReport solve(const NLPProblem& problem, const Eigen::VectorXd& z0,
                         const SQPSettings& settings = {}) {
  if (!problem.evaluate) throw DimensionMismatch("solve: problem has no evaluator");
  if (z0.size() != problem.n) throw DimensionMismatch("solve: z0 size disagrees with problem");
  if (settings.kkt_tol <= 0.0 || settings.feas_tol <= 0.0)
    throw ValidationError("tolerance", "kkt_tol and feas_tol must be positive");
  const int n = problem.n;
  const bool has_lower = problem.lower.size() == n;
  const bool has_upper = problem.upper.size() == n;

  SolveReport report;
  Eigen::VectorXd z = z0;
  for (int i = 0; i < n; ++i) {
    if (has_lower) z[i] = std::max(z[i], problem.lower[i]);
    if (has_upper) z[i] = std::min(z[i], problem.upper[i]);
  }

  // Bound rows are appended after the problem's own inequality rows; their
  // Jacobian entries are exact unit vectors.
  std::vector<int> lower_rows, upper_rows;
  if (has_lower)
    for (int i = 0; i < n; ++i)
      if (std::isfinite(problem.lower[i])) lower_rows.push_back(i);
  if (has_upper)
    for (int i = 0; i < n; ++i)
      if (std::isfinite(problem.upper[i])) upper_rows.push_back(i);
  const int mi = problem.num_ineq;
  const int mi_aug = mi + static_cast<int>(lower_rows.size() + upper_rows.size());
  // Step-bounded coordinates get a pair of trust rows appended to each QP
  // (and only to the QP: they are not part of the problem's KKT system).
  std::vector<int> trust_idx;
  if (problem.step_bound.size() == n)
    for (int i = 0; i < n; ++i)
      if (std::isfinite(problem.step_bound[i])) {
        if (problem.step_bound[i] <= 0.0)
          throw ValidationError("step_bound", "entries must be positive or infinite");
        trust_idx.push_back(i);
      }
  const int mi_qp = mi_aug + 2 * static_cast<int>(trust_idx.size());

  const auto eval_checked = [&](const Eigen::VectorXd& x) {
    NLPEvaluation e = problem.evaluate(x);
    ++report.evaluations;
    if (e.eq.size() != problem.num_eq || e.ineq.size() != problem.num_ineq)
      throw DimensionMismatch("solve: evaluator row counts disagree with the problem");
    return e;
  };
  const auto counted = [&](const Eigen::VectorXd& x) {
    ++report.evaluations;
    return problem.evaluate(x);
  };

  NLPEvaluation base = eval_checked(z);
  if (!detail::finite(base)) throw EvaluatorFailure("non-finite evaluation at the initial point");
  detail::FirstOrder fo = detail::fd_first_order(counted, z, base, settings);

  Eigen::MatrixXd B = Eigen::MatrixXd::Identity(n, n);
  if (problem.hessian_seed.size() == n) {
    if (problem.hessian_seed.minCoeff() <= 0.0)
      throw ValidationError("hessian_seed", "diagonal seed entries must be positive");
    B = problem.hessian_seed.asDiagonal();
  } else if (problem.hessian_seed.size() != 0) {
    throw DimensionMismatch("solve: hessian seed size disagrees with the problem");
  }
  double mu = 1.0;
  int mu_excess_streak = 0;
  double trust_factor = 1.0;
  detail::log_header(settings.log);

  const auto fill_report = [&](SQPStatus status, const Multipliers& m, const KKTResiduals& k) {
    report.status = status;
    report.z = z;
    report.multipliers = m;
    report.objective = base.objective;
    report.kkt_stationarity = k.stationarity;
    report.max_constraint_violation = k.feasibility;
    report.complementarity = k.complementarity;
    return report;
  };

  Multipliers mult;
  mult.eq = Eigen::VectorXd::Zero(problem.num_eq);
  mult.ineq = Eigen::VectorXd::Zero(mi);
  mult.lower = Eigen::VectorXd::Zero(n);
  mult.upper = Eigen::VectorXd::Zero(n);

  for (int iter = 1; iter <= settings.max_iterations; ++iter) {
    report.iterations = iter;

    // Augmented inequality system: problem rows, then lower bounds, then
    // upper bounds, then the per-coordinate trust rows |step_i| <= delta_i.
    Eigen::VectorXd cin(mi_qp);
    Eigen::MatrixXd Jin = Eigen::MatrixXd::Zero(mi_qp, n);
    cin.head(mi) = base.ineq;
    Jin.topRows(mi) = fo.jac_ineq;
    int row = mi;
    for (int i : lower_rows) {
      cin[row] = z[i] - problem.lower[i];
      Jin(row, i) = 1.0;
      ++row;
    }
    for (int i : upper_rows) {
      cin[row] = problem.upper[i] - z[i];
      Jin(row, i) = -1.0;
      ++row;
    }
    for (int i : trust_idx) {
      const double delta = trust_factor * problem.step_bound[i];
      cin[row] = delta;
      Jin(row, i) = -1.0;
      ++row;
      cin[row] = delta;
      Jin(row, i) = 1.0;
      ++row;
    }

    // Far from a solution the full constraint correction can be unusable:
    // the linearized rows may be mutually inconsistent (the QP is then
    // infeasible), or consistent only in a sliver whose multipliers are
    // enormous. Either way the remedy is the same: demand only a fraction
    // xi of the correction. Equality targets and violated inequality rows
    // are scaled by xi; satisfied rows keep their full right-hand sides, so
    // a relaxed step never trades feasible rows for infeasible ones, and
    // the set of workable xi is an interval with 0 inside.
    constexpr int kRelaxationProbes = 10;
    constexpr double kRelaxationMargin = 0.9;
    constexpr double kMultiplierCap = 1e5;
    constexpr double kXiFloor = 1e-3;
    Eigen::VectorXd ceq_xi(base.eq.size());
    Eigen::VectorXd cin_xi(cin.size());
    Eigen::MatrixXd Bq = B;
    const auto solve_at = [&](double frac) {
      ceq_xi = frac * base.eq;
      for (Eigen::Index i = 0; i < cin.size(); ++i)
        cin_xi[i] = cin[i] < 0.0 ? frac * cin[i] : cin[i];
      return solve_qp(Bq, fo.grad, fo.jac_eq, ceq_xi, Jin, cin_xi);
    };
    const auto multiplier_inf = [](const QPSolution& s) {
      double m = 0.0;
      if (s.eq_multipliers.size() > 0) m = s.eq_multipliers.cwiseAbs().maxCoeff();
      if (s.ineq_multipliers.size() > 0) m = std::max(m, s.ineq_multipliers.maxCoeff());
      return m;
    };

    QPSolution qp = solve_qp(Bq, fo.grad, fo.jac_eq, base.eq, Jin, cin);
    double xi = 1.0;
    if (qp.status != QPStatus::Optimal) {
      // Numerical breakdown (as opposed to infeasibility) usually means the
      // curvature model has grown ill-conditioned against a near-degenerate
      // active set. A Tikhonov shift restores the solve and keeps the
      // direction a descent direction; infeasible problems are unaffected
      // by it and fall through to the relaxation below.
      const double scale = std::max(B.trace() / n, 1e-12);
      for (double tau : {1e-6, 1e-3, 1.0}) {
        Bq = B + tau * scale * Eigen::MatrixXd::Identity(n, n);
        QPSolution reg = solve_qp(Bq, fo.grad, fo.jac_eq, base.eq, Jin, cin);
        if (reg.status == QPStatus::Optimal) {
          qp = std::move(reg);
          if (settings.log) *settings.log << "      regularized curvature model\n";
          break;
        }
      }
    }
    if (qp.status != QPStatus::Optimal) {
      // Bisect for the upper end of the workable interval, then step a
      // margin inside it: at the supremum the feasible set pinches to
      // measure zero and the multipliers diverge.
      double lo = 0.0;
      double hi = 1.0;
      QPSolution best;
      for (int probe = 0; probe < kRelaxationProbes; ++probe) {
        const double mid = 0.5 * (lo + hi);
        QPSolution trial = solve_at(mid);
        if (trial.status == QPStatus::Optimal) {
          lo = mid;
          best = std::move(trial);
        } else {
          hi = mid;
        }
      }
      if (best.status == QPStatus::Optimal) {
        xi = lo;
        QPSolution interior = solve_at(kRelaxationMargin * lo);
        if (interior.status == QPStatus::Optimal) {
          xi = kRelaxationMargin * lo;
          best = std::move(interior);
        }
        qp = std::move(best);
      }
    }
    if (qp.status == QPStatus::Optimal) {
      // Oversized multipliers signal a nearly degenerate active set. They
      // would poison the penalty parameter and the curvature update, so
      // shrink the demanded correction until they are moderate.
      while (multiplier_inf(qp) > kMultiplierCap && xi > kXiFloor) {
        const double frac = std::max(kXiFloor, 0.5 * xi);
        QPSolution damped = solve_at(frac);
        if (damped.status != QPStatus::Optimal) break;
        qp = std::move(damped);
        xi = frac;
      }
      if (xi < 1.0 && settings.log)
        *settings.log << "      relaxed constraint correction: xi = " << xi << "\n";
    }
    if (qp.status != QPStatus::Optimal) {
      KKTResiduals k;
      k.feasibility = detail::max_violation(base);
      detail::log_row(settings.log, iter, base.objective, base.objective, 0.0, k.stationarity,
                      k.feasibility);
      return fill_report(SQPStatus::QPFailure, mult, k);
    }
    const Eigen::VectorXd& d = qp.x;
    mult.eq = qp.eq_multipliers;
    mult.ineq = qp.ineq_multipliers.head(mi);
    mult.lower.setZero();
    mult.upper.setZero();
    row = mi;
    for (int i : lower_rows) mult.lower[i] = qp.ineq_multipliers[row++];
    for (int i : upper_rows) mult.upper[i] = qp.ineq_multipliers[row++];

    // KKT residuals at the current iterate with the fresh QP multipliers.
    // Trust rows are the solver's own scaffolding, not part of the problem,
    // so they stay out of the stationarity measure; near a solution the
    // step shrinks, the rows go slack, and their multipliers vanish anyway.
    Eigen::VectorXd gradL = fo.grad;
    if (problem.num_eq > 0) gradL -= fo.jac_eq.transpose() * mult.eq;
    gradL -= Jin.topRows(mi_aug).transpose() * qp.ineq_multipliers.head(mi_aug);
    KKTResiduals k;
    k.stationarity = n > 0 ? gradL.cwiseAbs().maxCoeff() : 0.0;
    k.feasibility = detail::max_violation(base);
    for (int i = mi; i < mi_aug; ++i) k.feasibility = std::max(k.feasibility, -cin[i]);
    k.complementarity = 0.0;
    for (int i = 0; i < mi_aug; ++i)
      k.complementarity = std::max(k.complementarity, std::abs(qp.ineq_multipliers[i] * cin[i]));

    const double viol1 = detail::l1_violation(base) +
                         [&] {
                           double v = 0.0;
                           for (int i = mi; i < mi_aug; ++i) v += std::max(0.0, -cin[i]);
                           return v;
                         }();
    if (k.stationarity <= settings.kkt_tol && k.feasibility <= settings.feas_tol &&
        k.complementarity <= settings.kkt_tol) {
      detail::log_row(settings.log, iter, base.objective, base.objective + mu * viol1, 0.0,
                      k.stationarity, k.feasibility);
      return fill_report(SQPStatus::Converged, mult, k);
    }

    // Raise the penalty when the multipliers outgrow it; the l1 merit is an
    // exact penalty only while mu dominates the multiplier scale.
    double lam_inf = 0.0;
    if (mult.eq.size() > 0) lam_inf = mult.eq.cwiseAbs().maxCoeff();
    if (qp.ineq_multipliers.size() > 0)
      lam_inf = std::max(lam_inf, qp.ineq_multipliers.maxCoeff());
    if (mu < settings.penalty_margin * lam_inf) {
      mu = settings.penalty_growth * lam_inf;
      mu_excess_streak = 0;
      if (settings.log) *settings.log << "      penalty parameter -> " << mu << "\n";
    } else if (mu > 100.0 * std::max(1.0, settings.penalty_growth * lam_inf) &&
               k.feasibility <= std::sqrt(settings.feas_tol)) {
      // The converse failure: a penalty inherited from a hard infeasible
      // phase can dwarf the multipliers near the solution. The merit then
      // rejects full steps over curvature-sized violations and progress
      // crawls. Any mu above the multiplier scale keeps the penalty exact,
      // so once the excess persists shrink mu back toward that scale.
      if (++mu_excess_streak >= 5) {
        mu = 10.0 * std::max(1.0, settings.penalty_growth * lam_inf);
        mu_excess_streak = 0;
        if (settings.log) *settings.log << "      penalty parameter -> " << mu << "\n";
      }
    } else {
      mu_excess_streak = 0;
    }

    // A relaxed step removes only the fraction xi of the linearized
    // violation, so the merit model scales the same way. With the penalty
    // rule above this keeps the direction a descent direction for the
    // merit: grad.dot(d) <= -d'Bd + |multipliers|_inf * xi * viol1.
    const double merit = base.objective + mu * viol1;
    const double directional = fo.grad.dot(d) - mu * xi * viol1;

    double alpha = 1.0;
    bool accepted = false;
    bool corrected = false;
    Eigen::VectorXd step = d;
    NLPEvaluation trial;
    bool trial_ok = false;
    const auto merit_at = [&](const Eigen::VectorXd& p, const NLPEvaluation& e) {
      double v = detail::l1_violation(e);
      for (int i : lower_rows) v += std::max(0.0, problem.lower[i] - p[i]);
      for (int i : upper_rows) v += std::max(0.0, p[i] - problem.upper[i]);
      return e.objective + mu * v;
    };
    const auto try_point = [&](const Eigen::VectorXd& cand) {
      trial_ok = false;
      try {
        trial = counted(z + cand);
        trial_ok = detail::finite(trial) && trial.eq.size() == problem.num_eq &&
                   trial.ineq.size() == problem.num_ineq;
      } catch (const EvaluatorFailure&) {
      } catch (const ValidationError&) {
      }
      if (!trial_ok) return false;
      return merit_at(z + cand, trial) <= merit + settings.armijo_c * alpha * directional;
    };
    for (int ls = 0; ls <= settings.max_backtracks; ++ls) {
      step = alpha * d;
      if (try_point(step)) {
        accepted = true;
        break;
      }
      if (ls == 0 && trial_ok) {
        // Along a curved constraint surface the full step overshoots
        // quadratically, and a large penalty turns that overshoot into a
        // rejection even when the direction is sound (the Maratos effect).
        // Before shrinking the step, retarget each constraint from its
        // trial value back to what the linear model promised. The least-norm
        // correction through the base-point Jacobian is itself first order,
        // so iterate it a few times; each round costs one evaluation.
        const Eigen::Index me = base.eq.size();
        const Eigen::VectorXd pred_eq = base.eq + fo.jac_eq * d;
        const Eigen::VectorXd pred_in = base.ineq + fo.jac_ineq * d;
        std::vector<int> fix;
        for (int i = 0; i < mi; ++i)
          if (trial.ineq[i] < std::min(pred_in[i], 0.0)) fix.push_back(i);
        const Eigen::Index rows = me + static_cast<Eigen::Index>(fix.size());
        if (rows > 0) {
          Eigen::MatrixXd A(rows, n);
          Eigen::VectorXd r(rows);
          A.topRows(me) = fo.jac_eq;
          r.head(me) = pred_eq - trial.eq;
          for (std::size_t a = 0; a < fix.size(); ++a) {
            A.row(me + static_cast<Eigen::Index>(a)) = fo.jac_ineq.row(fix[a]);
            r[me + static_cast<Eigen::Index>(a)] =
                std::min(pred_in[fix[a]], 0.0) - trial.ineq[fix[a]];
          }
          const auto normals = A.completeOrthogonalDecomposition();
          Eigen::VectorXd dc = normals.solve(r);
          for (int round = 0; round < 3; ++round) {
            // A correction larger than half the step is no longer second
            // order; the linear model has no authority there, so stop.
            if (dc.norm() > 0.5 * d.norm()) break;
            step = d + dc;
            // The correction ignores the variable box; project back onto it.
            for (int i = 0; i < n; ++i) {
              if (has_lower) step[i] = std::max(step[i], problem.lower[i] - z[i]);
              if (has_upper) step[i] = std::min(step[i], problem.upper[i] - z[i]);
            }
            if (try_point(step)) {
              accepted = true;
              corrected = true;
              break;
            }
            if (!trial_ok) break;
            r.head(me) = pred_eq - trial.eq;
            for (std::size_t a = 0; a < fix.size(); ++a)
              r[me + static_cast<Eigen::Index>(a)] =
                  std::min(pred_in[fix[a]], 0.0) - trial.ineq[fix[a]];
            dc += normals.solve(r);
          }
          if (accepted) break;
        }
      }
      alpha *= settings.backtrack_ratio;
    }
    if (!accepted) {
      detail::log_row(settings.log, iter, base.objective, merit, 0.0, k.stationarity,
                      k.feasibility);
      return fill_report(SQPStatus::LineSearchFailure, mult, k);
    }
    if (corrected && settings.log) *settings.log << "      second-order correction accepted\n";
    detail::log_row(settings.log, iter, base.objective, merit, alpha, k.stationarity,
                    k.feasibility);
    // Trust rows widen while full steps keep being accepted and tighten
    // when the line search has to cut deep; both within a bounded range, so
    // one bad model never freezes the solver and one good stretch never
    // removes the guard entirely.
    if (!trust_idx.empty()) {
      if (alpha == 1.0)
        trust_factor = std::min(trust_factor * 1.6, 64.0);
      else if (alpha <= 0.0625)
        trust_factor = std::max(trust_factor * 0.5, 0.05);
    }

    // Damped BFGS update from the Lagrangian gradient change at fixed
    // multipliers. Bound rows drop out: their gradients are constant.
    Eigen::VectorXd gradL_old = fo.grad;
    if (problem.num_eq > 0) gradL_old -= fo.jac_eq.transpose() * mult.eq;
    if (mi > 0) gradL_old -= fo.jac_ineq.transpose() * mult.ineq;

    const Eigen::VectorXd& s = step;
    z += s;
    base = trial;
    fo = detail::fd_first_order(counted, z, base, settings);

    Eigen::VectorXd gradL_new = fo.grad;
    if (problem.num_eq > 0) gradL_new -= fo.jac_eq.transpose() * mult.eq;
    if (mi > 0) gradL_new -= fo.jac_ineq.transpose() * mult.ineq;

    Eigen::VectorXd y = gradL_new - gradL_old;
    const Eigen::VectorXd Bs = B * s;
    const double sBs = s.dot(Bs);
    double sy = s.dot(y);
    // A secant pair sampled below the differencing resolution measures
    // gradient noise, not curvature; skip the update rather than poison
    // the model with it.
    const double rel = detail::default_fd_step(settings);
    double step_in_probes = 0.0;
    for (int i = 0; i < n; ++i)
      step_in_probes =
          std::max(step_in_probes, std::abs(s[i]) / (rel * std::max(1.0, std::abs(z[i]))));
    if (sBs > 0.0 && step_in_probes >= 10.0) {
      if (sy < settings.bfgs_damping * sBs) {
        const double theta = (1.0 - settings.bfgs_damping) * sBs / (sBs - sy);
        y = theta * y + (1.0 - theta) * Bs;
        sy = s.dot(y);
      }
      if (sy > 1e-14 * sBs) {
        B += y * y.transpose() / sy - Bs * Bs.transpose() / sBs;
        B = 0.5 * (B + B.transpose());
      }
    }
    if (settings.hessian_observer) settings.hessian_observer(iter, B);
  }

  KKTResiduals k;
  k.feasibility = detail::max_violation(base);
  return fill_report(SQPStatus::MaxIterations, mult, k);
}

}  // namespace rvdock
