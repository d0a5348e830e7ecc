// rvdock: dense convex quadratic programming by a dual active-set method.
//
// Solves   min  1/2 x^T H x + g^T x
//          s.t. Aeq x + beq  = 0
//               Ain x + bin >= 0
// for symmetric positive definite H. The iteration starts from the
// unconstrained minimizer, which is dual feasible by construction, and adds
// one violated constraint at a time; every iterate satisfies stationarity
// and the multiplier sign conditions, so termination only requires primal
// feasibility. Equalities are installed first and never leave the active set.
//
// Factorization bookkeeping: with H = L L^T and active normals N, the
// operator J = L^{-T} Q satisfies J^T N = [R; 0] with R upper triangular.
// Adding or dropping a constraint updates J and R by Givens rotations in
// O(n^2); only the initial Cholesky costs O(n^3).
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "rvdock/errors.hpp"

namespace rvdock {

enum class QPStatus { Optimal, Infeasible, MaxIterations, NumericalFailure };

inline const char* to_string(QPStatus s) {
  switch (s) {
    case QPStatus::Optimal: return "optimal";
    case QPStatus::Infeasible: return "infeasible";
    case QPStatus::MaxIterations: return "max_iter";
    default: return "numerical";
  }
}

/// Multipliers satisfy H x + g = Aeq^T yeq + Ain^T yin with yin >= 0 and
/// yin complementary to the inequality slacks.
struct QPSolution {
  QPStatus status = QPStatus::NumericalFailure;
  Eigen::VectorXd x;
  Eigen::VectorXd eq_multipliers;
  Eigen::VectorXd ineq_multipliers;
  double objective = 0.0;
  int iterations = 0;
};

namespace detail {

class DualActiveSetQp {
 public:
  DualActiveSetQp(const Eigen::MatrixXd& H, const Eigen::VectorXd& g,
                  const Eigen::MatrixXd& Aeq, const Eigen::VectorXd& beq,
                  const Eigen::MatrixXd& Ain, const Eigen::VectorXd& bin, int max_iter)
      : H_(H), g_(g), n_(static_cast<int>(H.rows())), me_(static_cast<int>(Aeq.rows())),
        mi_(static_cast<int>(Ain.rows())), max_iter_(max_iter) {
    if (H.cols() != n_ || g.size() != n_ || beq.size() != me_ || bin.size() != mi_ ||
        (me_ > 0 && Aeq.cols() != n_) || (mi_ > 0 && Ain.cols() != n_))
      throw DimensionMismatch("qp: matrix shapes disagree");
    A_.resize(me_ + mi_, n_);
    if (me_ > 0) A_.topRows(me_) = Aeq;
    if (mi_ > 0) A_.bottomRows(mi_) = Ain;
    b_.resize(me_ + mi_);
    b_.head(me_) = beq;
    b_.tail(mi_) = bin;
    if (max_iter_ <= 0) max_iter_ = 100 + 10 * (me_ + mi_);
  }

  QPSolution solve() {
    QPSolution out;
    out.eq_multipliers = Eigen::VectorXd::Zero(me_);
    out.ineq_multipliers = Eigen::VectorXd::Zero(mi_);

    Eigen::LLT<Eigen::MatrixXd> llt(H_);
    if (llt.info() != Eigen::Success) return finish(out, QPStatus::NumericalFailure);
    x_ = llt.solve(-g_);
    J_ = Eigen::MatrixXd::Identity(n_, n_);
    llt.matrixU().solveInPlace(J_);
    R_.setZero(n_, n_);
    u_.setZero(n_);
    q_ = 0;
    iters_ = 0;

    // Install the equalities. Nothing blocks in this phase: active equality
    // multipliers are free-signed, so every step is a full step.
    for (int i = 0; i < me_; ++i) {
      double sp = A_.row(i).dot(x_) + b_[i];
      const double sgn = sp > 0.0 ? -1.0 : 1.0;
      const Eigen::VectorXd np = sgn * A_.row(i).transpose();
      sp *= sgn;
      const Eigen::VectorXd d = J_.transpose() * np;
      const double znp = d.tail(n_ - q_).squaredNorm();
      if (znp <= kDepTol * d.squaredNorm()) {
        // Normal lies in the span of the installed equalities: consistent
        // duplicates are skipped, contradictions end the solve.
        if (std::abs(sp) <= kFeasTol * (1.0 + std::abs(b_[i]))) continue;
        return finish(out, QPStatus::Infeasible);
      }
      const Eigen::VectorXd z = J_.rightCols(n_ - q_) * d.tail(n_ - q_);
      const double t = -sp / znp;
      x_ += t * z;
      if (q_ > 0) {
        const Eigen::VectorXd r = solve_r(d);
        u_.head(q_) -= t * r;
      }
      ++iters_;
      if (!add_to_basis(d)) return finish(out, QPStatus::NumericalFailure);
      active_.push_back(i);
      sign_.push_back(sgn);
      u_[q_ - 1] = t;
    }

    // Main loop: pick the worst violated inequality and drive its slack to
    // zero, shedding active constraints whose multipliers would go negative.
    for (;;) {
      int p = -1;
      double worst = 0.0;
      for (int i = me_; i < me_ + mi_; ++i) {
        if (is_active(i)) continue;
        const double s = A_.row(i).dot(x_) + b_[i];
        const double scaled = s / (1.0 + std::abs(b_[i]));
        if (scaled < -kFeasTol && scaled < worst) {
          worst = scaled;
          p = i;
        }
      }
      if (p < 0) {
        for (int j = 0; j < q_; ++j) {
          const int i = active_[j];
          if (i < me_)
            out.eq_multipliers[i] = sign_[j] * u_[j];
          else
            out.ineq_multipliers[i - me_] = u_[j];
        }
        return finish(out, QPStatus::Optimal);
      }

      const Eigen::VectorXd np = A_.row(p).transpose();
      double sp = A_.row(p).dot(x_) + b_[p];
      double up = 0.0;
      for (;;) {
        if (++iters_ > max_iter_) return finish(out, QPStatus::MaxIterations);
        const Eigen::VectorXd d = J_.transpose() * np;
        const double znp = d.tail(n_ - q_).squaredNorm();
        const bool z_zero = znp <= kDepTol * d.squaredNorm();

        Eigen::VectorXd r;
        double t1 = kInf;
        int k = -1;
        if (q_ > 0) {
          r = solve_r(d);
          for (int j = 0; j < q_; ++j) {
            if (active_[j] < me_ || r[j] <= 0.0) continue;
            const double t = std::max(0.0, u_[j] / r[j]);
            if (t < t1) {
              t1 = t;
              k = j;
            }
          }
        }
        if (z_zero && t1 >= kInf) return finish(out, QPStatus::Infeasible);

        if (z_zero) {
          // Step in the dual only: the new normal is dependent on the active
          // set, so trade multiplier mass until a blocker leaves the basis.
          u_.head(q_) -= t1 * r;
          up += t1;
          drop_from_basis(k);
          continue;
        }
        const double t2 = -sp / znp;
        const double t = std::min(t1, t2);
        x_ += t * (J_.rightCols(n_ - q_) * d.tail(n_ - q_));
        sp += t * znp;
        if (q_ > 0) u_.head(q_) -= t * r;
        up += t;
        if (t == t2) {
          if (!add_to_basis(d)) return finish(out, QPStatus::NumericalFailure);
          active_.push_back(p);
          sign_.push_back(1.0);
          u_[q_ - 1] = up;
          break;
        }
        drop_from_basis(k);
      }
    }
  }

 private:
  static constexpr double kInf = std::numeric_limits<double>::infinity();
  static constexpr double kFeasTol = 1e-11;
  static constexpr double kDepTol = 1e-26;  // squared relative dependence cutoff

  bool is_active(int i) const {
    for (int a : active_)
      if (a == i) return true;
    return false;
  }

  Eigen::VectorXd solve_r(const Eigen::VectorXd& d) const {
    return R_.topLeftCorner(q_, q_).triangularView<Eigen::Upper>().solve(d.head(q_));
  }

  void rotate_j_cols(int j, double c, double s) {
    const Eigen::VectorXd a = J_.col(j);
    J_.col(j) = c * a + s * J_.col(j + 1);
    J_.col(j + 1) = -s * a + c * J_.col(j + 1);
  }

  /// Sweep the trailing components of d into d[q_], rotating J to match, and
  /// append d as the new column of R.
  bool add_to_basis(Eigen::VectorXd d) {
    for (int j = n_ - 1; j > q_; --j) {
      if (d[j] == 0.0) continue;
      const double rho = std::hypot(d[j - 1], d[j]);
      const double c = d[j - 1] / rho, s = d[j] / rho;
      d[j - 1] = rho;
      d[j] = 0.0;
      rotate_j_cols(j - 1, c, s);
    }
    if (std::abs(d[q_]) <= kFeasTol * kFeasTol) return false;
    R_.col(q_).head(q_ + 1) = d.head(q_ + 1);
    ++q_;
    return true;
  }

  /// Remove active position k, shift the later columns left, and chase the
  /// resulting subdiagonal of R back to upper triangular form.
  void drop_from_basis(int k) {
    active_.erase(active_.begin() + k);
    sign_.erase(sign_.begin() + k);
    for (int j = k; j < q_ - 1; ++j) u_[j] = u_[j + 1];
    u_[q_ - 1] = 0.0;
    for (int j = k; j < q_ - 1; ++j) R_.col(j).head(q_) = R_.col(j + 1).head(q_);
    --q_;
    R_.col(q_).setZero();
    for (int j = k; j < q_; ++j) {
      if (R_(j + 1, j) == 0.0) continue;
      const double rho = std::hypot(R_(j, j), R_(j + 1, j));
      const double c = R_(j, j) / rho, s = R_(j + 1, j) / rho;
      R_(j, j) = rho;
      R_(j + 1, j) = 0.0;
      for (int col = j + 1; col < q_; ++col) {
        const double r1 = R_(j, col), r2 = R_(j + 1, col);
        R_(j, col) = c * r1 + s * r2;
        R_(j + 1, col) = -s * r1 + c * r2;
      }
      rotate_j_cols(j, c, s);
    }
  }

  QPSolution finish(QPSolution& out, QPStatus status) {
    out.status = status;
    out.x = x_;
    out.iterations = iters_;
    out.objective = x_.size() == n_ ? 0.5 * x_.dot(H_ * x_) + g_.dot(x_) : 0.0;
    return out;
  }

  const Eigen::MatrixXd& H_;
  const Eigen::VectorXd& g_;
  Eigen::MatrixXd A_;
  Eigen::VectorXd b_;
  int n_, me_, mi_, max_iter_;

  Eigen::VectorXd x_, u_;
  Eigen::MatrixXd J_, R_;
  std::vector<int> active_;
  std::vector<double> sign_;
  int q_ = 0;
  int iters_ = 0;
};

}  // namespace detail

/// max_iter <= 0 selects an automatic cap from the constraint count.
inline QPSolution solve_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& g,
                           const Eigen::MatrixXd& Aeq, const Eigen::VectorXd& beq,
                           const Eigen::MatrixXd& Ain, const Eigen::VectorXd& bin,
                           int max_iter = 0) {
  return detail::DualActiveSetQp(H, g, Aeq, beq, Ain, bin, max_iter).solve();
}

}  // namespace rvdock
