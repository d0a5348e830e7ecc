// rvdock: direct single-shooting transcription of the docking problem.
//
// Decision vector (6N + 1 scalars): the N zero-order-hold controls, 6 scalars
// each (thrust x,y,z then torque x,y,z), followed by the free final time.
// The objective is the Mayer form w_t*tf + w_v*Lv(tf) + w_m*Lm(tf) over the
// propagated trajectory.
//
// Constraint vector layout (all rows >= 0 when feasible, equalities == 0):
//   eq   (6 rows): docking position residual (3), docking velocity
//                  residual (3), both at the terminal node.
//   ineq (13 rows per control-grid node j = 0..N, then one final row):
//     v_max - b1, v_max + b1, v_max - b2, v_max + b2, v_max - b3, v_max + b3
//         where b = R(qS_j)^T u_j.thrust is the body-frame thrust,
//     m_max - m1, m_max + m1, m_max - m2, m_max + m2, m_max - m3, m_max + m3
//         where m = u_j.torque,
//     separation_distance(node j) - min_separation;
//     final row: t_max - tf.
// Node j uses the servicer attitude at grid node j and the control of
// interval min(j, N-1). The infinity-norm bounds are decomposed into the
// +-component rows above to stay differentiable.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <vector>

#include "rvdock/dynamics.hpp"
#include "rvdock/errors.hpp"
#include "rvdock/integrator.hpp"

namespace rvdock {

/// Nonnegative objective weights: maneuver time, thrust energy, torque energy.
struct Weights {
  double w_t = 0.0;
  double w_v = 1.0;
  double w_m = 1.0;
};

/// The finite-dimensional optimal control problem: initial state, weights,
/// bounds, control grid size, plant parameters, and integration settings.
struct OCPDefinition {
  SystemState x0;
  Weights weights;
  double v_max = 0.1;           ///< body-frame thrust component bound, N
  double m_max = 1.0;           ///< body torque component bound, N m
  double t_max = 420.0;         ///< maneuver time upper bound, s
  double min_separation = 2.0;  ///< center-to-center keep-out distance, m
  int N = 50;                   ///< control intervals
  SystemParams params;
  IntegratorSettings integrator;
};

/// Controls on the N intervals plus the free final time.
struct DecisionVector {
  std::vector<ControlInput> u;
  double tf = 0.0;

  int size() const { return 6 * static_cast<int>(u.size()) + 1; }

  Eigen::VectorXd to_flat() const {
    Eigen::VectorXd z(size());
    for (std::size_t i = 0; i < u.size(); ++i) z.segment<6>(6 * i) = u[i].to_flat();
    z[z.size() - 1] = tf;
    return z;
  }

  static DecisionVector from_flat(const Eigen::VectorXd& z, int N) {
    if (z.size() != 6 * N + 1)
      throw DimensionMismatch("decision vector has " + std::to_string(z.size()) +
                              " scalars, expected " + std::to_string(6 * N + 1));
    DecisionVector d;
    d.u.resize(N);
    for (int i = 0; i < N; ++i) d.u[i] = ControlInput::from_flat(z.segment<6>(6 * i));
    d.tf = z[z.size() - 1];
    return d;
  }
};

/// Equality rows first, then the documented inequality rows.
struct ConstraintVector {
  Eigen::VectorXd eq;
  Eigen::VectorXd ineq;
};

inline constexpr int kNumEq = 6;
inline constexpr int kIneqPerNode = 13;

/// Inequality row count for an N-interval grid: 13(N+1) node rows + 1 for tf.
inline int num_ineq(int N) { return kIneqPerNode * (N + 1) + 1; }

/// Propagate the decision vector's controls from the problem's initial state
/// over [0, tf] (the free final time enters as a pure scaling of the step
/// size, so this is the change of variables to the fixed unit interval).
inline Trajectory time_scaled_propagate(const DecisionVector& z, const OCPDefinition& ocp) {
  if (static_cast<int>(z.u.size()) != ocp.N)
    throw DimensionMismatch("decision vector has " + std::to_string(z.u.size()) +
                            " controls, expected " + std::to_string(ocp.N));
  try {
    return propagate(ocp.x0, z.u, z.tf, ocp.params, ocp.integrator);
  } catch (const NewtonDivergence& e) {
    throw PropagationFailed(e.what());
  } catch (const StepRejected& e) {
    throw PropagationFailed(e.what());
  }
}

namespace detail {

inline double objective_of(const Trajectory& traj, const DecisionVector& z,
                           const OCPDefinition& ocp) {
  const SystemState& xf = traj.states.back();
  return ocp.weights.w_t * z.tf + ocp.weights.w_v * xf.Lv + ocp.weights.w_m * xf.Lm;
}

inline ConstraintVector constraints_of(const Trajectory& traj, const DecisionVector& z,
                                       const OCPDefinition& ocp) {
  ConstraintVector c;
  c.eq.resize(kNumEq);
  const SystemState& xf = traj.states.back();
  c.eq.head<3>() = docking_position_residual(xf, ocp.params);
  c.eq.tail<3>() = docking_velocity_residual(xf, ocp.params);

  c.ineq.resize(num_ineq(ocp.N));
  const int substeps = ocp.integrator.substeps_per_interval;
  int row = 0;
  for (int j = 0; j <= ocp.N; ++j) {
    const SystemState& s = traj.states[static_cast<std::size_t>(j) * substeps];
    const ControlInput& u = z.u[std::min(j, ocp.N - 1)];
    const Eigen::Vector3d b = body_frame_thrust(s.qS, u.thrust);
    for (int i = 0; i < 3; ++i) {
      c.ineq[row++] = ocp.v_max - b[i];
      c.ineq[row++] = ocp.v_max + b[i];
    }
    for (int i = 0; i < 3; ++i) {
      c.ineq[row++] = ocp.m_max - u.torque[i];
      c.ineq[row++] = ocp.m_max + u.torque[i];
    }
    c.ineq[row++] = separation_distance(s) - ocp.min_separation;
  }
  c.ineq[row] = ocp.t_max - z.tf;
  return c;
}

}  // namespace detail

/// Objective, constraints, and the underlying trajectory from one propagation.
struct NLPSample {
  double objective = 0.0;
  ConstraintVector constraints;
  Trajectory trajectory;
};

inline NLPSample evaluate_all(const DecisionVector& z, const OCPDefinition& ocp) {
  NLPSample s;
  s.trajectory = time_scaled_propagate(z, ocp);
  s.objective = detail::objective_of(s.trajectory, z, ocp);
  s.constraints = detail::constraints_of(s.trajectory, z, ocp);
  return s;
}

inline double evaluate_objective(const DecisionVector& z, const OCPDefinition& ocp) {
  return detail::objective_of(time_scaled_propagate(z, ocp), z, ocp);
}

inline ConstraintVector evaluate_constraints(const DecisionVector& z, const OCPDefinition& ocp) {
  return detail::constraints_of(time_scaled_propagate(z, ocp), z, ocp);
}

/// Deterministic cold start: all controls zero, final time at its upper bound.
inline DecisionVector initial_guess(const OCPDefinition& ocp) {
  DecisionVector z;
  z.u.assign(ocp.N, ControlInput{});
  z.tf = ocp.t_max;
  return z;
}

}  // namespace rvdock
