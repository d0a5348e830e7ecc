// rvdock: scenario-level orchestration. plan() runs the full chain
// (initial guess -> SQP solve -> dense propagation -> verification) and
// returns every artifact even when the solver reports failure. verify()
// recomputes all report quantities directly from the dynamics module at
// every stored substep, independent of solver internals, so it catches
// inter-node violations the transcription cannot see.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "rvdock/dynamics.hpp"
#include "rvdock/errors.hpp"
#include "rvdock/integrator.hpp"
#include "rvdock/nlp.hpp"
#include "rvdock/scenario.hpp"
#include "rvdock/transcription.hpp"

namespace rvdock {

/// Post-solve quality summary. Violations are clamped at zero (0 means the
/// bound holds); the kkt entries are informational copies from the solve
/// and stay zero when the report comes from standalone verification.
struct VerificationReport {
  double docking_pos_residual_norm = 0.0;  ///< m
  double docking_vel_residual_norm = 0.0;  ///< m/s
  double min_separation = 0.0;             ///< m, over every stored substep
  double max_thrust_violation = 0.0;       ///< N, body-frame components vs v_max
  double max_torque_violation = 0.0;       ///< N m, components vs m_max
  double max_quat_norm_drift = 0.0;        ///< max of |norm - 1| over both attitudes
  double kkt_stationarity = 0.0;
  double kkt_feasibility = 0.0;
  double kkt_complementarity = 0.0;
  double tf = 0.0;  ///< s
  double objective = 0.0;

  bool pos_ok = false;
  bool vel_ok = false;
  bool thrust_ok = false;
  bool torque_ok = false;
  bool separation_ok = false;
  bool quat_norm_ok = false;

  bool passed() const {
    return pos_ok && vel_ok && thrust_ok && torque_ok && separation_ok && quat_norm_ok;
  }
};

/// Evaluate the docking residuals, separation, bound violations, and
/// quaternion drift of a stored trajectory against a scenario's tolerances.
/// Feasibility flags use the scenario's sqp.feas_tol; the drift flag uses
/// the fixed 1e-8 integrator contract.
inline VerificationReport verify(const Trajectory& traj, const Scenario& scenario) {
  if (traj.states.empty() || traj.times.size() != traj.states.size())
    throw DimensionMismatch("verify requires a nonempty trajectory with matching times");
  const OCPDefinition& ocp = scenario.ocp;

  VerificationReport r;
  const SystemState& xf = traj.states.back();
  r.docking_pos_residual_norm = docking_position_residual(xf, ocp.params).norm();
  r.docking_vel_residual_norm = docking_velocity_residual(xf, ocp.params).norm();

  r.min_separation = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    const SystemState& s = traj.states[k];
    r.min_separation = std::min(r.min_separation, separation_distance(s));
    r.max_quat_norm_drift = std::max({r.max_quat_norm_drift, std::abs(s.qS.norm() - 1.0),
                                      std::abs(s.qT.norm() - 1.0)});
    if (!traj.controls.empty()) {
      const ControlInput& u = traj.controls[std::min(k, traj.controls.size() - 1)];
      const Eigen::Vector3d b = body_frame_thrust(s.qS, u.thrust);
      r.max_thrust_violation =
          std::max(r.max_thrust_violation, (b.cwiseAbs().array() - ocp.v_max).maxCoeff());
      r.max_torque_violation =
          std::max(r.max_torque_violation, (u.torque.cwiseAbs().array() - ocp.m_max).maxCoeff());
    }
  }
  r.max_thrust_violation = std::max(0.0, r.max_thrust_violation);
  r.max_torque_violation = std::max(0.0, r.max_torque_violation);

  r.tf = traj.times.back();
  r.objective = ocp.weights.w_t * r.tf + ocp.weights.w_v * xf.Lv + ocp.weights.w_m * xf.Lm;

  const double feas = scenario.sqp.feas_tol;
  r.pos_ok = r.docking_pos_residual_norm <= feas;
  r.vel_ok = r.docking_vel_residual_norm <= feas;
  r.thrust_ok = r.max_thrust_violation <= feas;
  r.torque_ok = r.max_torque_violation <= feas;
  r.separation_ok = r.min_separation >= ocp.min_separation - feas;
  r.quat_norm_ok = r.max_quat_norm_drift <= 1e-8;
  return r;
}

/// Wrap the transcription as an NLP over the flat decision array. The only
/// explicit bound keeps the maneuver time at least one second so the time
/// scaling stays well posed; the t_max cap is already an inequality row.
inline NLPProblem make_nlp_problem(const OCPDefinition& ocp) {
  NLPProblem p;
  p.n = 6 * ocp.N + 1;
  p.num_eq = kNumEq;
  p.num_ineq = num_ineq(ocp.N);
  p.lower = Eigen::VectorXd::Constant(p.n, -std::numeric_limits<double>::infinity());
  p.lower[p.n - 1] = 1.0;
  p.evaluate = [ocp](const Eigen::VectorXd& z) {
    try {
      const NLPSample sample = evaluate_all(DecisionVector::from_flat(z, ocp.N), ocp);
      return NLPEvaluation{sample.objective, sample.constraints.eq, sample.constraints.ineq};
    } catch (const PropagationFailed& e) {
      throw EvaluatorFailure(e.what());
    }
  };
  // The energy terms are quadratures of squared controls, so their exact
  // second derivative per control entry is 2 w dt. Seeding the curvature
  // model with it spares the solver from discovering that scale one rank-2
  // update at a time.
  const double dt = ocp.t_max / ocp.N;
  const double thrust_curv = 2.0 * ocp.weights.w_v * dt;
  const double torque_curv = 2.0 * ocp.weights.w_m * dt;
  if (thrust_curv > 0.0 && torque_curv > 0.0) {
    p.hessian_seed.resize(p.n);
    for (int j = 0; j < ocp.N; ++j) {
      p.hessian_seed.segment<3>(6 * j).setConstant(thrust_curv);
      p.hessian_seed.segment<3>(6 * j + 3).setConstant(torque_curv);
    }
    p.hessian_seed[p.n - 1] = 1.0;
  }
  // The final time couples every constraint row to the target's rotation
  // phase, so its linearization has the shortest validity radius of any
  // variable; cap its per-iteration move to a few degrees of phase.
  p.step_bound = Eigen::VectorXd::Constant(p.n, std::numeric_limits<double>::infinity());
  p.step_bound[p.n - 1] = 1.0;
  return p;
}

namespace detail {

/// Kinematic fly-around seed for restarting a stalled cold start. The
/// straight approach from the initial bearing to the docking bearing can be
/// blocked by the keep-out sphere, where linearized steps degenerate into a
/// slack-limited crawl along its surface. This guess carries the servicer on
/// a shrinking arc from its initial bearing to the target port's predicted
/// bearing at t_max, and slews the servicer port onto the reversed docking
/// axis with one smoothstep rotation. Thrust inverts the relative-motion
/// dynamics along the arc, torque inverts the rigid-body dynamics along the
/// slew, both clipped inside their box bounds; the solver does the rest.
inline DecisionVector approach_arc_seed(const OCPDefinition& ocp) {
  DecisionVector seed;
  seed.tf = ocp.t_max;
  seed.u.assign(ocp.N, ControlInput{});
  const double r0 = ocp.x0.rho.norm();
  if (r0 <= ocp.min_separation) return seed;  // already at the sphere; nothing to shape

  // Target port bearing at the final time, from an uncontrolled propagation.
  IntegratorSettings is = ocp.integrator;
  is.substeps_per_interval = std::max(1, static_cast<int>(std::ceil(ocp.t_max / 2.0)));
  const std::vector<ControlInput> coast(1);
  const Trajectory drift = propagate(ocp.x0, coast, ocp.t_max, ocp.params, is);
  const Eigen::Vector3d port_f = rotation_matrix(drift.states.back().qT) * ocp.params.target.d;
  if (port_f.norm() <= 0.0) return seed;

  const Eigen::Vector3d from = ocp.x0.rho / r0;
  const Eigen::Vector3d to = port_f.normalized();
  const double rf = port_f.norm() + ocp.params.servicer.d.norm() + 0.03;
  Eigen::Vector3d axis = from.cross(to);
  const double phi = std::atan2(axis.norm(), from.dot(to));
  axis = axis.norm() > 1e-9 ? Eigen::Vector3d(axis.normalized()) : from.unitOrthogonal();

  // Node positions along the arc with a smoothstep schedule (rest-to-rest),
  // then interval thrusts from the acceleration the path demands beyond the
  // natural drift.
  const int N = ocp.N;
  const double dt = ocp.t_max / N;
  std::vector<Eigen::Vector3d> pos(N + 1), vel(N + 1);
  for (int j = 0; j <= N; ++j) {
    const double tau = static_cast<double>(j) / N;
    const double s = tau * tau * (3.0 - 2.0 * tau);
    pos[j] = (r0 + (rf - r0) * s) * (Eigen::AngleAxisd(phi * s, axis) * from);
  }
  vel[0] = ocp.x0.v;
  vel[N] = (pos[N] - pos[N - 1]) / dt;
  for (int j = 1; j < N; ++j) vel[j] = (pos[j + 1] - pos[j - 1]) / (2.0 * dt);
  const double mass = ocp.params.servicer.mass;
  const double n = ocp.params.orbit.n();
  for (int j = 0; j < N; ++j) {
    const Eigen::Vector3d accel = (vel[j + 1] - vel[j]) / dt;
    const Eigen::Vector3d drift_accel =
        hcw_acceleration(0.5 * (pos[j] + pos[j + 1]), 0.5 * (vel[j] + vel[j + 1]),
                         Eigen::Vector3d::Zero(), mass, n);
    const Eigen::Vector3d thrust = mass * (accel - drift_accel);
    seed.u[j].thrust = thrust.cwiseMax(-0.9 * ocp.v_max).cwiseMin(0.9 * ocp.v_max);
  }

  // One smoothstep slew taking the servicer port onto the reversed docking
  // axis. A rotation about an LVLH-fixed axis has a constant body-frame
  // axis, so the body rate and torque follow from the angle schedule alone.
  const Eigen::Vector3d port_0 = rotation_matrix(ocp.x0.qS) * ocp.params.servicer.d;
  if (port_0.norm() <= 0.0) return seed;
  const Eigen::Vector3d want = -to;
  Eigen::Vector3d slew_axis = (port_0 / port_0.norm()).cross(want);
  const double chi = std::atan2(slew_axis.norm(), (port_0 / port_0.norm()).dot(want));
  slew_axis = slew_axis.norm() > 1e-9 ? Eigen::Vector3d(slew_axis.normalized())
                                      : (port_0 / port_0.norm()).unitOrthogonal();
  const Eigen::Vector3d axis_body = rotation_matrix(ocp.x0.qS).transpose() * slew_axis;
  const Eigen::Vector3d J(ocp.params.servicer.J11, ocp.params.servicer.J22,
                          ocp.params.servicer.J33);
  const double t_rot = 0.7 * ocp.t_max;
  for (int j = 0; j < N; ++j) {
    const double tm = (j + 0.5) * dt;
    if (tm >= t_rot) break;
    const double tau = tm / t_rot;
    const double rate = chi * 6.0 * tau * (1.0 - tau) / t_rot;
    const double accel = chi * (6.0 - 12.0 * tau) / (t_rot * t_rot);
    const Eigen::Vector3d w = rate * axis_body;
    const Eigen::Vector3d torque = J.cwiseProduct(accel * axis_body) + w.cross(J.cwiseProduct(w));
    seed.u[j].torque = torque.cwiseMax(-0.9 * ocp.m_max).cwiseMin(0.9 * ocp.m_max);
  }
  return seed;
}

}  // namespace detail

struct PlanResult {
  DecisionVector decision;
  Trajectory trajectory;
  SolveReport solve;
  VerificationReport verification;
};

/// Full planning chain. The returned trajectory is the dense propagation of
/// the final iterate (converged or not) and the verification report carries
/// the solver's KKT summary alongside the recomputed physical residuals.
inline PlanResult plan(const Scenario& scenario) {
  const OCPDefinition& ocp = scenario.ocp;
  PlanResult result;
  const NLPProblem nlp = make_nlp_problem(ocp);
  result.solve = solve(nlp, initial_guess(ocp).to_flat(), scenario.sqp);
  if (result.solve.status != SQPStatus::Converged) {
    // The zero-control cold start can stall against the keep-out sphere.
    // Retry once from the kinematic fly-around arc; keep whichever attempt
    // ends closer to feasibility.
    if (scenario.sqp.log)
      *scenario.sqp.log << "      cold start did not converge; retrying from the approach arc\n";
    SolveReport retry = solve(nlp, detail::approach_arc_seed(ocp).to_flat(), scenario.sqp);
    if (retry.status == SQPStatus::Converged ||
        retry.max_constraint_violation < result.solve.max_constraint_violation)
      result.solve = std::move(retry);
  }
  result.decision = DecisionVector::from_flat(result.solve.z, ocp.N);
  result.trajectory = time_scaled_propagate(result.decision, ocp);
  result.verification = verify(result.trajectory, scenario);
  result.verification.kkt_stationarity = result.solve.kkt_stationarity;
  result.verification.kkt_feasibility = result.solve.max_constraint_violation;
  result.verification.kkt_complementarity = result.solve.complementarity;
  return result;
}

inline constexpr const char* kTrajectoryHeader =
    "t,x,y,z,vx,vy,vz,wS1,wS2,wS3,qS1,qS2,qS3,qS4,wT1,wT2,wT3,qT1,qT2,qT3,qT4,"
    "Lv,Lm,ux,uy,uz,mx,my,mz,b1,b2,b3";

namespace detail {

inline constexpr int kTrajectoryCols = 32;

/// Index of the ZOH interval whose control acts at node k. The final node
/// belongs to the last interval; pure integer arithmetic so boundary nodes
/// never misattribute.
inline std::size_t interval_of_node(std::size_t k, std::size_t nodes, std::size_t intervals) {
  if (nodes < 2 || intervals == 0) return 0;
  if ((nodes - 1) % intervals != 0)
    throw DimensionMismatch("node count does not tile into the control intervals");
  const std::size_t substeps = (nodes - 1) / intervals;
  return std::min(k / substeps, intervals - 1);
}

inline Eigen::Matrix<double, kTrajectoryCols, 1> trajectory_row(const Trajectory& traj,
                                                                const ControlInput& u,
                                                                std::size_t k) {
  const SystemState& s = traj.states[k];
  Eigen::Matrix<double, kTrajectoryCols, 1> row;
  row << traj.times[k], s.to_flat(), u.to_flat(), body_frame_thrust(s.qS, u.thrust);
  return row;
}

}  // namespace detail

/// Write one CSV row per stored node: time, the 22 states, the ZOH control
/// active on the interval containing that time, and the body-frame thrust.
/// Values use %.17e so a re-read reproduces every double bit-exactly.
inline void export_trajectory(const Trajectory& traj, const std::vector<ControlInput>& controls,
                              const std::string& path) {
  if (traj.states.empty() || controls.empty())
    throw DimensionMismatch("export_trajectory requires states and controls");
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << kTrajectoryHeader << '\n';
  char buf[32];
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    const std::size_t interval = detail::interval_of_node(k, traj.states.size(), controls.size());
    const auto row = detail::trajectory_row(traj, controls[interval], k);
    for (int c = 0; c < detail::kTrajectoryCols; ++c) {
      std::snprintf(buf, sizeof buf, "%.17e", row[c]);
      out << (c ? "," : "") << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("failed while writing '" + path + "'");
}

/// Read a file produced by export_trajectory. The header must match the
/// fixed schema; every row must hold exactly 32 numbers. The body-thrust
/// columns are derived data and are dropped on input.
inline Trajectory import_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trajectory file '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != kTrajectoryHeader)
    throw ParseError("unexpected trajectory header", 1, "");

  Trajectory traj;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    Eigen::Matrix<double, detail::kTrajectoryCols, 1> row;
    std::istringstream cells(line);
    std::string cell;
    for (int c = 0; c < detail::kTrajectoryCols; ++c) {
      if (!std::getline(cells, cell, ','))
        throw ParseError("expected 32 columns", lineno, "");
      std::istringstream value(cell);
      if (!(value >> row[c]) || !(value >> std::ws).eof())
        throw ParseError("expected a number, got '" + cell + "'", lineno, "");
    }
    if (std::getline(cells, cell, ','))
      throw ParseError("expected 32 columns", lineno, "");

    traj.times.push_back(row[0]);
    const SystemState s = SystemState::from_flat(row.segment<22>(1));
    traj.states.push_back(s);
    traj.algebraic.push_back(AlgebraicState{s.qT.q4, s.qS.q4});
    ControlInput u;
    u.thrust = row.segment<3>(23);
    u.torque = row.segment<3>(26);
    traj.controls.push_back(u);
  }
  if (traj.states.empty()) throw ParseError("trajectory file has no data rows", lineno, "");
  return traj;
}

/// Render a report as "key = value" lines with per-check pass/fail marks,
/// mirroring the scenario file syntax so it greps the same way.
inline std::string format_report(const VerificationReport& r) {
  std::ostringstream out;
  char buf[64];
  auto value = [&](const char* key, double v, const char* unit) {
    std::snprintf(buf, sizeof buf, "%-26s = %.6e", key, v);
    out << buf << (unit[0] ? " " : "") << unit;
  };
  auto checked = [&](const char* key, double v, const char* unit, bool ok) {
    value(key, v, unit);
    out << (ok ? "   [pass]" : "   [FAIL]") << '\n';
  };
  checked("docking_pos_residual_norm", r.docking_pos_residual_norm, "m", r.pos_ok);
  checked("docking_vel_residual_norm", r.docking_vel_residual_norm, "m/s", r.vel_ok);
  checked("min_separation", r.min_separation, "m", r.separation_ok);
  checked("max_thrust_violation", r.max_thrust_violation, "N", r.thrust_ok);
  checked("max_torque_violation", r.max_torque_violation, "N m", r.torque_ok);
  checked("max_quat_norm_drift", r.max_quat_norm_drift, "", r.quat_norm_ok);
  value("kkt_stationarity", r.kkt_stationarity, "");
  out << '\n';
  value("kkt_feasibility", r.kkt_feasibility, "");
  out << '\n';
  value("kkt_complementarity", r.kkt_complementarity, "");
  out << '\n';
  value("tf", r.tf, "s");
  out << '\n';
  value("objective", r.objective, "");
  out << '\n';
  std::snprintf(buf, sizeof buf, "%-26s = %s", "overall", r.passed() ? "PASS" : "FAIL");
  out << buf << '\n';
  return out.str();
}

}  // namespace rvdock
