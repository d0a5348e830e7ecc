// rvdock: relative-motion and attitude dynamics of a servicer/target pair.
//
// Translational motion is the linearized relative dynamics of the servicer
// about the target's circular orbit, written in the target-centered LVLH
// frame (x radial, y along-track, z completing the triad). Attitude of both
// craft is propagated with body-frame rates and scalar-last quaternions.
// Two quadrature states Lv, Lm accumulate the squared thrust and torque
// magnitudes so energy objectives become terminal-cost evaluations.
#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "rvdock/errors.hpp"
#include "rvdock/quaternion.hpp"

namespace rvdock {

/// Rigid-body data of one craft. Inertia is diagonal in body axes.
struct SpacecraftParams {
  double J11 = 1.0;              ///< kg m^2
  double J22 = 1.0;              ///< kg m^2
  double J33 = 1.0;              ///< kg m^2
  double mass = 1.0;             ///< kg
  Eigen::Vector3d d{0, 0, 0};    ///< docking point, body frame, m
  double r = 0.0;                ///< collision-sphere radius, m
};

/// Circular reference orbit of the target.
struct OrbitParams {
  double a = 1.0;   ///< semi-major axis, m
  double GM = 1.0;  ///< gravitational parameter, m^3/s^2

  /// Mean motion, rad/s (derived, not stored).
  double n() const { return std::sqrt(GM / (a * a * a)); }
};

/// Parameter bundle for the coupled system.
struct SystemParams {
  SpacecraftParams servicer;
  SpacecraftParams target;
  OrbitParams orbit;
};

/// Flat state layout used by the integrator and file formats:
/// [x y z vx vy vz wS1..3 qS1..4 wT1..3 qT1..4 Lv Lm].
inline constexpr int kStateDim = 22;
inline constexpr int kControlDim = 6;
inline constexpr int kAlgebraicDim = 2;

namespace idx {
inline constexpr int rho = 0;
inline constexpr int vel = 3;
inline constexpr int wS = 6;
inline constexpr int qS = 9;
inline constexpr int wT = 13;
inline constexpr int qT = 16;
inline constexpr int Lv = 20;
inline constexpr int Lm = 21;
}  // namespace idx

using StateVec = Eigen::Matrix<double, kStateDim, 1>;

/// Differential state of the pair: 20 dynamic states (relative position and
/// velocity, both crafts' angular velocities and quaternions) plus the two
/// energy quadrature states.
struct SystemState {
  Eigen::Vector3d rho{0, 0, 0};  ///< servicer position relative to target, LVLH, m
  Eigen::Vector3d v{0, 0, 0};    ///< relative velocity, LVLH, m/s
  Eigen::Vector3d wS{0, 0, 0};   ///< servicer body rate, rad/s
  Quaternion qS;                 ///< servicer attitude, body -> LVLH
  Eigen::Vector3d wT{0, 0, 0};   ///< target body rate, rad/s
  Quaternion qT;                 ///< target attitude, body -> LVLH
  double Lv = 0.0;               ///< accumulated squared thrust, N^2 s
  double Lm = 0.0;               ///< accumulated squared torque, (N m)^2 s

  StateVec to_flat() const {
    StateVec x;
    x.segment<3>(idx::rho) = rho;
    x.segment<3>(idx::vel) = v;
    x.segment<3>(idx::wS) = wS;
    x.segment<4>(idx::qS) = qS.coeffs();
    x.segment<3>(idx::wT) = wT;
    x.segment<4>(idx::qT) = qT.coeffs();
    x[idx::Lv] = Lv;
    x[idx::Lm] = Lm;
    return x;
  }

  static SystemState from_flat(const StateVec& x) {
    SystemState s;
    s.rho = x.segment<3>(idx::rho);
    s.v = x.segment<3>(idx::vel);
    s.wS = x.segment<3>(idx::wS);
    s.qS = Quaternion(Eigen::Vector4d(x.segment<4>(idx::qS)));
    s.wT = x.segment<3>(idx::wT);
    s.qT = Quaternion(Eigen::Vector4d(x.segment<4>(idx::qT)));
    s.Lv = x[idx::Lv];
    s.Lm = x[idx::Lm];
    return s;
  }
};

/// Piecewise-constant control: LVLH thrust on the servicer plus body torque.
struct ControlInput {
  Eigen::Vector3d thrust{0, 0, 0};  ///< LVLH frame, N
  Eigen::Vector3d torque{0, 0, 0};  ///< servicer body frame, N m

  Eigen::Matrix<double, kControlDim, 1> to_flat() const {
    Eigen::Matrix<double, kControlDim, 1> u;
    u << thrust, torque;
    return u;
  }

  static ControlInput from_flat(const Eigen::Matrix<double, kControlDim, 1>& u) {
    return {u.head<3>(), u.tail<3>()};
  }
};

/// Algebraic companions of the two quaternion scalar parts in the DAE form.
struct AlgebraicState {
  double lamT = 1.0;  ///< target quaternion scalar part
  double lamS = 1.0;  ///< servicer quaternion scalar part
};

/// Relative translational acceleration about a circular orbit with mean
/// motion n, including the LVLH thrust of the servicer:
///   ax = 2 n vy + 3 n^2 x + ux / m
///   ay = -2 n vx + uy / m
///   az = -n^2 z + uz / m.
inline Eigen::Vector3d hcw_acceleration(const Eigen::Vector3d& rho, const Eigen::Vector3d& v,
                                        const Eigen::Vector3d& thrust_lvlh, double mass,
                                        double n) {
  return {2.0 * n * v[1] + 3.0 * n * n * rho[0] + thrust_lvlh[0] / mass,
          -2.0 * n * v[0] + thrust_lvlh[1] / mass,
          -n * n * rho[2] + thrust_lvlh[2] / mass};
}

/// Euler rigid-body rates for a diagonal inertia under a body torque:
///   dw1 = (w2 w3 (J22 - J33) + m1) / J11   (and cyclic).
inline Eigen::Vector3d gyro_rates(const Eigen::Vector3d& w, const SpacecraftParams& p,
                                  const Eigen::Vector3d& torque) {
  return {(w[1] * w[2] * (p.J22 - p.J33) + torque[0]) / p.J11,
          (w[0] * w[2] * (p.J33 - p.J11) + torque[1]) / p.J22,
          (w[0] * w[1] * (p.J11 - p.J22) + torque[2]) / p.J33};
}

/// Full right-hand side over the flat layout. The target is torque-free.
inline StateVec state_derivative(const StateVec& x, const ControlInput& u,
                                 const SystemParams& p) {
  const double n = p.orbit.n();
  StateVec f;
  f.segment<3>(idx::rho) = x.segment<3>(idx::vel);
  f.segment<3>(idx::vel) = hcw_acceleration(x.segment<3>(idx::rho), x.segment<3>(idx::vel),
                                            u.thrust, p.servicer.mass, n);
  f.segment<3>(idx::wS) = gyro_rates(x.segment<3>(idx::wS), p.servicer, u.torque);
  f.segment<4>(idx::qS) = quat_derivative(Quaternion(Eigen::Vector4d(x.segment<4>(idx::qS))),
                                          x.segment<3>(idx::wS));
  f.segment<3>(idx::wT) = gyro_rates(x.segment<3>(idx::wT), p.target, Eigen::Vector3d::Zero());
  f.segment<4>(idx::qT) = quat_derivative(Quaternion(Eigen::Vector4d(x.segment<4>(idx::qT))),
                                          x.segment<3>(idx::wT));
  f[idx::Lv] = u.thrust.squaredNorm();
  f[idx::Lm] = u.torque.squaredNorm();
  return f;
}

inline StateVec state_derivative(const SystemState& s, const ControlInput& u,
                                 const SystemParams& p) {
  return state_derivative(s.to_flat(), u, p);
}

namespace detail {

/// d(quat_derivative)/dq = Omega(w)/2 into a 4x4 block.
inline Eigen::Matrix4d quat_rate_wrt_q(const Eigen::Vector3d& w) {
  Eigen::Matrix4d M;
  M << 0, w[2], -w[1], w[0],
      -w[2], 0, w[0], w[1],
      w[1], -w[0], 0, w[2],
      -w[0], -w[1], -w[2], 0;
  return 0.5 * M;
}

/// d(quat_derivative)/dw into a 4x3 block.
inline Eigen::Matrix<double, 4, 3> quat_rate_wrt_w(const Eigen::Vector4d& q) {
  Eigen::Matrix<double, 4, 3> M;
  M << q[3], -q[2], q[1],
      q[2], q[3], -q[0],
      -q[1], q[0], q[3],
      -q[0], -q[1], -q[2];
  return 0.5 * M;
}

/// d(gyro_rates)/dw into a 3x3 block.
inline Eigen::Matrix3d gyro_wrt_w(const Eigen::Vector3d& w, const SpacecraftParams& p) {
  Eigen::Matrix3d M;
  M << 0, w[2] * (p.J22 - p.J33) / p.J11, w[1] * (p.J22 - p.J33) / p.J11,
      w[2] * (p.J33 - p.J11) / p.J22, 0, w[0] * (p.J33 - p.J11) / p.J22,
      w[1] * (p.J11 - p.J22) / p.J33, w[0] * (p.J11 - p.J22) / p.J33, 0;
  return M;
}

}  // namespace detail

/// Analytic Jacobian of state_derivative with respect to the state.
inline Eigen::Matrix<double, kStateDim, kStateDim> state_jacobian(const StateVec& x,
                                                                  const ControlInput&,
                                                                  const SystemParams& p) {
  const double n = p.orbit.n();
  Eigen::Matrix<double, kStateDim, kStateDim> J;
  J.setZero();
  J.block<3, 3>(idx::rho, idx::vel).setIdentity();
  J(idx::vel + 0, idx::rho + 0) = 3.0 * n * n;
  J(idx::vel + 0, idx::vel + 1) = 2.0 * n;
  J(idx::vel + 1, idx::vel + 0) = -2.0 * n;
  J(idx::vel + 2, idx::rho + 2) = -n * n;
  J.block<3, 3>(idx::wS, idx::wS) = detail::gyro_wrt_w(x.segment<3>(idx::wS), p.servicer);
  J.block<4, 4>(idx::qS, idx::qS) = detail::quat_rate_wrt_q(x.segment<3>(idx::wS));
  J.block<4, 3>(idx::qS, idx::wS) = detail::quat_rate_wrt_w(x.segment<4>(idx::qS));
  J.block<3, 3>(idx::wT, idx::wT) = detail::gyro_wrt_w(x.segment<3>(idx::wT), p.target);
  J.block<4, 4>(idx::qT, idx::qT) = detail::quat_rate_wrt_q(x.segment<3>(idx::wT));
  J.block<4, 3>(idx::qT, idx::wT) = detail::quat_rate_wrt_w(x.segment<4>(idx::qT));
  return J;
}

/// Unit-norm defect of one craft's quaternion in the DAE form:
/// 1 - (q1^2 + q2^2 + q3^2 + lam^2).
inline double algebraic_residual(const Eigen::Vector3d& qvec, double lam) {
  return 1.0 - (qvec.squaredNorm() + lam * lam);
}

/// LVLH thrust expressed in the servicer body frame: R(qS)^T u.
/// Throws NonUnitQuaternion if qS is not unit within 1e-6.
inline Eigen::Vector3d body_frame_thrust(const Quaternion& qS, const Eigen::Vector3d& thrust_lvlh) {
  return rotation_matrix(qS).transpose() * thrust_lvlh;
}

/// Docking-point position mismatch: rho + R(qS) dS - R(qT) dT.
inline Eigen::Vector3d docking_position_residual(const SystemState& s, const SystemParams& p) {
  return s.rho + rotation_matrix(s.qS) * p.servicer.d - rotation_matrix(s.qT) * p.target.d;
}

/// Docking-point velocity mismatch:
/// rhodot + (R wS) x (R dS) - (R wT) x (R dT), all in LVLH axes.
inline Eigen::Vector3d docking_velocity_residual(const SystemState& s, const SystemParams& p) {
  const RotationMatrix RS = rotation_matrix(s.qS);
  const RotationMatrix RT = rotation_matrix(s.qT);
  return s.v + (RS * s.wS).cross(RS * p.servicer.d) - (RT * s.wT).cross(RT * p.target.d);
}

/// Center-to-center distance, m.
inline double separation_distance(const SystemState& s) { return s.rho.norm(); }

}  // namespace rvdock
