// rvdock: quaternion attitude representation and kinematics.
//
// Component ordering is [vector; scalar]: q = [q1, q2, q3, q4] with q4 the
// scalar part. Most quaternion libraries are scalar-first; everything in this
// library, including file formats, uses scalar-last.
#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "rvdock/errors.hpp"

namespace rvdock {

using AngularVelocity = Eigen::Vector3d;  ///< body-frame angular velocity, rad/s
using RotationMatrix = Eigen::Matrix3d;   ///< body -> LVLH direction cosine matrix

/// Unit quaternion, scalar-last. Describes the rotation taking body-frame
/// vectors to the LVLH frame via rotation_matrix().
struct Quaternion {
  double q1 = 0.0;
  double q2 = 0.0;
  double q3 = 0.0;
  double q4 = 1.0;

  Quaternion() = default;
  Quaternion(double q1_, double q2_, double q3_, double q4_) : q1(q1_), q2(q2_), q3(q3_), q4(q4_) {}
  explicit Quaternion(const Eigen::Vector4d& v) : q1(v[0]), q2(v[1]), q3(v[2]), q4(v[3]) {}

  Eigen::Vector3d vec() const { return {q1, q2, q3}; }
  Eigen::Vector4d coeffs() const { return {q1, q2, q3, q4}; }
  double norm() const { return std::sqrt(q1 * q1 + q2 * q2 + q3 * q3 + q4 * q4); }
};

/// Quaternion product matching the kinematics convention below: for a pure
/// angular-rate quaternion [w; 0], quat_multiply([w; 0], q) equals the
/// skew-matrix product 2 * quat_derivative(q, w) componentwise.
///
/// Under this convention rotation composition reverses:
///   rotation_matrix(quat_multiply(a, b)) = rotation_matrix(b) * rotation_matrix(a).
inline Quaternion quat_multiply(const Quaternion& a, const Quaternion& b) {
  const Eigen::Vector3d av = a.vec();
  const Eigen::Vector3d bv = b.vec();
  const Eigen::Vector3d v = a.q4 * bv + b.q4 * av + bv.cross(av);
  return {v[0], v[1], v[2], a.q4 * b.q4 - av.dot(bv)};
}

/// Body -> LVLH rotation matrix of a unit quaternion.
/// Throws NonUnitQuaternion if the norm deviates from 1 by more than 1e-6.
inline RotationMatrix rotation_matrix(const Quaternion& q) {
  const double n = q.norm();
  if (std::abs(n - 1.0) > 1e-6) throw NonUnitQuaternion(n);
  RotationMatrix R;
  const double q1 = q.q1, q2 = q.q2, q3 = q.q3, q4 = q.q4;
  R << q1 * q1 - q2 * q2 - q3 * q3 + q4 * q4, 2.0 * (q1 * q2 - q3 * q4), 2.0 * (q1 * q3 + q2 * q4),
      2.0 * (q1 * q2 + q3 * q4), -q1 * q1 + q2 * q2 - q3 * q3 + q4 * q4, 2.0 * (q2 * q3 - q1 * q4),
      2.0 * (q1 * q3 - q2 * q4), 2.0 * (q2 * q3 + q1 * q4), -q1 * q1 - q2 * q2 + q3 * q3 + q4 * q4;
  return R;
}

/// Attitude kinematics: qdot = 1/2 * Omega(w) * q for body-frame rate w, with
///
///   Omega(w) = [   0   w3  -w2  w1 ]
///              [ -w3    0   w1  w2 ]
///              [  w2  -w1    0  w3 ]
///              [ -w1  -w2  -w3   0 ].
///
/// The result is orthogonal to q: q . qdot = 0 identically.
inline Eigen::Vector4d quat_derivative(const Quaternion& q, const AngularVelocity& w) {
  const double w1 = w[0], w2 = w[1], w3 = w[2];
  return 0.5 * Eigen::Vector4d{w3 * q.q2 - w2 * q.q3 + w1 * q.q4,
                               -w3 * q.q1 + w1 * q.q3 + w2 * q.q4,
                               w2 * q.q1 - w1 * q.q2 + w3 * q.q4,
                               -w1 * q.q1 - w2 * q.q2 - w3 * q.q3};
}

/// Rescale to unit norm. Throws ZeroQuaternion if the norm is <= 1e-12.
inline Quaternion normalize(const Quaternion& q) {
  const double n = q.norm();
  if (n <= 1e-12) throw ZeroQuaternion(n);
  return {q.q1 / n, q.q2 / n, q.q3 / n, q.q4 / n};
}

}  // namespace rvdock
