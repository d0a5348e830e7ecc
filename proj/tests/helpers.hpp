// Shared test utilities: seeded random generators and independent oracles.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "rvdock/quaternion.hpp"

namespace testutil {

inline std::mt19937& rng() {
  static std::mt19937 gen(0x5eedu);
  return gen;
}

inline double uniform(double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  return d(rng());
}

inline Eigen::Vector3d random_vec3(double scale = 1.0) {
  return {uniform(-scale, scale), uniform(-scale, scale), uniform(-scale, scale)};
}

inline rvdock::Quaternion random_unit_quaternion() {
  std::normal_distribution<double> d(0.0, 1.0);
  Eigen::Vector4d v{d(rng()), d(rng()), d(rng()), d(rng())};
  while (v.norm() < 1e-3) v = {d(rng()), d(rng()), d(rng()), d(rng())};
  v.normalize();
  return rvdock::Quaternion(v);
}

/// Independent rotation oracle: Rodrigues formula from the axis-angle
/// decomposition of a unit quaternion (scalar-last).
inline Eigen::Vector3d rodrigues_rotate(const rvdock::Quaternion& q, const Eigen::Vector3d& v) {
  const Eigen::Vector3d qv = q.vec();
  const double s = qv.norm();
  if (s < 1e-14) return v;
  const Eigen::Vector3d k = qv / s;
  const double angle = 2.0 * std::atan2(s, q.q4);
  const double c = std::cos(angle), sn = std::sin(angle);
  return v * c + k.cross(v) * sn + k * (k.dot(v)) * (1.0 - c);
}

}  // namespace testutil
