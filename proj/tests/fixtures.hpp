// Canonical test fixture: the tumbling-target docking case used across suites.
#pragma once

#include "rvdock/dynamics.hpp"

namespace testutil {

inline rvdock::SystemParams tumbling_case_params() {
  rvdock::SystemParams p;
  p.servicer.J11 = 1000.0;
  p.servicer.J22 = 2000.0;
  p.servicer.J33 = 1000.0;
  p.servicer.mass = 100.0;
  p.servicer.d = {0.0, 1.01, 0.0};
  p.servicer.r = 1.0;
  p.target = p.servicer;
  p.orbit.a = 7071000.0;
  p.orbit.GM = 3.98e14;
  return p;
}

inline rvdock::SystemState tumbling_case_state() {
  rvdock::SystemState s;
  s.rho = {0.0, -10.0, 0.0};
  s.v = {0.0, 0.0, 0.0};
  s.wS = {0.0, 0.0, 0.0};
  s.qS = rvdock::Quaternion{0, 0, 0, 1};
  s.wT = {0.0, 0.0349, 0.017453};
  s.qT = rvdock::normalize(rvdock::Quaternion{-0.05, 0, 0, 0.99875});
  s.Lv = 0.0;
  s.Lm = 0.0;
  return s;
}

}  // namespace testutil
