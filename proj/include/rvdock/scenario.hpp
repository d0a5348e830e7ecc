// rvdock: scenario files, the human-readable problem definitions the CLI runs.
//
// Format: line-oriented structured text. '#' starts a comment, blank lines
// are skipped, '[section]' opens a section, and 'key = value' assigns within
// it. Vector values are whitespace-separated components. Unknown sections or
// keys are rejected with the offending line, as are missing required keys.
//
// Validation happens after parsing and enforces three named rules:
//   positivity       - physical constants, bounds, tolerances, counts > 0
//   quaternion_norm  - initial quaternions within 1e-3 of unit length
//                      (then renormalized exactly)
//   safety_radius    - each craft's docking point lies outside its safety
//                      sphere: r > 0 and |d| > r
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rvdock/errors.hpp"
#include "rvdock/nlp.hpp"
#include "rvdock/transcription.hpp"

namespace rvdock {

struct Scenario {
  std::string name;
  std::string description;
  OCPDefinition ocp;
  SQPSettings sqp;
};

namespace detail {

struct ScenarioValue {
  std::string text;
  int line = 0;
  bool used = false;
};

class ScenarioFields {
 public:
  void insert(const std::string& section, const std::string& key, const std::string& text,
              int line) {
    const std::string full = section.empty() ? key : section + "." + key;
    if (values_.count(full)) throw ParseError("duplicate key", line, full);
    values_[full] = {text, line, false};
  }

  bool has(const std::string& full) const { return values_.count(full) > 0; }

  const ScenarioValue& require(const std::string& full) {
    auto it = values_.find(full);
    if (it == values_.end()) throw ParseError("missing required key", 0, full);
    it->second.used = true;
    return it->second;
  }

  const ScenarioValue* optional(const std::string& full) {
    auto it = values_.find(full);
    if (it == values_.end()) return nullptr;
    it->second.used = true;
    return &it->second;
  }

  void reject_unused() const {
    for (const auto& [key, value] : values_)
      if (!value.used) throw ParseError("unknown key", value.line, key);
  }

 private:
  std::map<std::string, ScenarioValue> values_;
};

inline std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

inline double parse_double(const ScenarioValue& v, const std::string& field) {
  std::istringstream in(v.text);
  double x = 0.0;
  if (!(in >> x) || !(in >> std::ws).eof())
    throw ParseError("expected a number, got '" + v.text + "'", v.line, field);
  return x;
}

inline int parse_int(const ScenarioValue& v, const std::string& field) {
  std::istringstream in(v.text);
  int x = 0;
  if (!(in >> x) || !(in >> std::ws).eof())
    throw ParseError("expected an integer, got '" + v.text + "'", v.line, field);
  return x;
}

template <int K>
Eigen::Matrix<double, K, 1> parse_vec(const ScenarioValue& v, const std::string& field) {
  std::istringstream in(v.text);
  Eigen::Matrix<double, K, 1> x;
  for (int i = 0; i < K; ++i)
    if (!(in >> x[i]))
      throw ParseError("expected " + std::to_string(K) + " components", v.line, field);
  if (!(in >> std::ws).eof())
    throw ParseError("expected " + std::to_string(K) + " components", v.line, field);
  return x;
}

inline void parse_craft(ScenarioFields& f, const std::string& section, SpacecraftParams& craft) {
  const Eigen::Vector3d J = parse_vec<3>(f.require(section + ".J"), section + ".J");
  craft.J11 = J[0];
  craft.J22 = J[1];
  craft.J33 = J[2];
  craft.mass = parse_double(f.require(section + ".mass"), section + ".mass");
  craft.d = parse_vec<3>(f.require(section + ".d"), section + ".d");
  craft.r = parse_double(f.require(section + ".r"), section + ".r");
}

inline void check_positive(const std::string& what, double value) {
  if (!(value > 0.0) || !std::isfinite(value))
    throw ValidationError("positivity", what + " must be positive, got " + std::to_string(value));
}

inline void check_craft(const std::string& which, const SpacecraftParams& craft) {
  check_positive(which + " J11", craft.J11);
  check_positive(which + " J22", craft.J22);
  check_positive(which + " J33", craft.J33);
  check_positive(which + " mass", craft.mass);
  if (!(craft.r > 0.0) || !(craft.d.norm() > craft.r))
    throw ValidationError("safety_radius", which + " docking point must lie outside the safety "
                                           "sphere: need 0 < r < |d|");
}

inline Quaternion checked_unit(const std::string& which, const Eigen::Vector4d& q) {
  const double norm = q.norm();
  if (std::abs(norm - 1.0) > 1e-3)
    throw ValidationError("quaternion_norm",
                          which + " norm " + std::to_string(norm) + " is not within 1e-3 of 1");
  return Quaternion(Eigen::Vector4d(q / norm));
}

}  // namespace detail

/// Checks the named validation rules and renormalizes the initial attitudes.
inline void validate_scenario(Scenario& s) {
  using detail::check_positive;
  check_positive("orbit.a", s.ocp.params.orbit.a);
  check_positive("orbit.GM", s.ocp.params.orbit.GM);
  detail::check_craft("servicer", s.ocp.params.servicer);
  detail::check_craft("target", s.ocp.params.target);
  check_positive("v_max", s.ocp.v_max);
  check_positive("m_max", s.ocp.m_max);
  check_positive("t_max", s.ocp.t_max);
  check_positive("min_separation", s.ocp.min_separation);
  if (s.ocp.N < 1) throw ValidationError("positivity", "N must be at least 1");
  if (s.ocp.integrator.substeps_per_interval < 1)
    throw ValidationError("positivity", "substeps_per_interval must be at least 1");
  check_positive("newton_tol", s.ocp.integrator.newton_tol);
  if (s.ocp.integrator.max_newton_iter < 1)
    throw ValidationError("positivity", "max_newton_iter must be at least 1");
  check_positive("kkt_tol", s.sqp.kkt_tol);
  check_positive("feas_tol", s.sqp.feas_tol);
  if (s.sqp.max_iterations < 1)
    throw ValidationError("positivity", "max_iterations must be at least 1");
  if (s.ocp.weights.w_t < 0.0 || s.ocp.weights.w_v < 0.0 || s.ocp.weights.w_m < 0.0)
    throw ValidationError("positivity", "objective weights must be nonnegative");

  s.ocp.x0.qS = detail::checked_unit("initial_state.qS", s.ocp.x0.qS.coeffs());
  s.ocp.x0.qT = detail::checked_unit("initial_state.qT", s.ocp.x0.qT.coeffs());
}

inline Scenario parse_scenario(std::istream& in) {
  detail::ScenarioFields fields;
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError("unterminated section header", lineno, "");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ParseError("empty section name", lineno, "");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", lineno, "");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError("empty key", lineno, "");
    fields.insert(section, key, value, lineno);
  }

  using detail::parse_double;
  using detail::parse_int;
  using detail::parse_vec;
  Scenario s;
  s.name = fields.require("name").text;
  if (const auto* v = fields.optional("description")) s.description = v->text;

  s.ocp.params.orbit.a = parse_double(fields.require("orbit.a"), "orbit.a");
  s.ocp.params.orbit.GM = parse_double(fields.require("orbit.GM"), "orbit.GM");
  detail::parse_craft(fields, "servicer", s.ocp.params.servicer);
  detail::parse_craft(fields, "target", s.ocp.params.target);

  auto state_vec3 = [&](const char* key) { return parse_vec<3>(fields.require(key), key); };
  s.ocp.x0.rho = state_vec3("initial_state.rho");
  s.ocp.x0.v = state_vec3("initial_state.v");
  s.ocp.x0.wS = state_vec3("initial_state.wS");
  s.ocp.x0.qS = Quaternion(parse_vec<4>(fields.require("initial_state.qS"), "initial_state.qS"));
  s.ocp.x0.wT = state_vec3("initial_state.wT");
  s.ocp.x0.qT = Quaternion(parse_vec<4>(fields.require("initial_state.qT"), "initial_state.qT"));
  s.ocp.x0.Lv = 0.0;
  s.ocp.x0.Lm = 0.0;

  s.ocp.weights.w_t = parse_double(fields.require("problem.w_t"), "problem.w_t");
  s.ocp.weights.w_v = parse_double(fields.require("problem.w_v"), "problem.w_v");
  s.ocp.weights.w_m = parse_double(fields.require("problem.w_m"), "problem.w_m");
  s.ocp.v_max = parse_double(fields.require("problem.v_max"), "problem.v_max");
  s.ocp.m_max = parse_double(fields.require("problem.m_max"), "problem.m_max");
  s.ocp.t_max = parse_double(fields.require("problem.t_max"), "problem.t_max");
  s.ocp.min_separation =
      parse_double(fields.require("problem.min_separation"), "problem.min_separation");
  s.ocp.N = parse_int(fields.require("problem.N"), "problem.N");

  if (const auto* v = fields.optional("integrator.substeps_per_interval"))
    s.ocp.integrator.substeps_per_interval = parse_int(*v, "integrator.substeps_per_interval");
  if (const auto* v = fields.optional("integrator.newton_tol"))
    s.ocp.integrator.newton_tol = parse_double(*v, "integrator.newton_tol");
  if (const auto* v = fields.optional("integrator.max_newton_iter"))
    s.ocp.integrator.max_newton_iter = parse_int(*v, "integrator.max_newton_iter");
  if (const auto* v = fields.optional("integrator.jacobian")) {
    if (v->text == "analytic")
      s.ocp.integrator.jacobian_mode = JacobianMode::Analytic;
    else if (v->text == "finite_difference")
      s.ocp.integrator.jacobian_mode = JacobianMode::FiniteDifference;
    else
      throw ParseError("expected 'analytic' or 'finite_difference'", v->line,
                       "integrator.jacobian");
  }

  if (const auto* v = fields.optional("sqp.kkt_tol")) s.sqp.kkt_tol = parse_double(*v, "sqp.kkt_tol");
  if (const auto* v = fields.optional("sqp.feas_tol"))
    s.sqp.feas_tol = parse_double(*v, "sqp.feas_tol");
  if (const auto* v = fields.optional("sqp.max_iterations"))
    s.sqp.max_iterations = parse_int(*v, "sqp.max_iterations");
  if (const auto* v = fields.optional("sqp.fd_step")) s.sqp.fd_step = parse_double(*v, "sqp.fd_step");
  if (const auto* v = fields.optional("sqp.gradient")) {
    if (v->text == "forward")
      s.sqp.gradient = GradientMode::ForwardDifference;
    else if (v->text == "central")
      s.sqp.gradient = GradientMode::CentralDifference;
    else
      throw ParseError("expected 'forward' or 'central'", v->line, "sqp.gradient");
  }

  fields.reject_unused();
  validate_scenario(s);
  return s;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario file '" + path + "'");
  return parse_scenario(in);
}

}  // namespace rvdock
