// rvdock: error types shared across the library.
#pragma once

#include <optional>
#include <stdexcept>
#include <string>

namespace rvdock {

/// Base class for all rvdock errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// A quaternion argument deviated from unit norm beyond the documented tolerance.
class NonUnitQuaternion : public Error {
 public:
  explicit NonUnitQuaternion(double norm)
      : Error("quaternion norm " + std::to_string(norm) + " deviates from 1 beyond tolerance"),
        norm_(norm) {}
  double norm() const { return norm_; }

 private:
  double norm_;
};

/// A quaternion with norm too small to normalize.
class ZeroQuaternion : public Error {
 public:
  explicit ZeroQuaternion(double norm)
      : Error("quaternion norm " + std::to_string(norm) + " too small to normalize") {}
};

/// Newton iteration inside an implicit integration step exceeded its iteration budget.
class NewtonDivergence : public Error {
 public:
  NewtonDivergence(double residual, int iterations, std::optional<double> time = {})
      : Error("Newton iteration did not reach tolerance (residual " + std::to_string(residual) +
              " after " + std::to_string(iterations) + " iterations" +
              (time ? ", t = " + std::to_string(*time) + " s" : std::string{}) + ")"),
        residual_(residual),
        iterations_(iterations),
        time_(time) {}
  double residual() const { return residual_; }
  int iterations() const { return iterations_; }
  std::optional<double> time() const { return time_; }

 private:
  double residual_;
  int iterations_;
  std::optional<double> time_;
};

/// An integration step produced non-finite values.
class StepRejected : public Error {
 public:
  explicit StepRejected(std::optional<double> time = {})
      : Error("integration step produced non-finite values" +
              (time ? " at t = " + std::to_string(*time) + " s" : std::string{})),
        time_(time) {}
  std::optional<double> time() const { return time_; }

 private:
  std::optional<double> time_;
};

/// A trajectory evaluation could not complete its propagation; wraps the
/// integrator failure that caused it.
class PropagationFailed : public Error {
 public:
  explicit PropagationFailed(const std::string& msg) : Error(msg) {}
};

/// Mismatched dimensions in an array-level interface.
class DimensionMismatch : public Error {
 public:
  explicit DimensionMismatch(const std::string& msg) : Error(msg) {}
};

/// A user-supplied evaluator threw or returned non-finite values.
class EvaluatorFailure : public Error {
 public:
  explicit EvaluatorFailure(const std::string& msg) : Error(msg) {}
};

/// Scenario or trajectory file could not be parsed; carries line and field context.
class ParseError : public Error {
 public:
  ParseError(const std::string& msg, int line, const std::string& field)
      : Error("parse error at line " + std::to_string(line) +
              (field.empty() ? std::string{} : " (field '" + field + "')") + ": " + msg),
        line_(line),
        field_(field) {}
  int line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  int line_;
  std::string field_;
};

/// A scenario violated a validation rule; carries the rule name.
class ValidationError : public Error {
 public:
  ValidationError(const std::string& rule, const std::string& msg)
      : Error("validation rule '" + rule + "' failed: " + msg), rule_(rule) {}
  const std::string& rule() const { return rule_; }

 private:
  std::string rule_;
};

/// File could not be opened, read, or written.
class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace rvdock
