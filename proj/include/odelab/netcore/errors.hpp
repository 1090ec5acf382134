#pragma once

#include <exception>
#include <optional>
#include <string>
#include <utility>

namespace odelab {

/// Root of the library's exception hierarchy. The message can be extended
/// with context (block index, sample index) while the exception propagates,
/// so the dynamic type survives a `catch (Error& e) { e.add_context(..); throw; }`.
class Error : public std::exception {
 public:
  explicit Error(std::string message) : message_(std::move(message)) {}

  const char* what() const noexcept override { return message_.c_str(); }

  void add_context(const std::string& context) { message_ = context + ": " + message_; }

 private:
  std::string message_;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  explicit NumericError(std::string message, std::optional<int> stage = std::nullopt)
      : Error(std::move(message)), stage_(stage) {}

  /// Runge-Kutta stage that produced the non-finite value, when known.
  std::optional<int> stage() const { return stage_; }

 private:
  std::optional<int> stage_;
};

/// Integrator failures: step budget exhausted or step size collapsed.
class SolverError : public NumericError {
 public:
  using NumericError::NumericError;
};

class BudgetError : public SolverError {
 public:
  using SolverError::SolverError;
};

class StiffnessError : public SolverError {
 public:
  using SolverError::SolverError;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class InitializationError : public Error {
 public:
  using Error::Error;
};

}  // namespace odelab
