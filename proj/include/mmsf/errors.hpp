#pragma once

#include <stdexcept>
#include <string>

namespace mmsf {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operands have incompatible shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A scalar argument or configuration value is out of its admissible range.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// An input violates a documented precondition (orthonormality, purity, rank).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Iteration produced non-finite values or a required inverse does not exist.
class NumericalFailure : public Error {
 public:
  using Error::Error;
};

/// A pair matrix used for whitening has numerical rank below k.
class RankDeficiency : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

/// Rank-test thresholds cannot satisfy tau1 > tau2 for the given perturbation.
class InfeasibleThresholds : public ArgumentError {
 public:
  using ArgumentError::ArgumentError;
};

/// The rank test accepted no resource node, so the tensor stage has no input.
class NoPureNodes : public NumericalFailure {
 public:
  NoPureNodes() : NumericalFailure("no pure nodes detected") {}
  using NumericalFailure::NumericalFailure;
};

/// Malformed input file; carries the 1-based line number when known.
class ParseError : public ArgumentError {
 public:
  ParseError(const std::string& what, long line)
      : ArgumentError(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}

  long line() const noexcept { return line_; }

 private:
  long line_;
};

}  // namespace mmsf
