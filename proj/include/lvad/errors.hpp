#pragma once

#include <stdexcept>
#include <string>

namespace lvad {

/// Operand shapes are incompatible with the requested operation.
class DimensionError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Argument outside the mathematical domain of a function (log of a
/// non-positive value, arccosh below one, ...).
class DomainError : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

/// A documented precondition of a call was violated by the caller.
class ContractError : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

/// NaN or infinity showed up where a finite value is required.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Neighbourhood aggregate too close to the light cone to normalise.
class DegenerateAggregateError : public NumericError {
public:
  using NumericError::NumericError;
};

class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed feature file, manifest or checkpoint.
class ParseError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class EvaluationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace lvad
