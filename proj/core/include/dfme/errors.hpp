#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dfme {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or dimension disagreement between tensors/networks.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Operation called in a state that does not admit it (e.g. backward before
// forward, sampling from an empty replay).
class StateError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value or combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Numeric input outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Hard-label-only operation invoked in soft-label mode or vice versa.
class ModeError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A query would push the ledger past its budget. Carries the number of
// victim inputs that could still be afforded.
class BudgetExhausted : public Error {
 public:
  explicit BudgetExhausted(std::int64_t remaining_)
      : Error("query budget exhausted, remaining=" + std::to_string(remaining_)),
        remaining(remaining_) {}

  std::int64_t remaining;
};

}  // namespace dfme
