#pragma once

#include <stdexcept>
#include <string>

namespace metacpr {

// Each error class maps to one CLI exit code (see tools/metacpr.cpp).

/// Malformed or schema-violating configuration. Exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Evaluation protocol violation, e.g. adapt counts overlapping train counts. Exit code 3.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite value in a forward pass, loss, or gradient. Exit code 4.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller broke an operation's precondition (arity, dimension, invariant).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace metacpr
