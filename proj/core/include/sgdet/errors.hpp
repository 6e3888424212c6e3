#pragma once

#include <stdexcept>
#include <string>

namespace sgdet {

/// Shapes of operands do not agree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A hyperparameter or structural setting is invalid (group counts, K >= L, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A caller broke a precondition of an operation.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Input data is well-formed but semantically inconsistent.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A file does not follow its expected on-disk layout.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A computation produced NaN or infinity.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sgdet
