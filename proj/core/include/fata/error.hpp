#pragma once

#include <stdexcept>
#include <string>

namespace fata {

/// Bad user input: malformed schema, spec, CLI arguments or data that does not
/// match the declared layout. The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible persisted state: missing or corrupt checkpoints, vocabulary
/// digest mismatches. The CLI maps this to exit code 3.
class StateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure during training (non-finite loss or gradients).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fata
