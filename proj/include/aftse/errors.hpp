#pragma once

#include <stdexcept>
#include <string>

namespace aftse {

/// Input violates a documented precondition (shape, range, finiteness).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Signal is too short for the requested analysis.
class LengthError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// A loss term evaluated to NaN or Inf. `term()` names the offending term.
class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(std::string term, double value)
      : std::runtime_error("non-finite loss in term '" + term + "': " + std::to_string(value)),
        term_(std::move(term)) {}
  const std::string& term() const noexcept { return term_; }

 private:
  std::string term_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace aftse
