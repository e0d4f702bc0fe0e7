#pragma once

#include <stdexcept>
#include <string>

namespace sgflow {

/// Input violated a documented precondition.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A numerical routine failed (non-convergence, lost definiteness, ...).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Step size too large for the loss-contraction constants to be positive.
class StepSizeError : public NumericError {
 public:
  StepSizeError(const std::string& what, double max_feasible_epsilon)
      : NumericError(what), max_feasible_epsilon_(max_feasible_epsilon) {}

  double max_feasible_epsilon() const noexcept { return max_feasible_epsilon_; }

 private:
  double max_feasible_epsilon_;
};

namespace detail {

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ValidationError(message);
}

}  // namespace detail
}  // namespace sgflow
