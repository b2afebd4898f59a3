#pragma once

#include <stdexcept>
#include <string>

namespace sae {

/// Malformed or inconsistent inputs (CLI exit code 2).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Singular systems, invalid moments and similar numerical failures (exit code 3).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An iterative solver ran out of iterations. Carries the last change norm.
class ConvergenceError : public NumericalError {
 public:
  ConvergenceError(const std::string& what, int iterations, double last_change)
      : NumericalError(what), iterations_(iterations), last_change_(last_change) {}
  int iterations() const { return iterations_; }
  double last_change() const { return last_change_; }

 private:
  int iterations_;
  double last_change_;
};

}  // namespace sae
