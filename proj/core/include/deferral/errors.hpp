#pragma once

#include <stdexcept>
#include <string>

namespace deferral {

// Bad caller-supplied data: malformed files, contract violations, missing
// prerequisites. The CLI maps these to exit code 1.
class InputError : public std::runtime_error {
public:
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or contradictory record content. Carries the 1-based line
// number when known (0 otherwise).
class ParseError : public InputError {
public:
  explicit ParseError(const std::string& msg, int line = 0)
      : InputError(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg),
        line_(line) {}

  int line() const noexcept { return line_; }

private:
  int line_ = 0;
};

class IoError : public InputError {
public:
  using InputError::InputError;
};

// Precondition failures of fitting operations (degenerate labels, too few
// records, constant scores, ...).
class FitError : public InputError {
public:
  using InputError::InputError;
};

// Broken internal invariant. The CLI maps these to exit code 2.
class InvariantError : public std::logic_error {
public:
  explicit InvariantError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace deferral
