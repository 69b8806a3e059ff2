#pragma once

#include <stdexcept>
#include <string>

namespace lvseg {

/// Raised when an input object or file violates a validation rule. The rule
/// name is a stable identifier that the CLI and HTTP service surface verbatim.
class ValidationError : public std::runtime_error {
 public:
  ValidationError(std::string rule, const std::string& detail)
      : std::runtime_error(rule + ": " + detail), rule_(std::move(rule)) {}

  const std::string& rule() const noexcept { return rule_; }

 private:
  std::string rule_;
};

/// A deformation lost Jacobian positivity (composition, chained propagation).
class RegistrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lvseg
