#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sgml {

// Invalid numeric input to a kernel or loss (zero norm, length mismatch, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// A configuration or spec that violates its documented invariants.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A batch with no positive or no negative pairs where the loss needs both.
class DegenerateBatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed dataset / checkpoint / config file. Carries the 1-based line
// number when the failure is tied to a line (0 otherwise).
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line == 0 ? what
                                     : "line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace sgml
