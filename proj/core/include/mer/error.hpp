#pragma once

#include <stdexcept>
#include <string>

namespace mer {

// Bad arguments: out-of-range labels, negative lambda, shape mismatches.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Argument outside the mathematical domain of a closed-form relation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Divergence, non-finite values or a root finder that failed to bracket.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file. `line()` is 1-based; 0 when the whole file is at fault.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace mer
