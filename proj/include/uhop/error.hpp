#pragma once

#include <stdexcept>
#include <string>

namespace uhop {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file (triples, examples, checkpoints).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  explicit ParseError(const std::string& what) : Error(what), line_(0) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

/// Transit over a relation the entity does not have.
class TransitError : public Error {
 public:
  using Error::Error;
};

/// Data that parses but violates a contract (non-executable gold path, dims).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Exhaustive enumeration exceeded its configured budget.
class BudgetError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace uhop
