#pragma once

#include <stdexcept>
#include <string>

namespace sgu {

// Violated precondition or malformed argument. CLI maps this to exit code 2.
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite value produced by an otherwise well-formed computation. Exit code 3.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed file contents (CSV, checkpoint, config). Exit code 2.
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

// Iterative solver failed to reach its tolerance within the iteration cap. Exit code 3.
class SolverError : public std::runtime_error {
 public:
  explicit SolverError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace sgu
