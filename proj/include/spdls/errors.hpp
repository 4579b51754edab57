#pragma once

#include <stdexcept>
#include <string>

namespace spdls {

/// Raised when an argument violates a documented precondition
/// (dimension mismatch, non-finite entries, malformed files, ...).
class InvalidInput : public std::invalid_argument {
 public:
  explicit InvalidInput(const std::string& what) : std::invalid_argument(what) {}
};

/// Raised when an iterative numerical kernel breaks down (eigensolver
/// non-convergence, NaN iterates, stalled power iteration).
class NumericFailure : public std::runtime_error {
 public:
  explicit NumericFailure(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace spdls
