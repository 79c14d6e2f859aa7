#pragma once

#include <stdexcept>
#include <string>

namespace dpcalib {

// Error taxonomy mirrored by the CLI exit codes:
//   UsageError -> 1, DataError -> 2, NumericError -> 3.

class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or inconsistent input data (files, shapes, empty sets).
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure: degenerate inputs, diverging optimisation, infeasible
// search brackets.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dpcalib
