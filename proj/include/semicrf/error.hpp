#pragma once

#include <stdexcept>
#include <string>

namespace semicrf {

// Raised for malformed inputs: bad files, invariant violations, out-of-range
// arguments. The CLI maps it to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Raised when a requested rank factorization cannot exist.
class InfeasibleError : public std::runtime_error {
 public:
  explicit InfeasibleError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace semicrf
