#pragma once

#include <stdexcept>
#include <string>

namespace chmm {

// Invalid model inputs: bad dimensions, broken invariants, unknown names.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// File or schema problems while reading external data.
class LoadError : public ValidationError {
 public:
  explicit LoadError(const std::string& msg) : ValidationError(msg) {}
};

// Non-finite values or other numeric breakdown during evaluation.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad command line or run configuration.
class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace chmm
