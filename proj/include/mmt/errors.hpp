#pragma once

#include <stdexcept>
#include <string>

namespace mmt {

// Shape or index disagreement between tensors / configs.
class DimensionError : public std::invalid_argument {
 public:
  explicit DimensionError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Bad records, malformed files, out-of-range fields.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Missing or unreadable/unwritable files.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

// An operation produced a non-finite value.
class NumericalError : public ValidationError {
 public:
  explicit NumericalError(const std::string& msg) : ValidationError(msg) {}
};

// A softmax row whose mask admits no entries.
class DegenerateRowError : public std::invalid_argument {
 public:
  explicit DegenerateRowError(const std::string& msg)
      : std::invalid_argument(msg) {}
};

}  // namespace mmt
