#pragma once

#include <stdexcept>
#include <string>

namespace dsmm {

// Shape disagreement between tensors; `axis` names the offending dimension.
class DimensionError : public std::invalid_argument {
 public:
  DimensionError(std::string axis, const std::string& what)
      : std::invalid_argument(what), axis_(std::move(axis)) {}
  const std::string& axis() const { return axis_; }

 private:
  std::string axis_;
};

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised by the trainer when the loss stops being finite.
class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or unreadable files. `offset` is the byte position where parsing
// stopped, or -1 when not applicable.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, long long offset = -1)
      : std::runtime_error(what), offset_(offset) {}
  long long offset() const { return offset_; }

 private:
  long long offset_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dsmm
