#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace genspec {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor or image extents.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data or files. Carries the byte offset for file errors.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what, std::size_t offset = npos)
      : Error(offset == npos ? what : what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

 private:
  std::size_t offset_;
};

/// NaN/Inf where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Bad command-line or configuration usage.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace genspec
