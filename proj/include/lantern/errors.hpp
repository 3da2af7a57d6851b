#pragma once

#include <stdexcept>
#include <string>

namespace lantern {

// Invalid inputs, malformed files, violated data invariants. The CLI maps
// this to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// I/O and environment failures. The CLI maps this to exit code 3.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace lantern
