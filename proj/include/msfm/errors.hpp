#pragma once

#include <stdexcept>
#include <string>

namespace msfm {

/// Malformed or unreadable dataset / checkpoint / config file.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& what)
      : std::runtime_error(what) {}
};

}  // namespace msfm
