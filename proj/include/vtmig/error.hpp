#pragma once

#include <stdexcept>
#include <string>

namespace vtmig {

/// Bad input: malformed files, invalid configuration, violated preconditions
/// on user-supplied data. The CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace vtmig
