#pragma once

#include <stdexcept>
#include <string>

namespace teb {

/// Violated precondition: mismatched dimensions, bad arguments, unknown enum values.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values or other numerical breakdown.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed files (bad magic, truncated payloads, unparsable config).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) {
    throw ContractError(what);
  }
}

}  // namespace teb
