#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace surgagg {

/// Invalid user-facing configuration (bad shapes, unknown names, empty masks).
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

/// Internal precondition broken by the caller (mismatched heads, stale caches).
class ContractViolation : public std::logic_error {
 public:
  explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

/// A NaN or infinity surfaced during training or inference.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, std::ptrdiff_t layer = -1)
      : std::runtime_error(what), layer_(layer) {}

  // -1 when the failure is not tied to a layer (e.g. loss value).
  std::ptrdiff_t layer() const noexcept { return layer_; }

 private:
  std::ptrdiff_t layer_;
};

}  // namespace surgagg
