#pragma once

#include <stdexcept>
#include <string>

namespace aggfilter {

/// Malformed input: bad dimensions, non-stochastic rows, out-of-range indices.
class InvalidArgument : public std::invalid_argument {
 public:
  explicit InvalidArgument(const std::string& what) : std::invalid_argument(what) {}
};

/// The evidence has zero likelihood under the model at some timestep.
class InfeasibleEvidence : public std::runtime_error {
 public:
  explicit InfeasibleEvidence(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {
inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidArgument(msg);
}
}  // namespace detail

}  // namespace aggfilter
