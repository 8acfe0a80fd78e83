#pragma once

#include <stdexcept>
#include <string>

namespace knnres {

/// Raised when a caller violates an operation's preconditions
/// (shape mismatch, out-of-range parameter).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when input data is malformed: non-finite entries, ragged CSV rows,
/// non-numeric cells.
class InvalidData : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidArgument(what);
}

}  // namespace detail
}  // namespace knnres
