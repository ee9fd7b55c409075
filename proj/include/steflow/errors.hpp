#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace steflow {

/// Malformed file header or record layout.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Data that parses but violates a domain invariant. Carries the offending
/// record index when one applies.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what, std::size_t index = npos)
      : std::runtime_error(what), index_(index) {}
  std::size_t index() const { return index_; }
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

 private:
  std::size_t index_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// API misuse (uninitialized state, inconsistent alignment, bad flag combos).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A metric that has no value for the given input (e.g. an empty mask).
class MetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class ConversionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace steflow
