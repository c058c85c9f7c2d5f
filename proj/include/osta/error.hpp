#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace osta {

/// Malformed file contents. `offset` is the byte position where decoding failed.
class FormatError : public std::runtime_error {
public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

private:
  std::uint64_t offset_;
};

/// An operation was requested on an object whose state does not allow it.
class InvalidState : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

/// A metric has no defined value for the given confusion matrix.
class UndefinedMetric : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

/// Training produced a NaN or Inf.
class NonFiniteError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace osta
