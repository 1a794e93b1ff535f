#pragma once

#include <stdexcept>
#include <string>

namespace asyncsteer {

/// Invalid grid or partition dimensions (e.g. more workers than interior rows).
class SizingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A sweep produced or consumed NaN/Inf.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A synchronous run cannot make progress because a halo never arrived.
class StallError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Send or poll on a link that has been closed.
class LinkDownError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Scenario file problems; the message carries the offending line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Malformed wire frame or payload.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace asyncsteer
