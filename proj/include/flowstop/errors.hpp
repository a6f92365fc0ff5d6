#pragma once

#include <stdexcept>
#include <string>

namespace flowstop {

// Bad input or violated precondition. CLI exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

// Index or prefix length outside its admissible range.
class RangeError : public std::out_of_range {
 public:
  explicit RangeError(const std::string& what) : std::out_of_range(what) {}
};

// Missing, unreadable, or malformed artifact on disk. CLI exit code 2.
class ArtifactError : public std::runtime_error {
 public:
  explicit ArtifactError(const std::string& what) : std::runtime_error(what) {}
};

// Packet arrived with a timestamp earlier than the previous one in its flow.
class OrderingError : public std::runtime_error {
 public:
  explicit OrderingError(const std::string& what) : std::runtime_error(what) {}
};

// Internal invariant broken. CLI exit code 3.
class InvariantError : public std::logic_error {
 public:
  explicit InvariantError(const std::string& what) : std::logic_error(what) {}
};

}  // namespace flowstop
