#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gc {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Precondition broken by the caller (wrong tape, bad argument combination).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Raised when a forward pass or training step produces NaN/Inf.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what, std::string where = {})
      : Error(what), where_(std::move(where)) {}
  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed binary input. `offset` is the byte position where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// Checkpoint payload does not match its recorded checksum or length.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace gc
