#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bbn {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or layer shapes do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// An object was used out of sequence (e.g. backward with foreign activations).
class StateError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameters or experiment settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Dataset contents violate a precondition (bad label, empty class, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or activations during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed binary file. Carries the byte offset where decoding failed.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace bbn
