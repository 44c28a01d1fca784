// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef VTN_ERRORS_HPP_
#define VTN_ERRORS_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vtn {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameters, layer configuration or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Bad labels or sample data.
class DataError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. calling backward on a non-scalar.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Non-finite values during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed binary file. `offset` is the byte position where decoding failed.
class ParseError : public IoError {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : IoError(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace vtn

#endif  // VTN_ERRORS_HPP_
