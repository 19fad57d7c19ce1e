// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace naturalize {

enum class ErrorCode {
  InvalidArgument = 1,
  Dimension = 2,
  Io = 3,
  Format = 4,
  Numeric = 5,
  State = 6,
  Internal = 7,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Shape/axis mismatches. Message names the offending axes.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what)
      : Error(ErrorCode::Dimension, what) {}
};

// API misuse: consumed tape, untrained model, non-scalar loss, ...
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what)
      : Error(ErrorCode::State, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what)
      : Error(ErrorCode::Numeric, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorCode::Io, what) {}
};

// Bad magic bytes, version mismatch, truncated/corrupt files.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what)
      : Error(ErrorCode::Format, what) {}
};

}  // namespace naturalize
