#pragma once

#include <stdexcept>
#include <string>

namespace ssnocc {

// Error categories map one-to-one onto the C API status codes.
enum class ErrorKind {
  Parameter,   // invalid argument / out-of-range parameter
  Placement,   // site does not sit on the network
  Data,        // inconsistent or malformed input data
  Numeric,     // factorization or evaluation failure
  Io,          // filesystem problems
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ParameterError : public Error {
 public:
  explicit ParameterError(const std::string& what) : Error(ErrorKind::Parameter, what) {}
};

class PlacementError : public Error {
 public:
  explicit PlacementError(const std::string& what) : Error(ErrorKind::Placement, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

}  // namespace ssnocc
