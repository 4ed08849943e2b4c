#pragma once

#include <stdexcept>
#include <string>

namespace vdcnet {

// Base of every error raised by the library. The CLI maps subclasses to exit
// codes: config/usage 1, data/io 2, numeric 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NoPillarFound : public DataError {
 public:
  using DataError::DataError;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class UnsupportedArchitecture : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

}  // namespace vdcnet
