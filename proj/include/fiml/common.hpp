#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace fiml {

// Scalar type of every tensor. Verification builds use 64-bit; the speed
// variant of the library is compiled with FIML_SINGLE_PRECISION.
#ifdef FIML_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, log of non-positive input, diverging inner loops.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed files: bad magic, truncation, checksum mismatch.
class FormatError : public Error {
 public:
  using Error::Error;
};

class UnsupportedVersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace fiml
