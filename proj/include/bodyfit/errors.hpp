#pragma once

#include <stdexcept>
#include <string>

namespace bodyfit {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A model or parameter set violates one of its structural invariants.
class InvariantError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class BehindCameraError : public Error {
 public:
  using Error::Error;
};

/// Blended skinning transform is too ill-conditioned to invert.
class DegenerateSkinningError : public Error {
 public:
  using Error::Error;
};

class NotARotationError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class FitError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace bodyfit
