#pragma once

#include <stdexcept>
#include <string>

namespace sketchime {

/// Base for every error raised by the library. `exit_code()` is the CLI
/// process status the error maps to.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 2; }
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class EmptySketchError : public Error {
 public:
  using Error::Error;
};

class DegenerateSketchError : public Error {
 public:
  using Error::Error;
};

class CapacityError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration, spec file, plan or shape mismatch.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class LabelError : public Error {
 public:
  using Error::Error;
};

class ImportError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values in inputs, activations or losses.
class NumericError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

}  // namespace sketchime
