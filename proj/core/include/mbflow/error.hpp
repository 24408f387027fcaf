#pragma once

#include <stdexcept>
#include <string>

namespace mbflow {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (files, configs, mismatched sizes).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// The optimizer produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int iteration)
      : Error(what), iteration_(iteration) {}
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

}  // namespace mbflow
