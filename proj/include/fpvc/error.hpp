#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace fpvc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input files.
class InputError : public Error {
public:
  using Error::Error;
};

/// A numerical routine could not produce a usable answer.
class NumericalError : public Error {
public:
  using Error::Error;
};

/// An iterative fit stopped at its iteration cap. Carries the objective trace.
class ConvergenceError : public NumericalError {
public:
  ConvergenceError(const std::string& what, std::vector<double> trace)
      : NumericalError(what), trace_(std::move(trace)) {}

  const std::vector<double>& trace() const noexcept { return trace_; }

private:
  std::vector<double> trace_;
};

}  // namespace fpvc
