#pragma once

#include <stdexcept>
#include <string>

namespace adaptix {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or semantically invalid configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A configuration violates one of the convergence assumptions. `assumption()`
/// carries the id (e.g. "B4.1").
class AssumptionError : public Error {
public:
    AssumptionError(std::string assumption, const std::string& what)
        : Error(assumption + ": " + what), assumption_(std::move(assumption)) {}

    const std::string& assumption() const noexcept { return assumption_; }

private:
    std::string assumption_;
};

/// Numerical failure: non-finite values, solver breakdown, tail bounds.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Dimensions of vectors or matrices do not match the problem wiring.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// No closed form exists for the requested (gate, noise) pair.
class NoClosedFormError : public Error {
public:
    using Error::Error;
};

}  // namespace adaptix
