#pragma once

#include <stdexcept>
#include <string>

namespace drtdiff {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller passed an argument outside the documented domain (bad sizes, ranges).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// An input violates a structural contract (shape mismatch, asymmetric matrix, ...).
class ContractViolation : public Error {
public:
    using Error::Error;
};

/// A computation produced a non-finite value.
class NumericalFailure : public Error {
public:
    using Error::Error;
};

/// A relative-distance denominator vanished; a positive kappa is required.
class SingularityError : public Error {
public:
    using Error::Error;
};

/// Random graph generation could not produce a connected graph.
class ConnectivityFailure : public Error {
public:
    ConnectivityFailure(const std::string& what, int attempts)
        : Error(what), attempts_(attempts) {}
    int attempts() const noexcept { return attempts_; }

private:
    int attempts_;
};

/// An iterative method did not reach its tolerance.
class ToleranceFailure : public Error {
public:
    ToleranceFailure(const std::string& what, double residual)
        : Error(what), residual_(residual) {}
    double residual() const noexcept { return residual_; }

private:
    double residual_;
};

class PartitionInfeasible : public Error {
public:
    using Error::Error;
};

/// Requested iteration/record is not present in the recorded artifacts.
class DataUnavailable : public Error {
public:
    using Error::Error;
};

/// Experiment configuration failed validation; message names the field.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Input file does not follow the expected schema.
class SchemaMismatch : public Error {
public:
    using Error::Error;
};

}  // namespace drtdiff
