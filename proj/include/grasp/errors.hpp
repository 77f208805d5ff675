#pragma once

#include <stdexcept>
#include <string>

namespace grasp {

// Base class for everything thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Mismatched matrix/vector dimensions.
struct ShapeError : Error {
    using Error::Error;
};

// Invalid argument or precondition violation (bad config values,
// out-of-range token ids, empty inputs).
struct ValidationError : Error {
    using Error::Error;
};

// Problems with corpora or other input data.
struct DataError : Error {
    using Error::Error;
};

// Non-finite values or failed numerical procedures.
struct NumericError : Error {
    using Error::Error;
};

// Iterative method hit its iteration cap before reaching tolerance.
struct ConvergenceError : NumericError {
    ConvergenceError(const std::string& what, double residual)
        : NumericError(what), residual(residual) {}
    double residual;
};

// Bad run configuration (CLI / config file level).
struct ConfigError : Error {
    using Error::Error;
};

// Requested compression ratio cannot be reached even when every layer
// is replaced. Carries the best ratio that is achievable.
struct InfeasibleRatioError : ConfigError {
    InfeasibleRatioError(const std::string& what, double max_achievable)
        : ConfigError(what), max_achievable(max_achievable) {}
    double max_achievable;
};

// Checkpoint I/O failures, each with a distinct type so callers can branch.
struct IoError : Error {
    using Error::Error;
};

struct CheckpointVersionError : IoError {
    using IoError::IoError;
};

struct CheckpointTruncatedError : IoError {
    using IoError::IoError;
};

struct CheckpointChecksumError : IoError {
    CheckpointChecksumError(const std::string& what, std::string tensor)
        : IoError(what), tensor(std::move(tensor)) {}
    std::string tensor;
};

}  // namespace grasp
