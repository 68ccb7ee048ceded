#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace mfbo {

/// Root of the library's exception hierarchy.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration, malformed input files, or violated preconditions
/// on user-supplied data.
class ConfigError : public Error {
public:
    using Error::Error;
};

class DimensionMismatch : public ConfigError {
public:
    using ConfigError::ConfigError;
};

class UnsupportedDimension : public ConfigError {
public:
    using ConfigError::ConfigError;
};

/// An objective (benchmark, simulator process, curve file) failed to produce
/// a value.
class EvaluationError : public Error {
public:
    explicit EvaluationError(const std::string& what, std::string request_id = {}, std::string diagnostics = {})
        : Error(what), request_id_(std::move(request_id)), diagnostics_(std::move(diagnostics)) {}

    const std::string& request_id() const { return request_id_; }
    /// Captured stderr/stdout tail, exit status, or similar context.
    const std::string& diagnostics() const { return diagnostics_; }

private:
    std::string request_id_;
    std::string diagnostics_;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

/// Gram matrix could not be factorized even after the maximum jitter.
class IllConditionedKernel : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Objective responses carry no variance (sensitivity indices undefined).
class DegenerateObjective : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class InsufficientData : public Error {
public:
    using Error::Error;
};

}  // namespace mfbo
