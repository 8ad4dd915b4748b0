#pragma once

#include <stdexcept>
#include <string>

namespace sparsecl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid user input: bad model parameters, malformed configs, missing files.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed CSV/JSON input. `line` is 1-based, 0 when unknown.
class ParseError : public ConfigError {
public:
    ParseError(const std::string& what, std::size_t line)
        : ConfigError(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Anything that fails for numerical reasons rather than bad input.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Parameter outside the admissible domain of a score (e.g. |corr| reaching 1).
class DomainError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Penalized criterion unbounded or non-unique: lambda <= eta on a singular J.
class IllPosedError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Active-set system numerically singular.
class ConditioningError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class CyclingError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Zero trace / zero variance inputs.
class DegenerateError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class RootFindingError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Singular sensitivity or variability matrix.
class InferenceError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class UnsupportedModelError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

}  // namespace sparsecl
