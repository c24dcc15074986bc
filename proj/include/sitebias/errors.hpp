#pragma once

#include <stdexcept>
#include <string>

namespace sitebias {

/// Base of every error the library raises. `exit_code()` is the stable
/// process exit status the command-line tool maps it to.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return 1; }
};

/// Bad argument or violated precondition.
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// Input data violates a domain invariant (non-finite feature, duplicate id, ...).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Malformed text input; carries the 1-based line number.
class ParseError : public ValidationError {
public:
    ParseError(std::size_t line, const std::string& what)
        : ValidationError("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Malformed binary file (bad magic, truncation).
class FormatError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// File missing, unreadable or unwritable.
class IoError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

/// Non-finite values or a singular system encountered during computation.
class NumericalError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 3; }
};

/// A metric is undefined for the given input (e.g. AUC with no scorable class).
class UndefinedMetricError : public Error {
public:
    using Error::Error;
};

}  // namespace sitebias
