#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mot {

/// Base of every error raised by the library. `exit_code()` is the process
/// exit status the CLI reports for it.
class Error : public std::runtime_error {
public:
    virtual const char* kind() const noexcept { return "error"; }
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return 1; }
};

/// Bad configuration, mode/input mismatch, missing script entries.
class ConfigError : public Error {
public:
    const char* kind() const noexcept override { return "config"; }
    using Error::Error;
};

/// A documented precondition was violated by the caller.
class PreconditionError : public Error {
public:
    const char* kind() const noexcept override { return "precondition"; }
    using Error::Error;
};

/// Math domain violation (e.g. entropy of an empty distribution).
class DomainError : public Error {
public:
    const char* kind() const noexcept override { return "domain"; }
    using Error::Error;
};

class InternalError : public Error {
public:
    const char* kind() const noexcept override { return "internal"; }
    using Error::Error;
};

class IoError : public Error {
public:
    const char* kind() const noexcept override { return "io"; }
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

/// Task-file schema violations carry the 1-based line number.
class LoadError : public IoError {
public:
    const char* kind() const noexcept override { return "load"; }
    LoadError(std::size_t line, const std::string& what)
        : IoError("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class FormatError : public IoError {
public:
    const char* kind() const noexcept override { return "format"; }
    using IoError::IoError;
};

class CorruptionError : public IoError {
public:
    const char* kind() const noexcept override { return "corruption"; }
    using IoError::IoError;
};

class BackendError : public Error {
public:
    const char* kind() const noexcept override { return "backend"; }
    using Error::Error;
    int exit_code() const noexcept override { return 3; }
};

/// Transport failure that survived every retry.
class RetriableError : public BackendError {
public:
    const char* kind() const noexcept override { return "retriable"; }
    RetriableError(const std::string& what, int attempts)
        : BackendError(what + " (after " + std::to_string(attempts) + " attempts)"),
          attempts_(attempts) {}
    int attempts() const noexcept { return attempts_; }

private:
    int attempts_;
};

/// The remote answered, but not with something we can decode.
class ProtocolError : public BackendError {
public:
    const char* kind() const noexcept override { return "protocol"; }
    using BackendError::BackendError;
};

} // namespace mot
