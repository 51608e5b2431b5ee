#pragma once

#include <stdexcept>
#include <string>

namespace irnm {

// Base of every error raised by the library. `code()` is a short
// machine-readable tag used by the CLI error line.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& what)
        : std::runtime_error(what), code_(std::move(code)) {}
    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

// Signals on different grids, vectors of the wrong length.
class AlignmentError : public Error {
public:
    explicit AlignmentError(const std::string& what) : Error("alignment", what) {}
};

// NaN input, negative counts, parameters out of range.
class InvalidInputError : public Error {
public:
    explicit InvalidInputError(const std::string& what) : Error("invalid_input", what) {}
};

// Quadratic model requested outside the domain of the misfit.
class FeasibilityError : public Error {
public:
    explicit FeasibilityError(const std::string& what) : Error("feasibility", what) {}
};

// Quantity requires information that is not available in this mode
// (e.g. the true solution in a blind run).
class UnsupportedModeError : public Error {
public:
    explicit UnsupportedModeError(const std::string& what) : Error("unsupported_mode", what) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

class RangeError : public Error {
public:
    explicit RangeError(const std::string& what) : Error("range", what) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("config", what) {}
};

}  // namespace irnm
