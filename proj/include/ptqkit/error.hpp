#pragma once

#include <stdexcept>
#include <string>

namespace ptqkit {

/// Broad failure classes; the CLI maps each one to its exit code.
enum class ErrorCategory { io, format, math };

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

struct IoError : Error {
    explicit IoError(const std::string& what) : Error(ErrorCategory::io, what) {}
};

struct FormatError : Error {
    explicit FormatError(const std::string& what) : Error(ErrorCategory::format, what) {}
};

/// Shapes that do not line up.
struct DimensionError : Error {
    explicit DimensionError(const std::string& what) : Error(ErrorCategory::math, what) {}
};

/// Precondition or postcondition of an operation violated by its inputs.
struct ContractError : Error {
    explicit ContractError(const std::string& what) : Error(ErrorCategory::math, what) {}
};

/// Division by zero, log of a nonpositive value, overflow.
struct DomainError : Error {
    explicit DomainError(const std::string& what) : Error(ErrorCategory::math, what) {}
};

struct CalibrationError : Error {
    explicit CalibrationError(const std::string& what) : Error(ErrorCategory::math, what) {}
};

/// upper == lower on some channel; callers widen with widen_degenerate().
struct DegenerateRangeError : Error {
    explicit DegenerateRangeError(const std::string& what) : Error(ErrorCategory::math, what) {}
};

}  // namespace ptqkit
