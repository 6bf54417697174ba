#pragma once

#include <stdexcept>
#include <string>

namespace gnnflavors {

// Error taxonomy used across the library. Everything derives from
// std::runtime_error so callers that do not care can catch one type.

// Operand shapes do not conform (matmul inner dims, broadcast, ...).
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

// Input values outside the mathematical domain of an operation.
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error("domain error: " + msg) {}
};

// An API contract was violated (backward on a non-scalar, loss not on tape, ...).
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error("contract error: " + msg) {}
};

// Non-finite values appeared at an operation boundary.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

// A stated precondition does not hold (e.g. gradcheck input sits on an
// activation kink). Distinct from ContractError so callers can resample.
struct PreconditionError : std::runtime_error {
    explicit PreconditionError(const std::string& msg)
        : std::runtime_error("precondition error: " + msg) {}
};

// File parsing / serialization problems, with location diagnostics in msg.
struct LoadError : std::runtime_error {
    explicit LoadError(const std::string& msg) : std::runtime_error("load error: " + msg) {}
};

}  // namespace gnnflavors
