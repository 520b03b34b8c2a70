#pragma once

#include <stdexcept>
#include <string>

namespace mobhfl {

/// Invalid user-supplied configuration (bad key, bad value, violated constraint).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// A call-site contract was violated (dimension mismatch, weight sums off, ...).
struct ContractError : std::logic_error {
    explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

/// A computation produced a non-finite value.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// Operation not defined for the given model kind or input shape.
struct UnsupportedError : std::logic_error {
    explicit UnsupportedError(const std::string& what) : std::logic_error(what) {}
};

/// Markov chain does not mix: runner-up eigenvalue modulus is 1 (or numerically so).
struct NonMixingError : std::runtime_error {
    explicit NonMixingError(const std::string& what) : std::runtime_error(what) {}
};

/// Transition matrix support graph is not irreducible.
struct StructureError : std::runtime_error {
    explicit StructureError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed or incomplete trajectory trace.
struct TraceError : std::runtime_error {
    explicit TraceError(const std::string& what) : std::runtime_error(what) {}
};

/// An edge ended up with zero weight where positive weight is required.
struct DegenerateEdgeError : std::runtime_error {
    explicit DegenerateEdgeError(const std::string& what) : std::runtime_error(what) {}
};

/// Missing or inconsistent series input to an analysis routine.
struct InputError : std::runtime_error {
    explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace mobhfl
