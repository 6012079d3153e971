#pragma once

#include <stdexcept>
#include <string>

namespace factorkit {

// Error categories. The CLI maps each one onto a distinct exit code.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A caller violated a documented pre/postcondition (shape mismatch, empty set, ...).
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// An object was used before reaching the required state (e.g. untrained oracle).
struct StateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace factorkit
