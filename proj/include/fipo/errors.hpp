#pragma once

#include <stdexcept>
#include <string>

namespace fipo {

// Bad arguments handed to a pure operation (length mismatch, token out of range, ...).
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Invalid or unknown configuration keys/values.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite value encountered during a forward/backward pass.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A group whose rewards have zero spread reached the advantage computation.
class DegenerateGroupError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dynamic sampling exhausted its resample budget.
class TrainingStallError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace fipo
