#pragma once

#include <stdexcept>
#include <string>

namespace ccm {

// Base type for every structured error the library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Operand shapes do not conform for a kernel or an interface.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Math-domain violation: log of a non-positive value, temperature <= 0,
// momentum ratio outside [0,1], label out of range, and the like.
class DomainError : public Error {
public:
    using Error::Error;
};

// Invalid run or dataset configuration, including malformed config files
// and unknown config keys.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Missing, unreadable, truncated, or mismatched files.
class IoError : public Error {
public:
    using Error::Error;
};

// Operation not legal in the current state (empty queue, vacuous loss set).
class StateError : public Error {
public:
    using Error::Error;
};

}  // namespace ccm
