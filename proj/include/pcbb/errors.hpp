#ifndef PCBB_ERRORS_HPP
#define PCBB_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace pcbb {

// Rejected or malformed caller input (bad ranges, unknown kinds, parse failures).
struct InvalidInputError : std::invalid_argument {
    explicit InvalidInputError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Tensor/layer dimension mismatch; message names both shapes.
struct ShapeError : std::invalid_argument {
    explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Coder-level failure: invalid table, stack underflow, exhausted payload.
struct CodecError : std::runtime_error {
    explicit CodecError(const std::string& msg) : std::runtime_error(msg) {}
};

// Serialized artifact does not match the expected layout or hash.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite value or invalid numeric parameter encountered.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Operation invoked in the wrong lifecycle order (e.g. backward before forward).
struct StateError : std::logic_error {
    explicit StateError(const std::string& msg) : std::logic_error(msg) {}
};

// Filesystem-level failure.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Mutually inconsistent configuration (depth mismatch, mixed batches).
struct ConfigError : std::invalid_argument {
    explicit ConfigError(const std::string& msg) : std::invalid_argument(msg) {}
};

}  // namespace pcbb

#endif  // PCBB_ERRORS_HPP
