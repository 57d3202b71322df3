#pragma once

#include <stdexcept>
#include <string>

namespace ptrl {

/// Invalid configuration: bad dimensions, unknown mode strings, out-of-range
/// freeze indices, malformed experiment configs. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Dimension mismatch between tensors/vectors at call time.
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

/// Bad user input that is not a config value (non-finite action, empty
/// sample set, ...).
class InputError : public std::runtime_error {
public:
    explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

/// Unreadable, truncated, or wrong-version checkpoint file. Maps to CLI
/// exit code 4.
class CheckpointError : public std::runtime_error {
public:
    explicit CheckpointError(const std::string& what) : std::runtime_error(what) {}
};

/// Source and target networks cannot be bridged (hidden widths differ).
/// Maps to CLI exit code 4.
class IncompatibleTransferError : public std::runtime_error {
public:
    explicit IncompatibleTransferError(const std::string& what)
        : std::runtime_error(what) {}
};

/// Non-finite loss during an update; the current iteration is aborted and
/// metrics collected so far stay valid. Maps to CLI exit code 3.
class DivergenceError : public std::runtime_error {
public:
    explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ptrl
