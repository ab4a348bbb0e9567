#pragma once

#include <stdexcept>
#include <string>

namespace daft {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Shape or precondition violations (mismatched dimensions, bad arguments).
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Domain violations on values (log of non-positive input, labels out of range).
class ValueError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf detected in a forward pass or gradient; message names the op.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Configuration file problems; message lists every offending key.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// File I/O problems (missing files, checksum mismatch, truncation).
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace daft
