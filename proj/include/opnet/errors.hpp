#pragma once

#include <stdexcept>
#include <string>

namespace opnet {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A precondition on shapes, extents or pyramid structure was violated.
class ContractViolation : public Error {
public:
    using Error::Error;
};

/// Invalid configuration (heads not dividing channels, unknown stage name, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// File could not be opened, read or written.
class IoError : public Error {
public:
    using Error::Error;
};

/// Malformed tensor file header.
class FormatError : public IoError {
public:
    using IoError::IoError;
};

/// Tensor file payload shorter than its header declares.
class LengthError : public IoError {
public:
    using IoError::IoError;
};

/// Non-finite values or divergence during a numerical run.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// An objective returned different values for identical inputs.
class DeterminismError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

}  // namespace opnet
