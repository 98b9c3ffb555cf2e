#pragma once

#include <stdexcept>
#include <string>

namespace spool {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shape mismatch between operands.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Non-finite values, non-convergence, underflow.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Caller violated a documented precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Input matrix or vector carries no usable direction (all zero, below threshold).
class DegenerateError : public Error {
public:
    using Error::Error;
};

/// A required dataset file is missing or unreadable.
class IngestError : public Error {
public:
    using Error::Error;
};

/// Malformed content inside a dataset file.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Configuration or auxiliary file failed validation.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite loss.
class TrainingError : public Error {
public:
    using Error::Error;
};

} // namespace spool
