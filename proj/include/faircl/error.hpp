#pragma once

#include <stdexcept>
#include <string>

namespace faircl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes incompatible with an operation.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// NaN or Inf produced at an operation boundary.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Class, domain or head index outside its valid range.
class IndexError : public Error {
public:
    using Error::Error;
};

/// Malformed user input: configs, manifests, label values.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// API misuse: preconditions the caller was responsible for.
class ContractError : public Error {
public:
    using Error::Error;
};

}  // namespace faircl
