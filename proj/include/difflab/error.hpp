#pragma once

#include <stdexcept>
#include <string>

namespace difflab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A parameter violates an operation's precondition.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Times at or below zero (or below the singular-oracle floor).
class InvalidTime : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

class OutOfRange : public Error {
public:
    using Error::Error;
};

class ShapeMismatch : public Error {
public:
    using Error::Error;
};

/// The operation is not defined for the given distribution or mode.
class Unsupported : public Error {
public:
    using Error::Error;
};

/// A drift, loss or estimate evaluated to NaN/Inf.
class NonFinite : public Error {
public:
    using Error::Error;
};

/// A Monte-Carlo estimate or fit has too little information to be trusted.
class Degenerate : public Error {
public:
    using Error::Error;
};

/// Configuration or file parsing failed.
class ParseError : public Error {
public:
    using Error::Error;
};

}  // namespace difflab
