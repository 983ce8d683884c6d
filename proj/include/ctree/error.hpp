#pragma once

#include <stdexcept>
#include <string>

namespace ctree {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
public:
    using Error::Error;
};

// Vector whose norm is too small for a direction to be defined.
class DegenerateVector : public InvalidInput {
public:
    using InvalidInput::InvalidInput;
};

class ConfigError : public InvalidInput {
public:
    using InvalidInput::InvalidInput;
};

// A named trace, layer or token that callers asked for does not exist.
class NotFound : public InvalidInput {
public:
    using InvalidInput::InvalidInput;
};

class NumericalFailure : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Malformed on-disk data: bad manifest, blob size mismatch, etc.
class FormatError : public Error {
public:
    using Error::Error;
};

class UnsupportedVersion : public FormatError {
public:
    using FormatError::FormatError;
};

class TransportError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

} // namespace ctree
