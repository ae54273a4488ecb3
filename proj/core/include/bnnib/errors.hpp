#pragma once

#include <stdexcept>
#include <string>

namespace bnnib {

/// Base of every error the library throws. The CLI maps subclasses onto exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not chain.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// An operation was called in a state that does not support it (e.g. backward without a tape).
class StateError : public Error {
public:
    using Error::Error;
};

/// Malformed external data: IDX files, CSV rows, JSONL logs, dataset caches.
class FormatError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Any other precondition violation on an argument.
class ArgumentError : public Error {
public:
    using Error::Error;
};

}  // namespace bnnib
