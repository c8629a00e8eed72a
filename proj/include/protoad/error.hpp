#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace protoad {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated (shape, range, finiteness).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Operand dimensions disagree (feature C vs bank C, map vs mask shape).
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A binary file has a malformed header or body.
class FormatError : public Error {
public:
    FormatError(const std::string& message, std::uint64_t offset)
        : Error(message + " (at byte " + std::to_string(offset) + ")"),
          message_(message), offset_(offset) {}

    /// Message without the offset suffix.
    const std::string& message() const noexcept { return message_; }
    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::string message_;
    std::uint64_t offset_;
};

/// A binary file ended before its declared payload.
class TruncationError : public FormatError {
public:
    using FormatError::FormatError;
};

class UnsupportedVersion : public FormatError {
public:
    using FormatError::FormatError;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace protoad
