#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mpcl {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Violated precondition: bad shape, out-of-range argument, inconsistent config.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Input for which the requested quantity is undefined (zero-norm vector,
/// constant rank vector, no negatives in a batch).
class DegenerateInput : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

/// NaN/Inf encountered in inputs, losses or gradients.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Malformed dataset or evaluation file. `line()` is 1-based, 0 when unknown.
class DataError : public Error {
public:
    DataError(const std::string& what, std::string source = {}, std::size_t line = 0)
        : Error(format(what, source, line)), source_(std::move(source)), line_(line) {}

    const std::string& source() const noexcept { return source_; }
    std::size_t line() const noexcept { return line_; }

private:
    static std::string format(const std::string& what, const std::string& source, std::size_t line) {
        if (source.empty()) return what;
        if (line == 0) return source + ": " + what;
        return source + ":" + std::to_string(line) + ": " + what;
    }

    std::string source_;
    std::size_t line_;
};

class CheckpointError : public Error {
public:
    enum class Kind { io, magic, version, truncated, checksum, shape };

    CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

}  // namespace mpcl
