#pragma once

#include <stdexcept>
#include <string>

namespace faclens {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller-supplied data violated a precondition (bad file, bad labels, bad
/// dims). The CLI maps these to exit code 2.
class InputError : public Error {
public:
    using Error::Error;
};

class DimensionMismatch : public InputError {
public:
    DimensionMismatch(std::size_t expected, std::size_t actual, const std::string& what)
        : InputError(what + ": expected dim " + std::to_string(expected) + ", got " +
                     std::to_string(actual)),
          expected_(expected),
          actual_(actual) {}

    std::size_t expected() const noexcept { return expected_; }
    std::size_t actual() const noexcept { return actual_; }

private:
    std::size_t expected_;
    std::size_t actual_;
};

enum class FormatErrc {
    bad_magic,
    unsupported_version,
    truncated,
    non_finite,
    dim_mismatch,
    duplicate_id,
    invalid_label,
    invalid_header,
    invalid_value,
    trailing_data,
};

const char* to_string(FormatErrc code) noexcept;

/// Malformed or corrupted on-disk artifact (feature file, log-prob file,
/// checkpoint).
class FormatError : public InputError {
public:
    FormatError(FormatErrc code, const std::string& detail)
        : InputError(std::string(to_string(code)) + ": " + detail), code_(code) {}

    FormatErrc code() const noexcept { return code_; }

private:
    FormatErrc code_;
};

}  // namespace faclens
