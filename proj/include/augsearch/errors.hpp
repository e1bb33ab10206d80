#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace augsearch {

/// Precondition on a caller-supplied argument was violated.
class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A NaN or infinity appeared where a finite value is required.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed on-disk data (datasets, checkpoints, policies, traces).
class FormatError : public std::runtime_error {
public:
    enum class Kind { BadMagic, UnsupportedVersion, Truncated, DimensionMismatch, InvalidLabel, Malformed };

    FormatError(Kind kind, std::size_t offset, const std::string& what)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
          kind_(kind),
          offset_(offset) {}

    FormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }
    std::size_t offset() const noexcept { return offset_; }

private:
    Kind kind_;
    std::size_t offset_ = 0;
};

}  // namespace augsearch
