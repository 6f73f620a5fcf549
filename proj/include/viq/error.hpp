#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace viq {

/// Precondition violated by a caller-supplied value.
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Failure to open, write, or rename a file.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed serialized data. `kind()` tells the failure modes apart.
class ParseError : public std::runtime_error {
public:
    enum class Kind { BadMagic, Truncated, UnknownDtype, Syntax };

    ParseError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

/// Optimisation produced a non-finite loss or gradient.
class TrainingDiagnostic : public std::runtime_error {
public:
    TrainingDiagnostic(const std::string& what, std::size_t epoch, std::size_t batch)
        : std::runtime_error(what + " (epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch) + ")"),
          epoch_(epoch),
          batch_(batch) {}

    std::size_t epoch() const noexcept { return epoch_; }
    std::size_t batch() const noexcept { return batch_; }

private:
    std::size_t epoch_;
    std::size_t batch_;
};

/// Requested family cannot reproduce the source observer's input-output map.
class UnsupportedEmbedding : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

namespace detail {
inline void require(bool cond, const std::string& msg) {
    if (!cond) throw InvalidInput(msg);
}
}  // namespace detail

}  // namespace viq
