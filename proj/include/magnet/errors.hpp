#pragma once

#include <stdexcept>
#include <string>

namespace magnet {

// Error taxonomy shared by every module. Each maps to one failure class so
// callers (CLI, service) can translate them into exit codes / error replies.

struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct InputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FittingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct GenerationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SplitError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace magnet
