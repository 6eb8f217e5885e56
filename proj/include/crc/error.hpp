#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace crc {

/// Coarse failure category. The CLI prints it as the first token of its
/// one-line error report, so the names are part of the external interface.
enum class ErrorKind {
    dimension,
    invalid_argument,
    numeric,
    insufficient_pool,
    class_exhausted,
    cadence,
    parse,
    io,
    config,
};

[[nodiscard]] constexpr std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::dimension: return "dimension";
        case ErrorKind::invalid_argument: return "invalid_argument";
        case ErrorKind::numeric: return "numeric";
        case ErrorKind::insufficient_pool: return "insufficient_pool";
        case ErrorKind::class_exhausted: return "class_exhausted";
        case ErrorKind::cadence: return "cadence";
        case ErrorKind::parse: return "parse";
        case ErrorKind::io: return "io";
        case ErrorKind::config: return "config";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace crc
