#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fastrr {

enum class ErrorKind {
    invalid_design,
    singular_covariance,
    shape,
    enumeration_too_large,
    unsupported,
    parse,
    io,
    empty_interval,
    memory_cap,
    internal,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::invalid_design: return "invalid_design";
    case ErrorKind::singular_covariance: return "singular_covariance";
    case ErrorKind::shape: return "shape";
    case ErrorKind::enumeration_too_large: return "enumeration_too_large";
    case ErrorKind::unsupported: return "unsupported";
    case ErrorKind::parse: return "parse";
    case ErrorKind::io: return "io";
    case ErrorKind::empty_interval: return "empty_interval";
    case ErrorKind::memory_cap: return "memory_cap";
    case ErrorKind::internal: return "internal";
    }
    return "unknown";
}

/// Every failure raised by the library carries a machine-readable kind so
/// the CLI can emit a structured diagnostic.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

} // namespace fastrr
