#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>

namespace entroflow {

enum class ErrorKind {
    invalid_argument,
    degenerate_density,
    scheme_failure,
    infeasible_target,
    no_convergence,
    config_error,
    io_error,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept
{
    switch (kind) {
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::degenerate_density: return "degenerate-density";
    case ErrorKind::scheme_failure: return "scheme-failure";
    case ErrorKind::infeasible_target: return "infeasible-target";
    case ErrorKind::no_convergence: return "no-convergence";
    case ErrorKind::config_error: return "config-error";
    case ErrorKind::io_error: return "io-error";
    }
    return "unknown";
}

/// Every failure raised by the library carries one of the kinds above.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind), message_(what)
    {
    }

    ErrorKind kind() const noexcept { return kind_; }

    /// The text without the kind prefix.
    const std::string& message() const noexcept { return message_; }

private:
    ErrorKind kind_;
    std::string message_;
};

/// Six significant digits, for messages.
inline std::string format_real(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what)
{
    throw Error(kind, what);
}

}  // namespace entroflow
