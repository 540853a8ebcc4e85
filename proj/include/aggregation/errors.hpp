#pragma once

#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace aggregation {

enum class ErrorKind {
    domain,
    singularity,
    unsupported,
    parameter,
    tail_too_weak,
    invalid_potential,
    resolution,
    stiffness,
    divergence,
    contraction_failure,
    window,
    config,
    io,
};

inline std::string_view to_string(ErrorKind kind)
{
    switch (kind) {
    case ErrorKind::domain: return "domain";
    case ErrorKind::singularity: return "singularity";
    case ErrorKind::unsupported: return "unsupported";
    case ErrorKind::parameter: return "parameter";
    case ErrorKind::tail_too_weak: return "tail-too-weak";
    case ErrorKind::invalid_potential: return "invalid-potential";
    case ErrorKind::resolution: return "resolution";
    case ErrorKind::stiffness: return "stiffness";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::contraction_failure: return "contraction-failure";
    case ErrorKind::window: return "window";
    case ErrorKind::config: return "config";
    case ErrorKind::io: return "io";
    }
    return "unknown";
}

/// Exception carrying a machine-readable error class.
class AggregationError : public std::runtime_error {
public:
    AggregationError(ErrorKind kind, const std::string& what, std::string detail = {})
        : std::runtime_error(what), kind_(kind), detail_(std::move(detail))
    {
    }

    ErrorKind kind() const noexcept { return kind_; }

    /// Optional payload, e.g. a state dump on integrator failure.
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorKind kind_;
    std::string detail_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what, std::string detail = {})
{
    throw AggregationError(kind, what, std::move(detail));
}

using WarningHandler = std::function<void(ErrorKind, const std::string&)>;

inline WarningHandler& warning_handler()
{
    static WarningHandler handler = [](ErrorKind kind, const std::string& msg) {
        std::cerr << "warning [" << to_string(kind) << "]: " << msg << '\n';
    };
    return handler;
}

/// Non-fatal diagnostic routed through the installed handler (stderr by default).
inline void warn(ErrorKind kind, const std::string& msg)
{
    if (warning_handler())
        warning_handler()(kind, msg);
}

/// Process exit code per error class: bad input=2, numerics=3, non-convergence=4.
inline int exit_code(ErrorKind kind)
{
    switch (kind) {
    case ErrorKind::parameter:
    case ErrorKind::unsupported:
    case ErrorKind::config:
    case ErrorKind::io:
    case ErrorKind::window:
    case ErrorKind::tail_too_weak:
    case ErrorKind::invalid_potential:
        return 2;
    case ErrorKind::contraction_failure:
        return 4;
    default:
        return 3;
    }
}

} // namespace aggregation
