#pragma once

#include <stdexcept>
#include <string>

namespace thinrod {

enum class ErrorKind {
    InvalidCurve,
    FrameDrift,
    FrenetUndefined,
    SolverFail,
    MultipleEigenvalue,
    SolvabilityViolation,
    DegenerateReduced,
    EpsilonOutOfRange,
    PairingAmbiguous,
    ConfigError,
};

inline const char* to_string(ErrorKind k) {
    switch (k) {
    case ErrorKind::InvalidCurve: return "InvalidCurve";
    case ErrorKind::FrameDrift: return "FrameDrift";
    case ErrorKind::FrenetUndefined: return "FrenetUndefined";
    case ErrorKind::SolverFail: return "SolverFail";
    case ErrorKind::MultipleEigenvalue: return "MultipleEigenvalue";
    case ErrorKind::SolvabilityViolation: return "SolvabilityViolation";
    case ErrorKind::DegenerateReduced: return "DegenerateReduced";
    case ErrorKind::EpsilonOutOfRange: return "EpsilonOutOfRange";
    case ErrorKind::PairingAmbiguous: return "PairingAmbiguous";
    case ErrorKind::ConfigError: return "ConfigError";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

} // namespace thinrod
