#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace homproj {

enum class ErrorKind {
    DegenerateInvariant,
    SignMismatch,
    NonFinite,
    StepUnderflow,
    NoConvergence,
    MissingPartition,
    DensityUnderflow,
    SingularDegreeMatrix,
    SingularGram,
    IllConditionedMap,
    OutOfRange,
    SingularOrigin,
    BadGrid,
    Singular,
    NotPositiveDefinite,
    InsufficientWindow,
    Config,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept
{
    switch (kind) {
    case ErrorKind::DegenerateInvariant: return "DegenerateInvariant";
    case ErrorKind::SignMismatch: return "SignMismatch";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::StepUnderflow: return "StepUnderflow";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::MissingPartition: return "MissingPartition";
    case ErrorKind::DensityUnderflow: return "DensityUnderflow";
    case ErrorKind::SingularDegreeMatrix: return "SingularDegreeMatrix";
    case ErrorKind::SingularGram: return "SingularGram";
    case ErrorKind::IllConditionedMap: return "IllConditionedMap";
    case ErrorKind::OutOfRange: return "OutOfRange";
    case ErrorKind::SingularOrigin: return "SingularOrigin";
    case ErrorKind::BadGrid: return "BadGrid";
    case ErrorKind::Singular: return "Singular";
    case ErrorKind::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorKind::InsufficientWindow: return "InsufficientWindow";
    case ErrorKind::Config: return "Config";
    }
    return "Unknown";
}

/// Every failure raised by the library carries one of the kinds above so
/// callers (the solve driver, the harness) can branch on it.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what)
        , kind_(kind)
    {
    }

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

} // namespace homproj
