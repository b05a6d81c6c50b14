#pragma once

#include <stdexcept>
#include <string>

namespace pblab {

enum class ErrorKind {
    SubstitutionOutOfClass,
    DivisionByZero,
    PointOutsideBase,
    BaseMismatch,
    NotASubspace,
    MalformedGluing,
    LiftDomainMismatch,
    IncompatibleMaps,
    NotInvertible,
    ConditionFails,
    ShapeMismatch,
    NotSymmetric,
    IncompatibleMetrics,
    NecessaryConditionFails,
    NotLocallyTrivial,
    MetricRequired,
    ParseError,
    UnresolvedReference,
    DimensionMismatch,
};

inline const char* to_string(ErrorKind k) {
    switch (k) {
    case ErrorKind::SubstitutionOutOfClass: return "SubstitutionOutOfClass";
    case ErrorKind::DivisionByZero: return "DivisionByZero";
    case ErrorKind::PointOutsideBase: return "PointOutsideBase";
    case ErrorKind::BaseMismatch: return "BaseMismatch";
    case ErrorKind::NotASubspace: return "NotASubspace";
    case ErrorKind::MalformedGluing: return "MalformedGluing";
    case ErrorKind::LiftDomainMismatch: return "LiftDomainMismatch";
    case ErrorKind::IncompatibleMaps: return "IncompatibleMaps";
    case ErrorKind::NotInvertible: return "NotInvertible";
    case ErrorKind::ConditionFails: return "ConditionFails";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NotSymmetric: return "NotSymmetric";
    case ErrorKind::IncompatibleMetrics: return "IncompatibleMetrics";
    case ErrorKind::NecessaryConditionFails: return "NecessaryConditionFails";
    case ErrorKind::NotLocallyTrivial: return "NotLocallyTrivial";
    case ErrorKind::MetricRequired: return "MetricRequired";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::UnresolvedReference: return "UnresolvedReference";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind), message_(message) {}

    ErrorKind kind() const { return kind_; }
    const std::string& message() const { return message_; }

private:
    ErrorKind kind_;
    std::string message_;
};

}  // namespace pblab
