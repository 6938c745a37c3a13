#pragma once

#include <stdexcept>
#include <string>

namespace cropadapt {

enum class ErrorCode {
    InvalidArgument = 1,
    PointBehindCamera,
    RayAboveHorizon,
    DegenerateView,
    HorizonBelowBottom,
    TransferFailed,
    Io,
    VersionMismatch,
    MissingFile,
    SchemaViolation,
    ShapeMismatch,
    EmptyDataset,
    GateNotPassed,
    EmptyPseudoLabels,
    OverlapWithAdaptationSet,
    MismatchedSets,
};

const char* error_code_name(ErrorCode code) noexcept;

// Every failure in the library surfaces as this exception. The C API maps the
// code one-to-one onto its status enum.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace cropadapt
