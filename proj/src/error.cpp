#include "cropadapt/error.hpp"

namespace cropadapt {

const char* error_code_name(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::PointBehindCamera: return "PointBehindCamera";
        case ErrorCode::RayAboveHorizon: return "RayAboveHorizon";
        case ErrorCode::DegenerateView: return "DegenerateView";
        case ErrorCode::HorizonBelowBottom: return "HorizonBelowBottom";
        case ErrorCode::TransferFailed: return "TransferFailed";
        case ErrorCode::Io: return "IoError";
        case ErrorCode::VersionMismatch: return "VersionMismatch";
        case ErrorCode::MissingFile: return "MissingFile";
        case ErrorCode::SchemaViolation: return "SchemaViolation";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::EmptyDataset: return "EmptyDataset";
        case ErrorCode::GateNotPassed: return "GateNotPassed";
        case ErrorCode::EmptyPseudoLabels: return "EmptyPseudoLabels";
        case ErrorCode::OverlapWithAdaptationSet: return "OverlapWithAdaptationSet";
        case ErrorCode::MismatchedSets: return "MismatchedSets";
    }
    return "UnknownError";
}

}  // namespace cropadapt
