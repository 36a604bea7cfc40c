#include "error.hpp"

namespace cac {

const char* error_code_name(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::Ok: return "Ok";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Parse: return "Parse";
    case ErrorCode::MissingMandatoryTag: return "MissingMandatoryTag";
    case ErrorCode::UnreadableSource: return "UnreadableSource";
    case ErrorCode::NoEligibleSeries: return "NoEligibleSeries";
    case ErrorCode::InconsistentGeometry: return "InconsistentGeometry";
    case ErrorCode::MissingSlices: return "MissingSlices";
    case ErrorCode::DimsMismatch: return "DimsMismatch";
    case ErrorCode::UidMismatch: return "UidMismatch";
    case ErrorCode::MalformedRuns: return "MalformedRuns";
    case ErrorCode::RoiOutOfBounds: return "RoiOutOfBounds";
    case ErrorCode::RunnerFailed: return "RunnerFailed";
    case ErrorCode::InvalidModelOutput: return "InvalidModelOutput";
    case ErrorCode::SampleTooLarge: return "SampleTooLarge";
    case ErrorCode::NegativeDuration: return "NegativeDuration";
    case ErrorCode::OverlappingDatasets: return "OverlappingDatasets";
    case ErrorCode::EmptyGroup: return "EmptyGroup";
    case ErrorCode::NoEvents: return "NoEvents";
    case ErrorCode::DegenerateMarginals: return "DegenerateMarginals";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::UndefinedMetric: return "UndefinedMetric";
    case ErrorCode::QueueEmpty: return "QueueEmpty";
    case ErrorCode::NotAssigned: return "NotAssigned";
    case ErrorCode::AlreadyVerdicted: return "AlreadyVerdicted";
    case ErrorCode::SliceOutOfRange: return "SliceOutOfRange";
    case ErrorCode::UnknownItem: return "UnknownItem";
    case ErrorCode::StageFailed: return "StageFailed";
    case ErrorCode::Internal: return "Internal";
    }
    return "Unknown";
}

ErrorCode error_code_from_name(std::string_view name) noexcept {
    for (int v = 0; v <= static_cast<int>(ErrorCode::Internal); ++v) {
        const auto code = static_cast<ErrorCode>(v);
        if (name == error_code_name(code)) return code;
    }
    return ErrorCode::Internal;
}

}  // namespace cac
