#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cac {

// Numeric values are part of the C ABI (see include/cac/cac.h); append only.
enum class ErrorCode : int {
    Ok = 0,
    InvalidArgument = 1,
    Io = 2,
    Parse = 3,
    MissingMandatoryTag = 10,
    UnreadableSource = 11,
    NoEligibleSeries = 12,
    InconsistentGeometry = 13,
    MissingSlices = 14,
    DimsMismatch = 20,
    UidMismatch = 21,
    MalformedRuns = 22,
    RoiOutOfBounds = 23,
    RunnerFailed = 24,
    InvalidModelOutput = 25,
    SampleTooLarge = 30,
    NegativeDuration = 40,
    OverlappingDatasets = 41,
    EmptyGroup = 50,
    NoEvents = 51,
    DegenerateMarginals = 52,
    ZeroVariance = 53,
    UndefinedMetric = 54,
    QueueEmpty = 60,
    NotAssigned = 61,
    AlreadyVerdicted = 62,
    SliceOutOfRange = 63,
    UnknownItem = 64,
    StageFailed = 70,
    Internal = 99,
};

const char* error_code_name(ErrorCode code) noexcept;
/// Inverse of error_code_name; unknown names map to Internal.
ErrorCode error_code_from_name(std::string_view name) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

}  // namespace cac
