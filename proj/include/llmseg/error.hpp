#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace llmseg {

enum class ErrorCode {
    InvalidArgument,
    DimensionMismatch,
    LengthMismatch,
    InvalidSize,
    EmptyInput,
    ParseError,
    SchemaVersionMismatch,
    ShapeMismatch,
    VersionMismatch,
    IoError,
    InvalidTemperature,
    InvalidHeadCount,
    InvalidSchedule,
    MissingGradient,
    NonFiniteEvaluation,
    NonFiniteLoss,
    EmptyProposalSet,
    IndexOutOfRange,
    UnknownStrategy,
    InvalidConfig,
    DataMissing,
    CorpusTooSmall,
    InvalidTemplate,
    EmptyObjects,
    NoQuestionsFound,
    NoValidPairs,
    ProviderUnavailable,
    MalformedResponse,
};

std::string_view error_code_name(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above so the
/// C boundary can translate it without string matching.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

}  // namespace llmseg
