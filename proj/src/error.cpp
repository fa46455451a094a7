#include "llmseg/error.hpp"

namespace llmseg {

std::string_view error_code_name(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::InvalidSize: return "InvalidSize";
        case ErrorCode::EmptyInput: return "EmptyInput";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::SchemaVersionMismatch: return "SchemaVersionMismatch";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::VersionMismatch: return "VersionMismatch";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::InvalidTemperature: return "InvalidTemperature";
        case ErrorCode::InvalidHeadCount: return "InvalidHeadCount";
        case ErrorCode::InvalidSchedule: return "InvalidSchedule";
        case ErrorCode::MissingGradient: return "MissingGradient";
        case ErrorCode::NonFiniteEvaluation: return "NonFiniteEvaluation";
        case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
        case ErrorCode::EmptyProposalSet: return "EmptyProposalSet";
        case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
        case ErrorCode::UnknownStrategy: return "UnknownStrategy";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::DataMissing: return "DataMissing";
        case ErrorCode::CorpusTooSmall: return "CorpusTooSmall";
        case ErrorCode::InvalidTemplate: return "InvalidTemplate";
        case ErrorCode::EmptyObjects: return "EmptyObjects";
        case ErrorCode::NoQuestionsFound: return "NoQuestionsFound";
        case ErrorCode::NoValidPairs: return "NoValidPairs";
        case ErrorCode::ProviderUnavailable: return "ProviderUnavailable";
        case ErrorCode::MalformedResponse: return "MalformedResponse";
    }
    return "Unknown";
}

}  // namespace llmseg
