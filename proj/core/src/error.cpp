#include "hq/error.hpp"

namespace hq {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::TooFewRows: return "TooFewRows";
        case ErrorCode::RowCountMismatch: return "RowCountMismatch";
        case ErrorCode::NonFinite: return "NonFinite";
        case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
        case ErrorCode::RankDeficient: return "RankDeficient";
        case ErrorCode::HessianNotPD: return "HessianNotPD";
        case ErrorCode::DegenerateActivations: return "DegenerateActivations";
        case ErrorCode::DegenerateWeights: return "DegenerateWeights";
        case ErrorCode::NonFiniteActivation: return "NonFiniteActivation";
        case ErrorCode::TokenOutOfRange: return "TokenOutOfRange";
        case ErrorCode::SequenceTooLong: return "SequenceTooLong";
        case ErrorCode::BadMagic: return "BadMagic";
        case ErrorCode::HeaderMismatch: return "HeaderMismatch";
        case ErrorCode::TruncatedFile: return "TruncatedFile";
        case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
        case ErrorCode::FileNotFound: return "FileNotFound";
        case ErrorCode::FileTooShort: return "FileTooShort";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::EmptyPool: return "EmptyPool";
        case ErrorCode::SearchSpaceTooLarge: return "SearchSpaceTooLarge";
        case ErrorCode::InfeasibleBudget: return "InfeasibleBudget";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
    }
    return "Unknown";
}

ErrorCategory category_of(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::EmptyPool:
        case ErrorCode::SearchSpaceTooLarge:
        case ErrorCode::InfeasibleBudget:
        case ErrorCode::InvalidConfig:
            return ErrorCategory::Config;
        case ErrorCode::TokenOutOfRange:
        case ErrorCode::SequenceTooLong:
        case ErrorCode::BadMagic:
        case ErrorCode::HeaderMismatch:
        case ErrorCode::TruncatedFile:
        case ErrorCode::ChecksumMismatch:
        case ErrorCode::FileNotFound:
        case ErrorCode::FileTooShort:
        case ErrorCode::IoError:
            return ErrorCategory::Data;
        default:
            return ErrorCategory::Numerical;
    }
}

}  // namespace hq
