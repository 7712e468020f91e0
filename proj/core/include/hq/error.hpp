#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hq {

enum class ErrorCode {
    DimensionMismatch,
    TooFewRows,
    RowCountMismatch,
    NonFinite,
    NotPositiveDefinite,
    RankDeficient,
    HessianNotPD,
    DegenerateActivations,
    DegenerateWeights,
    NonFiniteActivation,
    TokenOutOfRange,
    SequenceTooLong,
    BadMagic,
    HeaderMismatch,
    TruncatedFile,
    ChecksumMismatch,
    FileNotFound,
    FileTooShort,
    IoError,
    EmptyPool,
    SearchSpaceTooLarge,
    InfeasibleBudget,
    InvalidConfig,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Broad failure class, used by the CLI to pick an exit status.
enum class ErrorCategory { Config, Data, Numerical };

ErrorCategory category_of(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

}  // namespace hq
