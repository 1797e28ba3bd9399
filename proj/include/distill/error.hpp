#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace distill {

enum class Errc {
    InvalidArgument,
    IoError,
    BackendUnavailable,
    Transient,
    AuthError,
    MalformedResponse,
    MissingFixture,
    EmptyDocument,
    PoolTooSmall,
    DuplicateId,
    EmptyParse,
    ShortParse,
    InsufficientPool,
    DanglingReference,
    ParseError,
    RangeError,
    JudgeFailed,
    CandidateFailed,
    LengthMismatch,
    EmptyCorpus,
    DuplicateQuestionId,
    ValidationError,
    StageFailed,
};

std::string_view to_string(Errc code) noexcept;

// Every failure surfaced by the library carries a machine-readable kind.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    Errc code() const noexcept { return code_; }
    std::string_view kind() const noexcept { return to_string(code_); }

private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) {
    throw Error(code, message);
}

}  // namespace distill
