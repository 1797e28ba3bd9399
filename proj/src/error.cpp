#include "distill/error.hpp"

namespace distill {

std::string_view to_string(Errc code) noexcept {
    switch (code) {
        case Errc::InvalidArgument: return "InvalidArgument";
        case Errc::IoError: return "IoError";
        case Errc::BackendUnavailable: return "BackendUnavailable";
        case Errc::Transient: return "Transient";
        case Errc::AuthError: return "AuthError";
        case Errc::MalformedResponse: return "MalformedResponse";
        case Errc::MissingFixture: return "MissingFixture";
        case Errc::EmptyDocument: return "EmptyDocument";
        case Errc::PoolTooSmall: return "PoolTooSmall";
        case Errc::DuplicateId: return "DuplicateId";
        case Errc::EmptyParse: return "EmptyParse";
        case Errc::ShortParse: return "ShortParse";
        case Errc::InsufficientPool: return "InsufficientPool";
        case Errc::DanglingReference: return "DanglingReference";
        case Errc::ParseError: return "ParseError";
        case Errc::RangeError: return "RangeError";
        case Errc::JudgeFailed: return "JudgeFailed";
        case Errc::CandidateFailed: return "CandidateFailed";
        case Errc::LengthMismatch: return "LengthMismatch";
        case Errc::EmptyCorpus: return "EmptyCorpus";
        case Errc::DuplicateQuestionId: return "DuplicateQuestionId";
        case Errc::ValidationError: return "ValidationError";
        case Errc::StageFailed: return "StageFailed";
    }
    return "Unknown";
}

}  // namespace distill
