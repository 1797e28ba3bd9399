#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <string_view>

#include "distill/answer_gen.hpp"
#include "distill/llm_gateway.hpp"

namespace distill::judge {

using answer::QAPair;

enum class LengthUnit { Chars, Tokens };

/// Chars: code points of the whitespace-normalized text. Tokens: metric tokenizer count.
std::size_t measure_length(std::string_view text, LengthUnit unit);

/// Factual Accuracy, User Satisfaction, Clarity, Condensability, in prompt order.
inline constexpr std::array<std::string_view, 4> kDimensions = {
    "Factual Accuracy", "User Satisfaction", "Clarity", "Condensability"};

struct JudgeVerdict {
    std::string qa_id;
    int factual_accuracy = 1;
    int user_satisfaction = 1;
    int clarity = 1;
    int condensability = 1;
    /// The judge's own holistic score for the item (s^LLM).
    int overall = 1;
    std::string rationale_text;
    std::size_t response_length = 0;   // l_res
    std::size_t reference_length = 1;  // l_ref
    int attempts = 1;

    std::array<int, 4> dimension_scores() const {
        return {factual_accuracy, user_satisfaction, clarity, condensability};
    }
    bool operator==(const JudgeVerdict&) const = default;
};

struct JudgeConfig {
    std::string judge_model = "gpt-4";
    double temperature = 0.0;
    int max_tokens = 1024;
    int parse_retries = 2;
    LengthUnit length_unit = LengthUnit::Chars;

    void validate() const;
};

inline constexpr int kMaxParseRetries = 10;

llm::ChatRequest assemble_judge_prompt(std::string_view question, std::string_view human_reference,
                                       std::string_view candidate_answer, const JudgeConfig& cfg = {});

/// Canonical output format: reasoning, four "<Dimension>: n" lines, then "Overall: [[n]]".
std::string render_verdict(const JudgeVerdict& v, std::string_view reasoning = "");

/// Throws ParseError (missing marker or dimension line) or RangeError (score outside 1..10).
JudgeVerdict parse_verdict(std::string_view judge_output, const QAPair& qa, std::string_view reference,
                           LengthUnit unit = LengthUnit::Chars);

/// Re-prompts with a format reminder on ParseError/RangeError up to parse_retries times;
/// then throws JudgeFailed.
JudgeVerdict judge_answer(const QAPair& qa, std::string_view reference, const JudgeConfig& cfg,
                          llm::Gateway& gateway);

ordered_json to_json(const JudgeVerdict& v);
JudgeVerdict verdict_from_json(const json& j);

}  // namespace distill::judge
