#include "distill/judge.hpp"

#include <regex>

#include "distill/error.hpp"
#include "distill/prompts.hpp"
#include "distill/text.hpp"
#include "distill/text_metrics.hpp"

namespace distill::judge {

using llm::ChatRequest;
using llm::Role;

std::size_t measure_length(std::string_view s, LengthUnit unit) {
    return unit == LengthUnit::Chars ? text::char_length(s) : metrics::tokenize(s).size();
}

void JudgeConfig::validate() const {
    if (judge_model.empty()) fail(Errc::InvalidArgument, "judge model is empty");
    if (parse_retries < 0 || parse_retries > kMaxParseRetries) {
        fail(Errc::InvalidArgument, "parse_retries must be in 0.." + std::to_string(kMaxParseRetries));
    }
}

ChatRequest assemble_judge_prompt(std::string_view question, std::string_view human_reference,
                                  std::string_view candidate_answer, const JudgeConfig& cfg) {
    if (question.empty() || human_reference.empty() || candidate_answer.empty()) {
        fail(Errc::InvalidArgument, "judge prompt needs question, reference and answer");
    }
    std::string user;
    user +=
        "Evaluate the AI assistant's answer to the question below against the human reference "
        "answer, on these dimensions:\n"
        "1. Factual Accuracy: whether the information is correct and consistent with the facts "
        "in the reference answer.\n"
        "2. User Satisfaction: whether the answer meets the needs of the question adequately and "
        "appropriately, compared with the reference answer.\n"
        "3. Clarity: whether the answer is as clear and easy to read as the reference answer.\n"
        "4. Condensability: whether the answer is succinct and refined, without redundant "
        "content.\n\n"
        "Think step by step. For each dimension in the order above, first write your reasoning, "
        "then give an integer score from 1 to 10 on its own line in the form "
        "\"<dimension name>: <score>\". After all four dimensions, give your overall judgement "
        "of the answer as an integer from 1 to 10 on the final line, in exactly this format:\n"
        "Overall: [[n]]\n\n";
    user += prompts::kJudgeQuestionTag;
    user += '\n';
    user += question;
    user += "\n\n";
    user += prompts::kJudgeReferenceTag;
    user += '\n';
    user += human_reference;
    user += "\n\n";
    user += prompts::kJudgeAnswerTag;
    user += '\n';
    user += candidate_answer;
    user += '\n';

    ChatRequest r;
    r.model_name = cfg.judge_model;
    r.temperature = cfg.temperature;
    r.max_tokens = cfg.max_tokens;
    r.messages.push_back({Role::System, std::string(prompts::kJudgeSystem)});
    r.messages.push_back({Role::User, std::move(user)});
    return r;
}

std::string render_verdict(const JudgeVerdict& v, std::string_view reasoning) {
    std::string out;
    if (!reasoning.empty()) {
        out += reasoning;
        out += "\n\n";
    }
    const auto scores = v.dimension_scores();
    for (std::size_t i = 0; i < kDimensions.size(); ++i) {
        out += kDimensions[i];
        out += ": " + std::to_string(scores[i]) + "\n";
    }
    out += "Overall: [[" + std::to_string(v.overall) + "]]\n";
    return out;
}

namespace {

int checked_score(const std::string& digits, std::string_view what) {
    long value = 0;
    try {
        value = std::stol(digits);
    } catch (const std::exception&) {
        fail(Errc::RangeError, std::string(what) + " score '" + digits + "' is out of range");
    }
    if (value < 1 || value > 10) {
        fail(Errc::RangeError, std::string(what) + " score " + digits + " is outside 1..10");
    }
    return static_cast<int>(value);
}

}  // namespace

JudgeVerdict parse_verdict(std::string_view judge_output, const QAPair& qa,
                           std::string_view reference, LengthUnit unit) {
    static const std::regex kDimensionLine(
        R"(^[\s>*#_\-]*(Factual Accuracy|User Satisfaction|Clarity|Condensability)[\s*_]*(?:[Ss]core)?[\s*_]*(?::|：)[\s*_]*(-?\d+)[\s*_]*(?:/\s*10)?[\s*_.]*$)");
    static const std::regex kOverall(R"(\[\[\s*(-?\d+)\s*\]\])");

    std::array<std::optional<std::string>, 4> found;
    for (const auto& line : text::split_lines(judge_output)) {
        std::smatch m;
        if (!std::regex_match(line, m, kDimensionLine)) continue;
        for (std::size_t i = 0; i < kDimensions.size(); ++i) {
            if (m[1].str() == kDimensions[i]) found[i] = m[2].str();  // last occurrence wins
        }
    }
    const std::string output(judge_output);
    std::optional<std::string> overall;
    for (auto it = std::sregex_iterator(output.begin(), output.end(), kOverall);
         it != std::sregex_iterator(); ++it) {
        overall = (*it)[1].str();
    }
    if (!overall) fail(Errc::ParseError, "judge output has no [[n]] overall marker");
    for (std::size_t i = 0; i < kDimensions.size(); ++i) {
        if (!found[i]) {
            fail(Errc::ParseError, "judge output has no '" + std::string(kDimensions[i]) + "' score line");
        }
    }

    JudgeVerdict v;
    v.qa_id = qa.question_id;
    v.factual_accuracy = checked_score(*found[0], kDimensions[0]);
    v.user_satisfaction = checked_score(*found[1], kDimensions[1]);
    v.clarity = checked_score(*found[2], kDimensions[2]);
    v.condensability = checked_score(*found[3], kDimensions[3]);
    v.overall = checked_score(*overall, "Overall");
    v.rationale_text = output;
    v.response_length = unit == LengthUnit::Chars ? qa.answer_char_count
                                                  : measure_length(qa.answer, unit);
    v.reference_length = measure_length(reference, unit);
    if (v.reference_length < 1) fail(Errc::InvalidArgument, "reference length must be >= 1");
    return v;
}

JudgeVerdict judge_answer(const QAPair& qa, std::string_view reference, const JudgeConfig& cfg,
                          llm::Gateway& gateway) {
    cfg.validate();
    if (text::char_length(reference) == 0) fail(Errc::InvalidArgument, "judge reference is empty");
    ChatRequest request = assemble_judge_prompt(qa.question, reference, qa.answer, cfg);
    std::string last_error;
    const int attempts = cfg.parse_retries + 1;
    for (int attempt = 1; attempt <= attempts; ++attempt) {
        const auto response = gateway.complete(request);
        try {
            JudgeVerdict v = parse_verdict(response.content, qa, reference, cfg.length_unit);
            v.attempts = attempt;
            return v;
        } catch (const Error& e) {
            if (e.code() != Errc::ParseError && e.code() != Errc::RangeError) throw;
            last_error = e.what();
        }
        request.messages.push_back({Role::Assistant, response.content});
        request.messages.push_back({Role::User, std::string(prompts::kJudgeFormatReminder)});
    }
    fail(Errc::JudgeFailed, "judge output unusable after " + std::to_string(attempts) +
                                " attempts for " + qa.question_id + ": " + last_error);
}

ordered_json to_json(const JudgeVerdict& v) {
    ordered_json j;
    j["qa_id"] = v.qa_id;
    j["factual_accuracy"] = v.factual_accuracy;
    j["user_satisfaction"] = v.user_satisfaction;
    j["clarity"] = v.clarity;
    j["condensability"] = v.condensability;
    j["overall"] = v.overall;
    j["response_length"] = v.response_length;
    j["reference_length"] = v.reference_length;
    j["attempts"] = v.attempts;
    j["rationale_text"] = v.rationale_text;
    return j;
}

JudgeVerdict verdict_from_json(const json& j) {
    JudgeVerdict v;
    v.qa_id = j.at("qa_id").get<std::string>();
    v.factual_accuracy = j.at("factual_accuracy").get<int>();
    v.user_satisfaction = j.at("user_satisfaction").get<int>();
    v.clarity = j.at("clarity").get<int>();
    v.condensability = j.at("condensability").get<int>();
    v.overall = j.at("overall").get<int>();
    v.response_length = j.at("response_length").get<std::size_t>();
    v.reference_length = j.at("reference_length").get<std::size_t>();
    v.attempts = j.value("attempts", 1);
    v.rationale_text = j.value("rationale_text", std::string{});
    for (int s : {v.factual_accuracy, v.user_satisfaction, v.clarity, v.condensability, v.overall}) {
        if (s < 1 || s > 10) fail(Errc::RangeError, "stored verdict score outside 1..10");
    }
    return v;
}

}  // namespace distill::judge
