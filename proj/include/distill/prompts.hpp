#pragma once

#include <string_view>

// Meta-prompt wording shared by the prompt builders and the built-in simulator.
// Changing any of these changes every cache key that embeds them; bump kPromptAssetVersion.
namespace distill::prompts {

inline constexpr std::string_view kPromptAssetVersion = "v1";

// Question generation
inline constexpr std::string_view kQuestionSystem =
    "You are an experienced university teacher. You write study and exam questions that are "
    "grounded in the course textbook.";
inline constexpr std::string_view kExamplesHeader =
    "Example questions (for style and variety only; do not copy them):";
inline constexpr std::string_view kParagraphOpen = "<paragraph>";
inline constexpr std::string_view kParagraphClose = "</paragraph>";
inline constexpr std::string_view kContentExamplesHeader =
    "Questions written earlier for this course (content examples):";
inline constexpr std::string_view kStyleExamplesHeader =
    "Questions showing the desired styles (style examples):";
inline constexpr std::string_view kListReminder =
    "Your previous reply contained no numbered questions. Reply with the questions only, as a "
    "numbered list with one question per line.";

// Answer generation
inline constexpr std::string_view kReferenceOpen = "<reference>";
inline constexpr std::string_view kReferenceClose = "</reference>";
inline constexpr std::string_view kReferenceInstruction =
    "Consult the reference passage above when answering, but do not copy it verbatim.";

// Judge
inline constexpr std::string_view kJudgeSystem =
    "You are a rigorous grader of answers to course questions. You compare an AI assistant's "
    "answer with a reference answer written by a human expert.";
inline constexpr std::string_view kJudgeQuestionTag = "[Question]";
inline constexpr std::string_view kJudgeReferenceTag = "[Reference Answer]";
inline constexpr std::string_view kJudgeAnswerTag = "[AI Assistant's Answer]";
inline constexpr std::string_view kJudgeFormatReminder =
    "Your previous reply did not follow the required format. Repeat your evaluation and end it "
    "with one line per dimension in the form \"<dimension name>: <integer 1-10>\" followed by "
    "the final line \"Overall: [[n]]\" where n is an integer from 1 to 10.";

// Prompt optimization
inline constexpr std::string_view kOptimizerSystem =
    "You are an expert prompt engineer who improves system prompts for a course question "
    "answering assistant.";
inline constexpr std::string_view kPromptOpen = "<prompt>";
inline constexpr std::string_view kPromptClose = "</prompt>";
inline constexpr std::string_view kReflectMarker =
    "Put the improved prompt between <prompt> and </prompt> tags.";
inline constexpr std::string_view kResampleMarker =
    "new prompts that keep the key information";

}  // namespace distill::prompts
