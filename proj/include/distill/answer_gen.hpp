#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "distill/corpus_ingest.hpp"
#include "distill/llm_gateway.hpp"
#include "distill/question_gen.hpp"

namespace distill::answer {

using ingest::TextbookParagraph;
using qgen::QuestionRecord;

struct AnswerPromptTemplate {
    std::string id;
    std::string system_text;
    bool include_reference_block = true;
};

/// Template file: "key: value" header lines, a line "---", then the system text verbatim.
/// Recognised keys: id, include_reference_block.
AnswerPromptTemplate parse_template(std::string_view content, std::string_view origin = "<memory>");
AnswerPromptTemplate load_template(const std::filesystem::path& path);
std::string render_template(const AnswerPromptTemplate& tmpl);

struct QAPair {
    std::string question_id;
    std::string question;
    std::string answer;
    std::optional<std::string> reference_paragraph_id;
    std::string prompt_id;
    std::string model;
    std::size_t answer_char_count = 0;

    bool operator==(const QAPair&) const = default;
};

struct ModelSettings {
    std::string model;
    double temperature = 0.7;
    int max_tokens = 1024;
};

llm::ChatRequest assemble_answer_prompt(const AnswerPromptTemplate& tmpl, const QuestionRecord& question,
                                        const TextbookParagraph* reference,
                                        const ModelSettings& settings);

struct AnswerFailure {
    std::string question_id;
    std::string error_kind;
    std::string message;
};

struct AnswerRun {
    std::vector<QAPair> pairs;
    std::vector<AnswerFailure> failures;
};

using ParagraphIndex = std::map<std::string, TextbookParagraph>;

ParagraphIndex index_paragraphs(const std::vector<TextbookParagraph>& paragraphs);

/// One QAPair per answered question, in input order. Per-item failures (including
/// DanglingReference) are recorded and skipped.
AnswerRun generate_answers(const std::vector<QuestionRecord>& questions,
                           const AnswerPromptTemplate& tmpl, const ParagraphIndex& paragraphs,
                           const ModelSettings& settings, llm::Gateway& gateway);

ordered_json to_json(const QAPair& p);
QAPair qa_from_json(const json& j);
ordered_json to_json(const AnswerFailure& f);
std::vector<QAPair> read_qa_pairs(const std::filesystem::path& path);

}  // namespace distill::answer
