#include "distill/answer_gen.hpp"

#include <spdlog/spdlog.h>

#include "distill/error.hpp"
#include "distill/prompts.hpp"
#include "distill/text.hpp"

namespace distill::answer {

using llm::ChatRequest;
using llm::Role;

AnswerPromptTemplate parse_template(std::string_view content, std::string_view origin) {
    AnswerPromptTemplate t;
    const auto lines = text::split_lines(content);
    std::size_t i = 0;
    bool has_header = false;
    for (std::size_t k = 0; k < lines.size(); ++k) {
        if (text::trim(lines[k]) == "---") {
            has_header = true;
            i = k;
            break;
        }
    }
    std::size_t body_start = 0;
    if (has_header) {
        for (std::size_t k = 0; k < i; ++k) {
            std::string line = text::trim(lines[k]);
            if (line.empty() || line.front() == '#') continue;
            auto colon = line.find(':');
            if (colon == std::string::npos) {
                fail(Errc::InvalidArgument, std::string(origin) + ": bad template header line '" + line + "'");
            }
            std::string key = text::trim(line.substr(0, colon));
            std::string value = text::trim(line.substr(colon + 1));
            if (key == "id") {
                t.id = value;
            } else if (key == "include_reference_block") {
                if (value != "true" && value != "false") {
                    fail(Errc::InvalidArgument, std::string(origin) + ": include_reference_block must be true or false");
                }
                t.include_reference_block = value == "true";
            } else {
                spdlog::warn("{}: ignoring unknown template key '{}'", origin, key);
            }
        }
        body_start = i + 1;
    }
    std::string body;
    for (std::size_t k = body_start; k < lines.size(); ++k) {
        if (!body.empty() || k > body_start) body += '\n';
        body += lines[k];
    }
    t.system_text = text::trim(body);
    if (t.system_text.empty()) fail(Errc::InvalidArgument, std::string(origin) + ": template text is empty");
    if (t.id.empty()) t.id = "template";
    return t;
}

AnswerPromptTemplate load_template(const std::filesystem::path& path) {
    return parse_template(read_file(path), path.string());
}

std::string render_template(const AnswerPromptTemplate& tmpl) {
    std::string out = "id: " + tmpl.id + "\n";
    out += std::string("include_reference_block: ") + (tmpl.include_reference_block ? "true" : "false");
    out += "\n---\n";
    out += tmpl.system_text;
    out += '\n';
    return out;
}

ChatRequest assemble_answer_prompt(const AnswerPromptTemplate& tmpl, const QuestionRecord& question,
                                   const TextbookParagraph* reference, const ModelSettings& settings) {
    if (reference != nullptr && question.origin != qgen::Origin::Paragraph) {
        fail(Errc::InvalidArgument, "references are only attached to paragraph-grounded questions");
    }
    ChatRequest r;
    r.model_name = settings.model;
    r.temperature = settings.temperature;
    r.max_tokens = settings.max_tokens;
    r.messages.push_back({Role::System, tmpl.system_text});
    std::string user;
    if (reference != nullptr && tmpl.include_reference_block) {
        user += prompts::kReferenceOpen;
        user += '\n';
        user += reference->text;
        user += '\n';
        user += prompts::kReferenceClose;
        user += '\n';
        user += prompts::kReferenceInstruction;
        user += "\n\n";
    }
    user += question.text;
    r.messages.push_back({Role::User, std::move(user)});
    return r;
}

ParagraphIndex index_paragraphs(const std::vector<TextbookParagraph>& paragraphs) {
    ParagraphIndex index;
    for (const auto& p : paragraphs) index.emplace(p.id, p);
    return index;
}

AnswerRun generate_answers(const std::vector<QuestionRecord>& questions,
                           const AnswerPromptTemplate& tmpl, const ParagraphIndex& paragraphs,
                           const ModelSettings& settings, llm::Gateway& gateway) {
    AnswerRun run;
    std::vector<ChatRequest> requests;
    std::vector<std::size_t> slot_of;  // request index -> question index
    std::vector<std::optional<AnswerFailure>> early(questions.size());
    for (std::size_t i = 0; i < questions.size(); ++i) {
        const auto& q = questions[i];
        const TextbookParagraph* ref = nullptr;
        if (q.origin == qgen::Origin::Paragraph && tmpl.include_reference_block) {
            auto it = q.source_paragraph_id ? paragraphs.find(*q.source_paragraph_id) : paragraphs.end();
            if (it == paragraphs.end()) {
                early[i] = AnswerFailure{q.id, std::string(to_string(Errc::DanglingReference)),
                                         "paragraph '" + q.source_paragraph_id.value_or("") +
                                             "' is not in the paragraph index"};
                continue;
            }
            ref = &it->second;
        }
        requests.push_back(assemble_answer_prompt(tmpl, q, ref, settings));
        slot_of.push_back(i);
    }

    auto results = gateway.complete_batch(requests);
    std::vector<std::optional<QAPair>> answered(questions.size());
    for (std::size_t r = 0; r < results.size(); ++r) {
        const std::size_t i = slot_of[r];
        const auto& q = questions[i];
        if (!results[r].ok()) {
            std::string kind = "Unknown";
            try {
                std::rethrow_exception(results[r].error);
            } catch (const Error& e) {
                kind = std::string(e.kind());
            } catch (...) {
            }
            early[i] = AnswerFailure{q.id, kind, results[r].error_message()};
            continue;
        }
        std::string content = text::trim(results[r].value().content);
        const std::size_t length = text::char_length(content);
        if (length == 0) {
            early[i] = AnswerFailure{q.id, std::string(to_string(Errc::MalformedResponse)), "empty answer"};
            continue;
        }
        QAPair pair;
        pair.question_id = q.id;
        pair.question = q.text;
        pair.answer = std::move(content);
        if (q.origin == qgen::Origin::Paragraph && tmpl.include_reference_block) {
            pair.reference_paragraph_id = q.source_paragraph_id;
        }
        pair.prompt_id = tmpl.id;
        pair.model = settings.model;
        pair.answer_char_count = length;
        answered[i] = std::move(pair);
    }
    for (std::size_t i = 0; i < questions.size(); ++i) {
        if (answered[i]) run.pairs.push_back(std::move(*answered[i]));
        if (early[i]) {
            spdlog::warn("answer skipped for {}: {} ({})", early[i]->question_id, early[i]->message,
                         early[i]->error_kind);
            run.failures.push_back(std::move(*early[i]));
        }
    }
    return run;
}

ordered_json to_json(const QAPair& p) {
    ordered_json j;
    j["question_id"] = p.question_id;
    j["question"] = p.question;
    j["answer"] = p.answer;
    j["reference_paragraph_id"] =
        p.reference_paragraph_id ? ordered_json(*p.reference_paragraph_id) : ordered_json(nullptr);
    j["prompt_id"] = p.prompt_id;
    j["model"] = p.model;
    j["answer_char_count"] = p.answer_char_count;
    return j;
}

QAPair qa_from_json(const json& j) {
    QAPair p;
    p.question_id = j.at("question_id").get<std::string>();
    p.question = j.at("question").get<std::string>();
    p.answer = j.at("answer").get<std::string>();
    if (j.contains("reference_paragraph_id") && !j["reference_paragraph_id"].is_null()) {
        p.reference_paragraph_id = j["reference_paragraph_id"].get<std::string>();
    }
    p.prompt_id = j.value("prompt_id", std::string{});
    p.model = j.value("model", std::string{});
    p.answer_char_count = text::char_length(p.answer);
    return p;
}

ordered_json to_json(const AnswerFailure& f) {
    ordered_json j;
    j["question_id"] = f.question_id;
    j["error"] = f.error_kind;
    j["message"] = f.message;
    return j;
}

std::vector<QAPair> read_qa_pairs(const std::filesystem::path& path) {
    std::vector<QAPair> out;
    for (const json& row : read_jsonl(path)) out.push_back(qa_from_json(row));
    return out;
}

}  // namespace distill::answer
