#include "distill/simulator.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <regex>
#include <set>

#include "distill/digest.hpp"
#include "distill/error.hpp"
#include "distill/prompts.hpp"
#include "distill/text.hpp"
#include "distill/text_metrics.hpp"

namespace distill::sim {

using llm::ChatRequest;
using llm::ChatResponse;

namespace {

struct Feature {
    std::string_view name;
    std::array<std::string_view, 3> cues;  // prompt words that switch the feature on
    std::string_view answer_marker;        // phrase the answer carries when on
    std::string_view missing_note;         // judge rationale when absent
    std::string_view instruction;          // sentence reflection adds to a prompt
};

// Order matters: reflection fixes the first missing feature the feedback mentions.
constexpr std::array<Feature, 4> kFeatures{{
    {"accuracy", {"accurate", "precise", "correct"}, "precisely stated,",
     "The answer lacks precise and accurate wording.", "Be accurate and precise."},
    {"expertise", {"expert", "professor", "specialist"}, "from the standpoint of the field,",
     "The answer lacks an expert perspective.", "Answer as a domain expert."},
    {"examples", {"example", "examples", "instance"}, "for example,",
     "The answer lacks a concrete example.", "Illustrate each point with an example."},
    {"structure", {"structured", "step", "steps"}, "first,",
     "The answer lacks a structured layout.", "Give a structured, step by step answer."},
}};

constexpr std::array<std::string_view, 3> kVerboseCues{"comprehensive", "detailed", "thorough"};
constexpr std::array<std::string_view, 3> kConciseCues{"concise", "brief", "succinct"};
constexpr std::string_view kConciseInstruction = "Keep the answer concise.";
constexpr std::string_view kTooLongNote = "The answer is too long compared with the reference; it should be concise.";

constexpr std::array<std::string_view, 6> kFiller{
    "This point is often discussed in introductory courses and appears in many textbooks.",
    "It is worth keeping in mind the broader context in which the concept is normally used.",
    "Many students find it helpful to revisit the definitions before moving on.",
    "The topic connects to several other parts of the course material.",
    "In practice the details depend on the particular system under consideration.",
    "A careful reading of the relevant chapter gives further background on this.",
};

std::uint64_t h(std::string_view s) { return digest_u64(s); }

bool has_any(const std::string& lower, const std::array<std::string_view, 3>& cues) {
    const auto words = metrics::tokenize(lower).tokens;
    const std::set<std::string> set(words.begin(), words.end());
    return std::any_of(cues.begin(), cues.end(), [&](std::string_view c) { return set.count(std::string(c)) > 0; });
}

std::string between(std::string_view s, std::string_view open, std::string_view close) {
    const auto a = s.find(open);
    if (a == std::string_view::npos) return {};
    const auto start = a + open.size();
    const auto b = close.empty() ? std::string_view::npos : s.find(close, start);
    return text::trim(s.substr(start, b == std::string_view::npos ? std::string_view::npos : b - start));
}

int exact_count(std::string_view s, std::string_view lead) {
    const auto p = s.find(lead);
    if (p == std::string_view::npos) return 0;
    int n = 0;
    for (std::size_t i = p + lead.size(); i < s.size() && std::isdigit(static_cast<unsigned char>(s[i])); ++i) {
        n = n * 10 + (s[i] - '0');
    }
    return n;
}

std::vector<std::string> content_terms(std::string_view body) {
    static const std::set<std::string> kStop{
        "about", "above", "after", "again", "against", "their", "there", "these", "those", "which",
        "while", "where", "would", "could", "should", "other", "being", "between", "through",
        "under", "because", "explain", "describe", "compare", "questions", "question", "write",
        "exactly", "distinct", "what", "using", "within", "without", "example", "examples", "meant",
        "happens", "situations", "choose", "matter", "differ", "applied", "practice", "advantages",
        "disadvantages", "factors", "limit", "relates", "affects", "changes", "change", "beginner",
        "weakness", "mitigated", "assumptions", "topic", "difference", "purpose", "determine",
        "determines", "every", "several", "often", "largely", "so", "given", "therefore", "approximately",
        "reference", "passage", "answer", "answering", "verbatim", "consult", "above", "below"};
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& t : metrics::tokenize(body).tokens) {
        if (text::codepoint_count(t) < 5 || kStop.count(t) || std::isdigit(static_cast<unsigned char>(t[0]))) continue;
        if (seen.insert(t).second) out.push_back(t);
    }
    return out;
}

ChatResponse reply(const ChatRequest& req, std::string content) {
    ChatResponse r;
    std::size_t in = 0;
    for (const auto& m : req.messages) in += text::codepoint_count(m.content);
    r.prompt_units = static_cast<std::int64_t>((in + 3) / 4);
    r.completion_units = static_cast<std::int64_t>((text::codepoint_count(content) + 3) / 4);
    r.content = std::move(content);
    return r;
}

std::string numbered(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) out += std::to_string(i + 1) + ". " + items[i] + "\n";
    return out;
}

// Question generation ------------------------------------------------------

std::vector<std::string> make_questions(const std::vector<std::string>& terms, int n, std::string_view salt,
                                        bool sampled) {
    static constexpr std::array<std::string_view, 8> kParagraphForms{
        "What is meant by {a}?",
        "Explain the role of {a} in this topic.",
        "Compare {a} and {b}.",
        "What are the advantages and disadvantages of {a}?",
        "How is {a} applied in practice?",
        "Why does {a} matter for {b}?",
        "Describe how {a} relates to {b}.",
        "Which factors limit {a}?",
    };
    static constexpr std::array<std::string_view, 6> kSampledForms{
        "In what situations would you choose {a} over {b}?",
        "Give an example where {a} affects {b}.",
        "What happens to {b} when {a} changes?",
        "How would you explain {a} to a beginner?",
        "What is the main weakness of {a}, and how can it be mitigated?",
        "How do {a} and {b} differ in their assumptions?",
    };
    std::vector<std::string> out;
    const std::vector<std::string> fallback{"the concept", "the method"};
    const auto& pool = terms.size() >= 2 ? terms : fallback;
    for (int i = 0; i < n; ++i) {
        const std::string key = std::string(salt) + "#" + std::to_string(i);
        const auto x = h(key);
        std::string form = sampled ? std::string(kSampledForms[x % kSampledForms.size()])
                                   : std::string(kParagraphForms[x % kParagraphForms.size()]);
        const auto a = (x >> 8) % pool.size();
        auto b = (x >> 24) % pool.size();
        if (b == a) b = (a + 1) % pool.size();
        form = std::regex_replace(form, std::regex(R"(\{a\})"), pool[a]);
        form = std::regex_replace(form, std::regex(R"(\{b\})"), pool[b]);
        out.push_back(std::move(form));
    }
    return out;
}

ChatResponse paragraph_questions(const ChatRequest& req) {
    const std::string& user = req.messages.at(1).content;
    const int n = std::max(1, exact_count(user, "write exactly "));
    const auto paragraph = between(user, prompts::kParagraphOpen, prompts::kParagraphClose);
    const auto terms = content_terms(paragraph);
    return reply(req, numbered(make_questions(terms, n, req.model_name + "|" + paragraph, false)));
}

ChatResponse sampled_questions(const ChatRequest& req) {
    const std::string& user = req.messages.at(1).content;
    const int n = std::max(1, exact_count(user, "Write exactly "));
    const auto examples = between(user, prompts::kContentExamplesHeader, prompts::kStyleExamplesHeader);
    const auto terms = content_terms(examples);
    return reply(req, numbered(make_questions(terms, n, req.model_name + "|" + user, true)));
}

// Answers and judging --------------------------------------------------------

struct PromptTraits {
    std::array<bool, kFeatures.size()> on{};
    bool verbose = false;
    bool concise = false;
};

PromptTraits traits_of(const std::string& prompt) {
    const auto lower = text::to_lower_ascii(prompt);
    PromptTraits t;
    for (std::size_t i = 0; i < kFeatures.size(); ++i) t.on[i] = has_any(lower, kFeatures[i].cues);
    t.verbose = has_any(lower, kVerboseCues);
    t.concise = has_any(lower, kConciseCues);
    return t;
}

ChatResponse answer(const ChatRequest& req) {
    const auto traits = traits_of(req.system_content());
    const std::string& user = req.last_user_content();
    const auto reference = between(user, prompts::kReferenceOpen, prompts::kReferenceClose);
    std::string question = user;
    if (const auto p = user.rfind("\n\n"); !reference.empty() && p != std::string::npos) question = text::trim(user.substr(p));
    const auto terms = content_terms(question + " " + reference);
    const std::string topic = terms.empty() ? "the question" : terms.front();
    const auto x = h(req.model_name + "|" + question);

    std::vector<std::string> parts;
    if (traits.on[0]) parts.emplace_back(kFeatures[0].answer_marker);
    if (traits.on[1]) parts.emplace_back(kFeatures[1].answer_marker);
    std::string core = "the key idea of " + topic + " is that it ";
    if (!reference.empty()) {
        auto first = text::trim(reference.substr(0, reference.find_first_of(".\n")));
        core = "the passage explains that " + first;
    } else {
        const std::string other = terms.size() > 1 ? terms[1] : std::string("the system");
        core += "determines how " + other + " behaves";
    }
    core += ".";
    parts.push_back(core);
    if (traits.on[3]) parts.push_back("First, identify " + topic + ". Second, consider its effect.");
    if (traits.on[2]) {
        parts.emplace_back("For example, " + topic + " appears in everyday engineering problems.");
    }
    std::size_t filler = traits.concise ? 0 : 1;
    if (traits.verbose) filler += 3;
    for (std::size_t i = 0; i < filler; ++i) parts.emplace_back(kFiller[(x + i) % kFiller.size()]);

    std::string out;
    for (const auto& p : parts) {
        if (!out.empty()) out += ' ';
        out += p;
    }
    out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
    return reply(req, out);
}

int clamp10(long v) { return static_cast<int>(std::clamp<long>(v, 1, 10)); }

ChatResponse judge(const ChatRequest& req) {
    const std::string& user = req.messages.at(1).content;
    const auto reference = between(user, prompts::kJudgeReferenceTag, prompts::kJudgeAnswerTag);
    const auto answer_text = between(user, prompts::kJudgeAnswerTag, "");

    const std::string lower_answer = text::to_lower_ascii(answer_text);
    int markers = 0;
    std::string notes;
    std::array<bool, kFeatures.size()> has{};
    for (std::size_t i = 0; i < kFeatures.size(); ++i) {
        has[i] = lower_answer.find(kFeatures[i].answer_marker) != std::string::npos;
        if (has[i]) {
            ++markers;
        } else {
            notes += std::string(kFeatures[i].missing_note) + "\n";
        }
    }
    const auto ref_tokens = metrics::tokenize(reference).tokens;
    const auto ans_tokens = metrics::tokenize(answer_text).tokens;
    const std::set<std::string> ref_set(ref_tokens.begin(), ref_tokens.end());
    const std::set<std::string> ans_set(ans_tokens.begin(), ans_tokens.end());
    std::size_t hit = 0;
    for (const auto& t : ref_set) hit += ans_set.count(t);
    const double recall = ref_set.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(ref_set.size());
    const long overlap = std::lround(3.0 * recall);
    const bool too_long = text::char_length(answer_text) > text::char_length(reference) * 3 / 2;
    if (too_long) notes += std::string(kTooLongNote) + "\n";

    const int overall = clamp10(3 + markers + overlap);
    const int fa = clamp10(overall + (has[0] ? 1 : -1));
    const int us = clamp10(overall + (has[1] ? 1 : 0));
    const int cl = clamp10(overall + (has[3] ? 1 : -1));
    const int co = clamp10(overall - (too_long ? 2 : 0));

    std::string out = "Comparing the assistant's answer with the reference answer.\n";
    out += notes;
    out += "Factual Accuracy: " + std::to_string(fa) + "\n";
    out += "User Satisfaction: " + std::to_string(us) + "\n";
    out += "Clarity: " + std::to_string(cl) + "\n";
    out += "Condensability: " + std::to_string(co) + "\n";
    out += "Overall: [[" + std::to_string(overall) + "]]\n";
    return reply(req, out);
}

// Prompt optimization --------------------------------------------------------

std::string add_sentence(std::string prompt, std::string_view sentence) {
    prompt = text::trim(prompt);
    if (!prompt.empty()) prompt += ' ';
    prompt += sentence;
    return prompt;
}

ChatResponse reflect(const ChatRequest& req) {
    const std::string& user = req.messages.at(1).content;
    const auto prompt = between(user, prompts::kPromptOpen, prompts::kPromptClose);
    const auto traits = traits_of(prompt);
    std::string improved = prompt;
    std::string diagnosis = "The feedback shows no clear weakness.";
    bool changed = false;
    for (std::size_t i = 0; i < kFeatures.size() && !changed; ++i) {
        if (!traits.on[i] && user.find(kFeatures[i].missing_note) != std::string::npos) {
            improved = add_sentence(prompt, kFeatures[i].instruction);
            diagnosis = "The graders repeatedly note: " + std::string(kFeatures[i].missing_note);
            changed = true;
        }
    }
    if (!changed && !traits.concise) {
        improved = add_sentence(prompt, kConciseInstruction);
        diagnosis = "Answers can be shorter without losing content.";
        changed = true;
    }
    if (!changed) improved = add_sentence(prompt, "Answer the question directly.");
    return reply(req, diagnosis + "\n" + std::string(prompts::kPromptOpen) + "\n" + improved + "\n" +
                          std::string(prompts::kPromptClose) + "\n");
}

ChatResponse resample(const ChatRequest& req) {
    const std::string& user = req.messages.at(1).content;
    const int n = std::max(1, exact_count(user, "Write exactly "));
    std::vector<std::string> prompts_in;
    std::size_t pos = 0;
    while ((pos = user.find(prompts::kPromptOpen, pos)) != std::string::npos) {
        pos += prompts::kPromptOpen.size();
        const auto end = user.find(prompts::kPromptClose, pos);
        prompts_in.push_back(text::trim(user.substr(pos, end - pos)));
        pos = end;
    }
    if (prompts_in.empty()) return reply(req, "No prompts were given.");
    // Key information: the features present in the best prompt and any others.
    std::vector<std::string_view> sentences;
    for (std::size_t i = 0; i < kFeatures.size(); ++i) {
        if (std::any_of(prompts_in.begin(), prompts_in.end(), [&](const std::string& p) { return traits_of(p).on[i]; })) {
            sentences.push_back(kFeatures[i].instruction);
        }
    }
    const auto& lead = prompts_in.front();
    const auto stop = lead.find_first_of(".\n");
    const std::string base = text::trim(stop == std::string::npos ? lead : lead.substr(0, stop + 1));
    std::string out;
    for (int k = 0; k < n; ++k) {
        std::string p = base;
        for (std::size_t s = 0; s < sentences.size(); ++s) {
            if (sentences.size() > 1 && s == static_cast<std::size_t>(k) % (sentences.size() + 1)) continue;
            p = add_sentence(p, sentences[s]);
        }
        if (k % 2 == 0) p = add_sentence(p, kConciseInstruction);
        out += std::to_string(k + 1) + ". " + std::string(prompts::kPromptOpen) + p + std::string(prompts::kPromptClose) + "\n";
    }
    return reply(req, out);
}

}  // namespace

ChatResponse teacher_reply(const ChatRequest& req) {
    if (req.messages.size() < 2) return reply(req, "Could you clarify the question?");
    const std::string& first_user = req.messages.at(1).content;
    if (req.system_content() == prompts::kJudgeSystem) return judge(req);
    if (req.system_content() == prompts::kOptimizerSystem) {
        if (first_user.find(prompts::kReflectMarker) != std::string::npos) return reflect(req);
        if (first_user.find(prompts::kResampleMarker) != std::string::npos) return resample(req);
    }
    if (req.system_content() == prompts::kQuestionSystem) {
        if (first_user.find(prompts::kParagraphOpen) != std::string::npos) return paragraph_questions(req);
        if (first_user.find(prompts::kStyleExamplesHeader) != std::string::npos) return sampled_questions(req);
    }
    return answer(req);
}

llm::ScriptedBackend::Handler make_handler(std::string_view name) {
    if (name != "teacher") fail(Errc::InvalidArgument, "unknown simulator '" + std::string(name) + "'");
    return [](const ChatRequest& req, std::size_t) { return teacher_reply(req); };
}

}  // namespace distill::sim
