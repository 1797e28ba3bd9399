#include "distill/question_gen.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "distill/digest.hpp"
#include "distill/error.hpp"
#include "distill/parallel.hpp"
#include "distill/prompts.hpp"
#include "distill/text.hpp"

namespace distill::qgen {

using llm::ChatRequest;
using llm::Role;

std::string_view to_string(Origin origin) noexcept {
    return origin == Origin::Paragraph ? "paragraph" : "sampled";
}

void GenPlan::validate() const {
    if (per_paragraph_target && *per_paragraph_target < 1) {
        fail(Errc::InvalidArgument, "per_paragraph_target must be >= 1");
    }
    if (in_context_seed_count < 0 || in_context_generated_count < 0 || style_example_count < 0) {
        fail(Errc::InvalidArgument, "example counts must be non-negative");
    }
    if (content_example_count < 1) fail(Errc::InvalidArgument, "content_example_count must be >= 1");
    if (sampling_rounds < 0) fail(Errc::InvalidArgument, "sampling_rounds must be >= 0");
    if (sampled_per_request < 1) fail(Errc::InvalidArgument, "sampled_per_request must be >= 1");
    if (wave_size < 1) fail(Errc::InvalidArgument, "wave_size must be >= 1");
    if (chars_per_question < 1) fail(Errc::InvalidArgument, "chars_per_question must be >= 1");
    if (min_target < 1 || max_target < min_target) {
        fail(Errc::InvalidArgument, "target bounds must satisfy 1 <= min_target <= max_target");
    }
}

int target_count(std::size_t char_count, const GenPlan& plan) {
    if (plan.per_paragraph_target) return *plan.per_paragraph_target;
    const auto per = static_cast<std::size_t>(plan.chars_per_question);
    const auto raw = static_cast<long long>((char_count + per - 1) / per);
    return static_cast<int>(std::clamp<long long>(raw, plan.min_target, plan.max_target));
}

InContextExamples pick_paragraph_examples(const std::vector<SeedQuestion>& seed_pool,
                                          const std::vector<QuestionRecord>& generated_pool,
                                          const GenPlan& plan, Rng& rng) {
    const auto want_generated = static_cast<std::size_t>(plan.in_context_generated_count);
    const std::size_t generated = std::min(want_generated, generated_pool.size());
    const std::size_t seeds = static_cast<std::size_t>(plan.in_context_seed_count) +
                              (want_generated - generated);
    if (seeds > seed_pool.size()) {
        fail(Errc::InsufficientPool, "seed pool too small for " + std::to_string(seeds) +
                                         " in-context examples");
    }
    InContextExamples ex;
    for (std::size_t i : rng.sample_indices(seed_pool.size(), seeds)) {
        ex.seed.push_back(seed_pool[i].text);
    }
    for (std::size_t i : rng.sample_indices(generated_pool.size(), generated)) {
        ex.generated.push_back(generated_pool[i].text);
    }
    return ex;
}

namespace {

void append_example_lines(std::string& out, const std::vector<std::string>& items) {
    for (const auto& q : items) {
        out += "- ";
        out += text::normalize_whitespace(q);
        out += '\n';
    }
}

ChatRequest make_request(const std::string& model, const GenPlan& plan, std::string user) {
    ChatRequest r;
    r.model_name = model;
    r.messages.push_back({Role::System, std::string(prompts::kQuestionSystem)});
    r.messages.push_back({Role::User, std::move(user)});
    r.temperature = plan.temperature;
    r.max_tokens = plan.max_tokens;
    return r;
}

// Issues the request; on an empty parse re-prompts once with a format reminder.
std::vector<std::string> request_question_list(ChatRequest request, llm::Gateway& gateway) {
    const auto first = gateway.complete(request);
    try {
        return parse_question_list(first.content);
    } catch (const Error& e) {
        if (e.code() != Errc::EmptyParse) throw;
    }
    request.messages.push_back({Role::Assistant, first.content});
    request.messages.push_back({Role::User, std::string(prompts::kListReminder)});
    return parse_question_list(gateway.complete(request).content);
}

GenerationFailure failure_from(const std::string& model, std::string scope) {
    GenerationFailure f{model, std::move(scope), "Unknown", ""};
    try {
        throw;
    } catch (const Error& e) {
        f.error_kind = std::string(e.kind());
        f.message = e.what();
    } catch (const std::exception& e) {
        f.message = e.what();
    }
    return f;
}

}  // namespace

ChatRequest assemble_paragraph_prompt(const TextbookParagraph& paragraph,
                                      const InContextExamples& examples, int target_count,
                                      const std::string& model, const GenPlan& plan) {
    const std::string n = std::to_string(target_count);
    std::string user;
    user += "Read the textbook paragraph below and write exactly " + n +
            " distinct questions about the knowledge points it covers. Vary the question forms: "
            "explanations, comparisons, pros and cons, and applications.\n\n";
    user += prompts::kExamplesHeader;
    user += '\n';
    append_example_lines(user, examples.seed);
    append_example_lines(user, examples.generated);
    user += "\nTextbook paragraph:\n";
    user += prompts::kParagraphOpen;
    user += '\n';
    user += paragraph.text;
    user += '\n';
    user += prompts::kParagraphClose;
    user += "\n\nReturn exactly " + n +
            " questions as a numbered list, one question per line, with no other text.";
    return make_request(model, plan, std::move(user));
}

ChatRequest assemble_sampling_prompt(const std::vector<std::string>& content_examples,
                                     const std::vector<std::string>& style_examples,
                                     int target_count, const std::string& model,
                                     const GenPlan& plan) {
    const std::string n = std::to_string(target_count);
    std::string user;
    user += prompts::kContentExamplesHeader;
    user += '\n';
    append_example_lines(user, content_examples);
    user += '\n';
    user += prompts::kStyleExamplesHeader;
    user += '\n';
    append_example_lines(user, style_examples);
    user += "\nWrite exactly " + n +
            " new questions that explore course content related to the content examples without "
            "repeating them, phrased in the styles of the style examples. Return a numbered list, "
            "one question per line, with no other text.";
    return make_request(model, plan, std::move(user));
}

std::optional<std::string> parse_list_item(std::string_view line) {
    std::string s = text::trim(line);
    std::string_view v = s;
    auto consume = [&v](std::string_view prefix) {
        if (v.substr(0, prefix.size()) != prefix) return false;
        v.remove_prefix(prefix.size());
        return true;
    };
    bool marked = false;
    if (consume("- ") || consume("* ") || consume("\xE2\x80\xA2") /* • */ ||
        consume("\xC2\xB7") /* · */) {
        marked = true;
    } else if (consume("(") || consume("\xEF\xBC\x88") /* （ */) {
        std::size_t d = 0;
        while (d < v.size() && std::isdigit(static_cast<unsigned char>(v[d]))) ++d;
        if (d == 0) return std::nullopt;
        v.remove_prefix(d);
        marked = consume(")") || consume("\xEF\xBC\x89") /* ） */;
    } else {
        std::size_t d = 0;
        while (d < v.size() && std::isdigit(static_cast<unsigned char>(v[d]))) ++d;
        if (d == 0 || d > 4) return std::nullopt;
        v.remove_prefix(d);
        while (!v.empty() && v.front() == ' ') v.remove_prefix(1);
        if (consume(".")) {
            marked = v.empty() || !std::isdigit(static_cast<unsigned char>(v.front()));
        } else {
            marked = consume("\xE3\x80\x81") /* 、 */ || consume(")") ||
                     consume("\xEF\xBC\x89") || consume(":") || consume("\xEF\xBC\x9A") /* ： */;
        }
    }
    if (!marked) return std::nullopt;
    std::string item = text::trim(v);
    if (item.empty()) return std::nullopt;
    return item;
}

std::vector<std::string> parse_question_list(std::string_view llm_output) {
    std::vector<std::string> out;
    for (const auto& line : text::split_lines(llm_output)) {
        if (auto item = parse_list_item(line)) out.push_back(std::move(*item));
    }
    if (out.empty()) fail(Errc::EmptyParse, "no list items found in model output");
    return out;
}

std::string question_id(const std::string& model, Origin origin, const std::string& anchor,
                        int round, std::size_t index, const std::string& text) {
    std::string material = model;
    material += '\x1f';
    material += to_string(origin);
    material += '\x1f';
    material += anchor;
    material += '\x1f' + std::to_string(round) + '\x1f' + std::to_string(index) + '\x1f';
    material += text;
    return "q-" + short_digest(material, 16);
}

std::vector<QuestionRecord> generate_for_paragraph(const TextbookParagraph& paragraph,
                                                   const std::vector<SeedQuestion>& seed_pool,
                                                   const std::vector<QuestionRecord>& generated_pool,
                                                   const GenPlan& plan, const std::string& model,
                                                   llm::Gateway& gateway) {
    Rng rng(plan.rng_seed, "paragraph:" + model + ":" + paragraph.id);
    const auto examples = pick_paragraph_examples(seed_pool, generated_pool, plan, rng);
    const int target = target_count(paragraph.char_count, plan);
    auto request = assemble_paragraph_prompt(paragraph, examples, target, model, plan);
    auto texts = request_question_list(std::move(request), gateway);

    std::vector<QuestionRecord> out;
    out.reserve(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) {
        QuestionRecord q;
        q.text = std::move(texts[i]);
        q.origin = Origin::Paragraph;
        q.source_paragraph_id = paragraph.id;
        q.generator_model = model;
        q.round = 0;
        q.id = question_id(model, q.origin, paragraph.id, 0, i, q.text);
        out.push_back(std::move(q));
    }
    return out;
}

RoundResult generate_round0(const std::vector<TextbookParagraph>& paragraphs,
                            const std::vector<SeedQuestion>& seed_pool, const GenPlan& plan,
                            const std::string& model, llm::Gateway& gateway) {
    plan.validate();
    RoundResult result;
    const auto wave = static_cast<std::size_t>(plan.wave_size);
    for (std::size_t begin = 0; begin < paragraphs.size(); begin += wave) {
        const std::size_t end = std::min(paragraphs.size(), begin + wave);
        const std::vector<QuestionRecord> pool = result.records;
        std::vector<std::vector<QuestionRecord>> produced(end - begin);
        std::vector<std::optional<GenerationFailure>> failed(end - begin);
        parallel_for(end - begin, static_cast<std::size_t>(gateway.config().max_in_flight),
                     [&](std::size_t k) {
                         const auto& p = paragraphs[begin + k];
                         try {
                             produced[k] = generate_for_paragraph(p, seed_pool, pool, plan, model,
                                                                  gateway);
                         } catch (...) {
                             failed[k] = failure_from(model, p.id);
                         }
                     });
        for (std::size_t k = 0; k < produced.size(); ++k) {
            if (failed[k]) {
                spdlog::warn("question generation failed for {} ({}): {}", failed[k]->scope,
                             model, failed[k]->message);
                result.failures.push_back(std::move(*failed[k]));
            }
            for (auto& q : produced[k]) result.records.push_back(std::move(q));
        }
    }
    return result;
}

std::vector<QuestionRecord> sample_new_questions(const std::vector<QuestionRecord>& previous_round,
                                                 const std::vector<SeedQuestion>& seed_pool,
                                                 const GenPlan& plan, const std::string& model,
                                                 llm::Gateway& gateway, std::size_t request_index) {
    const auto content_n = static_cast<std::size_t>(plan.content_example_count);
    const auto style_n = static_cast<std::size_t>(plan.style_example_count);
    if (previous_round.size() < content_n) {
        fail(Errc::InsufficientPool, "previous round has " + std::to_string(previous_round.size()) +
                                         " questions; " + std::to_string(content_n) +
                                         " content examples are required");
    }
    if (seed_pool.size() < style_n) fail(Errc::InsufficientPool, "seed pool too small for style examples");
    int round = 0;
    for (const auto& q : previous_round) round = std::max(round, q.round);
    const int next_round = round + 1;

    Rng rng(plan.rng_seed,
            "sample:" + model + ":" + std::to_string(next_round) + ":" + std::to_string(request_index));
    std::vector<std::string> content;
    for (std::size_t i : rng.sample_indices(previous_round.size(), content_n)) {
        content.push_back(previous_round[i].text);
    }
    std::vector<std::string> style;
    for (std::size_t i : rng.sample_indices(seed_pool.size(), style_n)) {
        style.push_back(seed_pool[i].text);
    }
    auto request = assemble_sampling_prompt(content, style, plan.sampled_per_request, model, plan);
    auto texts = request_question_list(std::move(request), gateway);

    const std::string anchor = "request-" + std::to_string(request_index);
    std::vector<QuestionRecord> out;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        QuestionRecord q;
        q.text = std::move(texts[i]);
        q.origin = Origin::Sampled;
        q.generator_model = model;
        q.round = next_round;
        q.id = question_id(model, q.origin, anchor, next_round, i, q.text);
        out.push_back(std::move(q));
    }
    return out;
}

std::size_t sampling_requests_for(std::size_t previous_size, const GenPlan& plan) {
    const auto per = static_cast<std::size_t>(plan.sampled_per_request);
    return (previous_size + per - 1) / per;
}

RoundResult run_sampling_rounds(const std::vector<QuestionRecord>& round0,
                                const std::vector<SeedQuestion>& seed_pool, const GenPlan& plan,
                                const std::string& model, llm::Gateway& gateway) {
    plan.validate();
    RoundResult result;
    std::vector<QuestionRecord> previous = round0;
    for (int r = 1; r <= plan.sampling_rounds; ++r) {
        if (previous.size() < static_cast<std::size_t>(plan.content_example_count)) {
            spdlog::warn("sampling stopped before round {} for {}: only {} questions available", r,
                         model, previous.size());
            result.failures.push_back({model, "round:" + std::to_string(r),
                                       std::string(to_string(Errc::InsufficientPool)),
                                       "previous round too small"});
            break;
        }
        const std::size_t calls = sampling_requests_for(previous.size(), plan);
        std::vector<std::vector<QuestionRecord>> produced(calls);
        std::vector<std::optional<GenerationFailure>> failed(calls);
        parallel_for(calls, static_cast<std::size_t>(gateway.config().max_in_flight),
                     [&](std::size_t k) {
                         try {
                             produced[k] =
                                 sample_new_questions(previous, seed_pool, plan, model, gateway, k);
                         } catch (...) {
                             failed[k] = failure_from(model, "round:" + std::to_string(r) + ":" +
                                                                 std::to_string(k));
                         }
                     });
        std::vector<QuestionRecord> current;
        for (std::size_t k = 0; k < calls; ++k) {
            if (failed[k]) result.failures.push_back(std::move(*failed[k]));
            for (auto& q : produced[k]) current.push_back(std::move(q));
        }
        result.records.insert(result.records.end(), current.begin(), current.end());
        previous = std::move(current);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Deduplication

namespace {

bool is_terminal_punct(char32_t c) {
    static constexpr std::u32string_view kPunct = U".?!;:,。？！；：，…";
    return kPunct.find(c) != std::u32string_view::npos;
}

char32_t fold_case(char32_t c) {
    if (c >= U'A' && c <= U'Z') return c + 32;
    if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 32;
    if (c >= 0x391 && c <= 0x3A9) return c + 32;
    if (c >= 0x410 && c <= 0x42F) return c + 32;
    return c;
}

}  // namespace

std::string normalize_question(std::string_view text_in) {
    std::u32string cps = text::decode_utf8(text::normalize_whitespace(text_in));
    while (!cps.empty() && (is_terminal_punct(cps.back()) || text::is_space(cps.back()))) {
        cps.pop_back();
    }
    for (auto& c : cps) c = fold_case(c);
    return text::encode_utf8(cps);
}

std::vector<std::uint64_t> char_trigrams(std::string_view normalized) {
    constexpr std::uint64_t kPad = 0x1FFFFF;  // above U+10FFFF, never a real code point
    const std::u32string cps = text::decode_utf8(normalized);
    auto pack = [](std::uint64_t a, std::uint64_t b, std::uint64_t c) {
        return (a << 42) | (b << 21) | c;
    };
    std::vector<std::uint64_t> grams;
    if (cps.size() < 3) {
        std::uint64_t a = cps.size() > 0 ? cps[0] : kPad;
        std::uint64_t b = cps.size() > 1 ? cps[1] : kPad;
        grams.push_back(pack(a, b, kPad));
        return grams;
    }
    grams.reserve(cps.size() - 2);
    for (std::size_t i = 0; i + 2 < cps.size(); ++i) grams.push_back(pack(cps[i], cps[i + 1], cps[i + 2]));
    std::sort(grams.begin(), grams.end());
    grams.erase(std::unique(grams.begin(), grams.end()), grams.end());
    return grams;
}

double jaccard(const std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b) {
    if (a.empty() && b.empty()) return 1.0;
    std::size_t i = 0, j = 0, shared = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] < b[j]) ++i;
        else if (b[j] < a[i]) ++j;
        else {
            ++shared;
            ++i;
            ++j;
        }
    }
    return static_cast<double>(shared) / static_cast<double>(a.size() + b.size() - shared);
}

DedupResult dedup(const std::vector<QuestionRecord>& questions, const DedupOptions& options) {
    if (!(options.jaccard_threshold > 0.0 && options.jaccard_threshold <= 1.0)) {
        fail(Errc::InvalidArgument, "jaccard threshold must be in (0, 1]");
    }
    std::vector<std::size_t> order(questions.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return questions[a].round < questions[b].round;
    });

    DedupResult result;
    std::unordered_map<std::string, std::string> exact;  // normalized -> kept id
    std::vector<std::vector<std::uint64_t>> kept_grams;
    std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> postings;
    std::vector<std::uint32_t> shared_counts;
    std::vector<std::uint32_t> touched;

    for (std::size_t idx : order) {
        const QuestionRecord& q = questions[idx];
        std::string norm = normalize_question(q.text);
        if (auto it = exact.find(norm); it != exact.end()) {
            result.audit.push_back({q.id, it->second, 1.0, true});
            continue;
        }
        auto grams = char_trigrams(norm);
        if (options.fuzzy) {
            // Count shared grams against every kept question through the inverted index;
            // the resulting Jaccard values are exact.
            touched.clear();
            for (std::uint64_t g : grams) {
                auto it = postings.find(g);
                if (it == postings.end()) continue;
                for (std::uint32_t k : it->second) {
                    if (shared_counts[k]++ == 0) touched.push_back(k);
                }
            }
            double best = -1.0;
            std::uint32_t best_k = 0;
            for (std::uint32_t k : touched) {
                const double shared = shared_counts[k];
                const double sim =
                    shared / (static_cast<double>(grams.size() + kept_grams[k].size()) - shared);
                if (sim > best || (sim == best && k < best_k)) {
                    best = sim;
                    best_k = k;
                }
                shared_counts[k] = 0;
            }
            if (best >= options.jaccard_threshold) {
                result.audit.push_back({q.id, result.kept[best_k].id, best, false});
                continue;
            }
        }
        const auto k = static_cast<std::uint32_t>(result.kept.size());
        for (std::uint64_t g : grams) postings[g].push_back(k);
        kept_grams.push_back(std::move(grams));
        shared_counts.push_back(0);
        exact.emplace(std::move(norm), q.id);
        result.kept.push_back(q);
    }
    return result;
}

DedupResult merge_models(std::vector<ModelQuestions> lists, const DedupOptions& options) {
    std::stable_sort(lists.begin(), lists.end(),
                     [](const ModelQuestions& a, const ModelQuestions& b) { return a.model < b.model; });
    std::vector<QuestionRecord> all;
    for (auto& l : lists) {
        for (auto& q : l.records) all.push_back(std::move(q));
    }
    return dedup(all, options);
}

std::vector<std::string> uncovered_paragraphs(const std::vector<TextbookParagraph>& paragraphs,
                                              const std::vector<QuestionRecord>& questions) {
    std::unordered_set<std::string> covered;
    for (const auto& q : questions) {
        if (q.round == 0 && q.source_paragraph_id) covered.insert(*q.source_paragraph_id);
    }
    std::vector<std::string> out;
    for (const auto& p : paragraphs) {
        if (!covered.contains(p.id)) out.push_back(p.id);
    }
    return out;
}

ordered_json to_json(const QuestionRecord& q) {
    ordered_json j;
    j["id"] = q.id;
    j["text"] = q.text;
    j["origin"] = to_string(q.origin);
    j["source_paragraph_id"] =
        q.source_paragraph_id ? ordered_json(*q.source_paragraph_id) : ordered_json(nullptr);
    j["generator_model"] = q.generator_model;
    j["round"] = q.round;
    return j;
}

QuestionRecord question_from_json(const json& j) {
    QuestionRecord q;
    q.id = j.at("id").get<std::string>();
    q.text = j.at("text").get<std::string>();
    const auto origin = j.at("origin").get<std::string>();
    if (origin == "paragraph") q.origin = Origin::Paragraph;
    else if (origin == "sampled") q.origin = Origin::Sampled;
    else fail(Errc::InvalidArgument, "unknown question origin '" + origin + "'");
    if (j.contains("source_paragraph_id") && !j["source_paragraph_id"].is_null()) {
        q.source_paragraph_id = j["source_paragraph_id"].get<std::string>();
    }
    q.generator_model = j.value("generator_model", std::string{});
    q.round = j.value("round", 0);
    if ((q.origin == Origin::Paragraph) != q.source_paragraph_id.has_value()) {
        fail(Errc::InvalidArgument, "question " + q.id + ": source_paragraph_id is required iff origin is paragraph");
    }
    return q;
}

ordered_json to_json(const DedupAuditEntry& e) {
    ordered_json j;
    j["dropped_id"] = e.dropped_id;
    j["kept_id"] = e.kept_id;
    j["similarity"] = e.similarity;
    j["reason"] = e.exact ? "exact" : "jaccard";
    return j;
}

ordered_json to_json(const GenerationFailure& f) {
    ordered_json j;
    j["model"] = f.model;
    j["scope"] = f.scope;
    j["error"] = f.error_kind;
    j["message"] = f.message;
    return j;
}

std::vector<QuestionRecord> read_questions(const std::filesystem::path& path) {
    std::vector<QuestionRecord> out;
    for (const json& row : read_jsonl(path)) out.push_back(question_from_json(row));
    return out;
}

}  // namespace distill::qgen
