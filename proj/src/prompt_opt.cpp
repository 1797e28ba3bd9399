#include "distill/prompt_opt.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include <spdlog/spdlog.h>

#include "distill/error.hpp"
#include "distill/parallel.hpp"
#include "distill/prompts.hpp"
#include "distill/question_gen.hpp"
#include "distill/text.hpp"

namespace distill::popt {

using llm::ChatRequest;
using llm::Role;

namespace {

std::string fixed2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string error_summary(std::exception_ptr error) {
    try {
        std::rethrow_exception(error);
    } catch (const Error& e) {
        return std::string(e.kind()) + ": " + e.what();
    } catch (const std::exception& e) {
        return e.what();
    }
}

ChatRequest meta_request(const OptimizerConfig& cfg, std::string user) {
    ChatRequest r;
    r.model_name = cfg.meta_model;
    r.temperature = cfg.meta_temperature;
    r.max_tokens = cfg.meta_max_tokens;
    r.messages.push_back({Role::System, std::string(prompts::kOptimizerSystem)});
    r.messages.push_back({Role::User, std::move(user)});
    return r;
}

}  // namespace

std::string_view to_string(Lineage lineage) noexcept {
    switch (lineage) {
        case Lineage::Initial: return "initial";
        case Lineage::Reflected: return "reflected";
        case Lineage::Resampled: return "resampled";
    }
    return "initial";
}

Lineage parse_lineage(std::string_view s) {
    if (s == "initial") return Lineage::Initial;
    if (s == "reflected") return Lineage::Reflected;
    if (s == "resampled") return Lineage::Resampled;
    fail(Errc::InvalidArgument, "unknown lineage '" + std::string(s) + "'");
}

void PromptCandidate::validate() const {
    if (id.empty()) fail(Errc::InvalidArgument, "candidate id is empty");
    if (text::trim(text).empty()) fail(Errc::InvalidArgument, "candidate " + id + " has empty text");
    if (generation < 0) fail(Errc::InvalidArgument, "candidate " + id + " has negative generation");
    if ((generation == 0) != (lineage == Lineage::Initial)) {
        fail(Errc::InvalidArgument, "candidate " + id + ": generation 0 iff lineage initial");
    }
    if (lineage == Lineage::Initial && !parent_ids.empty()) {
        fail(Errc::InvalidArgument, "initial candidate " + id + " has parents");
    }
    if (lineage == Lineage::Reflected && parent_ids.size() != 1) {
        fail(Errc::InvalidArgument, "reflected candidate " + id + " needs exactly one parent");
    }
    if (lineage == Lineage::Resampled && parent_ids.empty()) {
        fail(Errc::InvalidArgument, "resampled candidate " + id + " needs a parent");
    }
}

void OptimizerConfig::validate() const {
    if (!(alpha >= 0.0)) fail(Errc::InvalidArgument, "alpha must be >= 0");
    if (iterations < 0) fail(Errc::InvalidArgument, "iterations must be >= 0");
    if (top_k < 1) fail(Errc::InvalidArgument, "top_k must be >= 1");
    if (initial_pool_size < 1) fail(Errc::InvalidArgument, "initial_pool_size must be >= 1");
    if (top_k > initial_pool_size) fail(Errc::InvalidArgument, "top_k exceeds initial_pool_size");
    if (feedback_samples < 1) fail(Errc::InvalidArgument, "feedback_samples must be >= 1");
    if (!(max_failure_fraction >= 0.0 && max_failure_fraction <= 1.0)) {
        fail(Errc::InvalidArgument, "max_failure_fraction must be in [0, 1]");
    }
    if (answer_settings.model.empty() || meta_model.empty()) {
        fail(Errc::InvalidArgument, "optimizer model names must be set");
    }
}

double length_penalty(std::size_t l_res, std::size_t l_ref, double alpha) {
    if (l_ref < 1) fail(Errc::InvalidArgument, "reference length must be >= 1");
    if (l_res <= l_ref) return 0.0;
    return alpha * (static_cast<double>(l_res) / static_cast<double>(l_ref) - 1.0);
}

double comprehensive_score(double s_llm, std::size_t l_res, std::size_t l_ref, double alpha) {
    return s_llm - length_penalty(l_res, l_ref, alpha);
}

void aggregate(PromptScore& score) {
    double llm = 0.0;
    double penalty = 0.0;
    double total = 0.0;
    for (const auto& item : score.per_item) {
        llm += item.s_llm;
        penalty += item.penalty;
        total += item.s_i;
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, score.per_item.size()));
    score.mean_llm = llm / n;
    score.mean_penalty = penalty / n;
    score.comprehensive = total / n;
}

PromptScore score_candidate(const PromptCandidate& candidate, const std::vector<ValidationItem>& valset,
                            const OptimizerConfig& cfg, const judge::JudgeConfig& judge_cfg,
                            llm::Gateway& gateway, VerdictStore& store) {
    if (valset.empty()) fail(Errc::InvalidArgument, "validation set is empty");
    const answer::AnswerPromptTemplate tmpl{candidate.id, candidate.text, false};

    std::vector<ChatRequest> requests;
    requests.reserve(valset.size());
    for (const auto& item : valset) {
        qgen::QuestionRecord q;
        q.id = item.qa_id;
        q.text = item.question;
        q.origin = qgen::Origin::Sampled;
        requests.push_back(answer::assemble_answer_prompt(tmpl, q, nullptr, cfg.answer_settings));
    }
    const auto answers = gateway.complete_batch(requests);

    std::vector<std::optional<judge::JudgeVerdict>> verdicts(valset.size());
    std::vector<std::string> errors(valset.size());
    parallel_for(valset.size(), static_cast<std::size_t>(gateway.config().max_in_flight),
                 [&](std::size_t i) {
                     if (!answers[i].ok()) {
                         errors[i] = error_summary(answers[i].error);
                         return;
                     }
                     answer::QAPair qa;
                     qa.question_id = valset[i].qa_id;
                     qa.question = valset[i].question;
                     qa.answer = text::trim(answers[i].value().content);
                     qa.prompt_id = candidate.id;
                     qa.model = cfg.answer_settings.model;
                     qa.answer_char_count = text::char_length(qa.answer);
                     if (qa.answer.empty()) {
                         errors[i] = "MalformedResponse: empty answer";
                         return;
                     }
                     try {
                         verdicts[i] = judge::judge_answer(qa, valset[i].human_reference, judge_cfg,
                                                           gateway);
                     } catch (...) {
                         errors[i] = error_summary(std::current_exception());
                     }
                 });

    PromptScore score;
    score.prompt_id = candidate.id;
    auto& kept = store[candidate.id];
    kept.clear();
    for (std::size_t i = 0; i < valset.size(); ++i) {
        if (!verdicts[i]) {
            ++score.failed_items;
            spdlog::warn("candidate {} item {} failed: {}", candidate.id, valset[i].qa_id, errors[i]);
            continue;
        }
        const auto& v = *verdicts[i];
        ItemScore s;
        s.qa_id = v.qa_id;
        s.s_llm = v.overall;
        s.penalty = length_penalty(v.response_length, v.reference_length, cfg.alpha);
        s.s_i = s.s_llm - s.penalty;
        score.per_item.push_back(std::move(s));
        kept.push_back(v);
    }
    const double budget = cfg.max_failure_fraction * static_cast<double>(valset.size());
    if (score.per_item.empty() || static_cast<double>(score.failed_items) > budget) {
        fail(Errc::CandidateFailed, "candidate " + candidate.id + ": " +
                                        std::to_string(score.failed_items) + " of " +
                                        std::to_string(valset.size()) + " items failed");
    }
    aggregate(score);
    return score;
}

bool ranks_before(const Scored& a, const Scored& b) {
    if (a.second.comprehensive != b.second.comprehensive) {
        return a.second.comprehensive > b.second.comprehensive;
    }
    const auto la = text::codepoint_count(a.first.text);
    const auto lb = text::codepoint_count(b.first.text);
    if (la != lb) return la < lb;
    return a.first.id < b.first.id;
}

std::vector<Scored> select_top(std::vector<Scored> pool, std::size_t k) {
    if (pool.size() < k) {
        fail(Errc::PoolTooSmall, "pool of " + std::to_string(pool.size()) + " cannot supply top " +
                                     std::to_string(k));
    }
    std::sort(pool.begin(), pool.end(), ranks_before);
    pool.resize(k);
    return pool;
}

ChatRequest assemble_reflection_prompt(const PromptCandidate& candidate, const PromptScore& score,
                                       const std::vector<std::string>& feedback,
                                       const OptimizerConfig& cfg) {
    std::string user;
    user +=
        "The system prompt below steers an assistant that answers course questions. Its answers "
        "were graded against answers written by human experts, and answers longer than the human "
        "answer were penalised.\n\n";
    user += prompts::kPromptOpen;
    user += '\n';
    user += candidate.text;
    user += '\n';
    user += prompts::kPromptClose;
    user += "\n\nMean comprehensive score: " + fixed2(score.comprehensive) + " (judge " +
            fixed2(score.mean_llm) + ", length penalty " + fixed2(score.mean_penalty) + ").\n\n";
    user += "Grader feedback on answers produced with this prompt:\n\n";
    for (std::size_t i = 0; i < feedback.size(); ++i) {
        user += "[Feedback " + std::to_string(i + 1) + "]\n";
        user += text::trim(feedback[i]);
        user += "\n\n";
    }
    user +=
        "Work out which weaknesses of the prompt the feedback points to, then write one improved "
        "system prompt that fixes them while keeping answers concise. ";
    user += prompts::kReflectMarker;
    return meta_request(cfg, std::move(user));
}

ChatRequest assemble_resample_prompt(const std::vector<Scored>& top, std::size_t n_out,
                                     const OptimizerConfig& cfg) {
    std::string user;
    user +=
        "Below are system prompts for an assistant that answers course questions, each with the "
        "score its answers received, sorted from highest to lowest score.\n\n";
    for (std::size_t i = 0; i < top.size(); ++i) {
        user += "Prompt " + std::to_string(i + 1) + " (score " + fixed2(top[i].second.comprehensive) +
                "):\n";
        user += prompts::kPromptOpen;
        user += '\n';
        user += top[i].first.text;
        user += '\n';
        user += prompts::kPromptClose;
        user += "\n\n";
    }
    user += "Find the key information these prompts share and the patterns that go with higher "
            "scores. Write exactly " +
            std::to_string(n_out) + " ";
    user += prompts::kResampleMarker;
    user +=
        " and follow those patterns. Return them as a numbered list, with each prompt between "
        "<prompt> and </prompt> tags.";
    return meta_request(cfg, std::move(user));
}

std::string extract_prompt(std::string_view output) {
    const auto open = output.rfind(prompts::kPromptOpen);
    if (open == std::string_view::npos) fail(Errc::EmptyParse, "no <prompt> block in reply");
    auto body = output.substr(open + prompts::kPromptOpen.size());
    const auto close = body.find(prompts::kPromptClose);
    if (close != std::string_view::npos) body = body.substr(0, close);
    std::string text = text::trim(body);
    if (text.empty()) fail(Errc::EmptyParse, "empty <prompt> block in reply");
    return text;
}

std::vector<std::string> extract_prompt_list(std::string_view output) {
    std::vector<std::string> out;
    if (output.find(prompts::kPromptOpen) != std::string_view::npos) {
        std::size_t pos = 0;
        while ((pos = output.find(prompts::kPromptOpen, pos)) != std::string_view::npos) {
            pos += prompts::kPromptOpen.size();
            auto close = output.find(prompts::kPromptClose, pos);
            const auto end = close == std::string_view::npos ? output.size() : close;
            std::string text = text::trim(output.substr(pos, end - pos));
            if (!text.empty()) out.push_back(std::move(text));
            pos = end;
        }
        return out;
    }
    for (const auto& line : text::split_lines(output)) {
        if (auto item = qgen::parse_list_item(line); item && !item->empty()) {
            out.push_back(std::move(*item));
        }
    }
    return out;
}

std::vector<std::string> sample_feedback(const std::vector<judge::JudgeVerdict>& verdicts,
                                         std::size_t feedback_samples, Rng& rng) {
    const std::size_t k = std::min(feedback_samples, verdicts.size());
    std::vector<std::string> out;
    out.reserve(k);
    for (std::size_t idx : rng.sample_indices(verdicts.size(), k)) {
        out.push_back(verdicts[idx].rationale_text);
    }
    return out;
}

PromptCandidate reflect(const PromptCandidate& candidate, const PromptScore& score,
                        const VerdictStore& store, const OptimizerConfig& cfg, int generation,
                        std::size_t index, llm::Gateway& gateway) {
    const auto it = store.find(candidate.id);
    if (it == store.end() || it->second.empty()) {
        fail(Errc::InvalidArgument, "no verdicts available for candidate " + candidate.id);
    }
    Rng rng(cfg.rng_seed, "reflect:g" + std::to_string(generation) + ":" + candidate.id);
    const auto feedback = sample_feedback(it->second, static_cast<std::size_t>(cfg.feedback_samples), rng);
    const auto response = gateway.complete(assemble_reflection_prompt(candidate, score, feedback, cfg));

    PromptCandidate child;
    child.id = "g" + std::to_string(generation) + "-r" + std::to_string(index + 1);
    child.text = extract_prompt(response.content);
    child.generation = generation;
    child.lineage = Lineage::Reflected;
    child.parent_ids = {candidate.id};
    return child;
}

std::vector<PromptCandidate> resample(const std::vector<Scored>& top, std::size_t n_out,
                                      const OptimizerConfig& cfg, int generation,
                                      llm::Gateway& gateway) {
    if (top.empty()) fail(Errc::InvalidArgument, "resample needs at least one scored prompt");
    const auto response = gateway.complete(assemble_resample_prompt(top, n_out, cfg));
    auto texts = extract_prompt_list(response.content);
    if (texts.empty()) fail(Errc::EmptyParse, "resample reply contained no prompts");
    if (texts.size() < n_out) {
        spdlog::warn("ShortParse: resample in generation {} returned {} of {} prompts", generation,
                     texts.size(), n_out);
    }
    texts.resize(std::min(texts.size(), n_out));

    std::vector<std::string> parents;
    for (const auto& [c, s] : top) parents.push_back(c.id);
    std::vector<PromptCandidate> out;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        PromptCandidate child;
        child.id = "g" + std::to_string(generation) + "-s" + std::to_string(i + 1);
        child.text = std::move(texts[i]);
        child.generation = generation;
        child.lineage = Lineage::Resampled;
        child.parent_ids = parents;
        out.push_back(std::move(child));
    }
    return out;
}

namespace {

std::vector<Scored> score_all(const std::vector<PromptCandidate>& candidates,
                              const std::vector<ValidationItem>& valset, const OptimizerConfig& cfg,
                              const judge::JudgeConfig& judge_cfg, llm::Gateway& gateway,
                              VerdictStore& store) {
    std::vector<Scored> out;
    for (const auto& c : candidates) {
        try {
            out.emplace_back(c, score_candidate(c, valset, cfg, judge_cfg, gateway, store));
        } catch (const Error& e) {
            if (e.code() != Errc::CandidateFailed) throw;
            store.erase(c.id);
            spdlog::warn("{}", e.what());
        }
    }
    return out;
}

}  // namespace

OptimizeResult optimize(const std::vector<PromptCandidate>& initial,
                        const std::vector<ValidationItem>& valset, const OptimizerConfig& cfg,
                        const judge::JudgeConfig& judge_cfg, llm::Gateway& gateway,
                        std::optional<OptimizeState> resume, const GenerationHook& on_generation) {
    cfg.validate();
    judge_cfg.validate();
    if (initial.size() != static_cast<std::size_t>(cfg.initial_pool_size)) {
        fail(Errc::InvalidArgument, "expected " + std::to_string(cfg.initial_pool_size) +
                                        " initial prompts, got " + std::to_string(initial.size()));
    }
    if (valset.empty()) fail(Errc::InvalidArgument, "validation set is empty");
    std::set<std::string> ids;
    for (const auto& c : initial) {
        c.validate();
        if (c.lineage != Lineage::Initial) fail(Errc::InvalidArgument, c.id + " is not an initial prompt");
        if (!ids.insert(c.id).second) fail(Errc::DuplicateId, "duplicate prompt id " + c.id);
    }

    OptimizeState state = resume.value_or(OptimizeState{});
    if (state.completed_generation < 0) {
        auto scored = score_all(initial, valset, cfg, judge_cfg, gateway, state.verdicts);
        if (scored.empty()) fail(Errc::CandidateFailed, "no initial prompt could be scored");
        std::sort(scored.begin(), scored.end(), ranks_before);
        state.pool = scored;
        state.history.push_back({0, std::move(scored)});
        state.completed_generation = 0;
        if (on_generation) on_generation(state);
    }

    for (int g = state.completed_generation + 1; g <= cfg.iterations; ++g) {
        const auto k = std::min(static_cast<std::size_t>(cfg.top_k), state.pool.size());
        if (k < static_cast<std::size_t>(cfg.top_k)) {
            spdlog::warn("generation {}: only {} scored candidates available for top {}", g, k,
                         cfg.top_k);
        }
        const auto top = select_top(state.pool, k);

        std::vector<std::optional<PromptCandidate>> reflected(top.size());
        parallel_for(top.size(), static_cast<std::size_t>(gateway.config().max_in_flight),
                     [&](std::size_t i) {
                         try {
                             reflected[i] = reflect(top[i].first, top[i].second, state.verdicts, cfg,
                                                    g, i, gateway);
                         } catch (...) {
                             spdlog::warn("reflection of {} failed: {}", top[i].first.id,
                                          error_summary(std::current_exception()));
                         }
                     });
        std::vector<PromptCandidate> children;
        for (auto& r : reflected) {
            if (r) children.push_back(std::move(*r));
        }
        try {
            for (auto& c : resample(top, top.size(), cfg, g, gateway)) children.push_back(std::move(c));
        } catch (...) {
            spdlog::warn("resampling in generation {} failed: {}", g,
                         error_summary(std::current_exception()));
        }

        auto scored = score_all(children, valset, cfg, judge_cfg, gateway, state.verdicts);
        if (scored.empty()) {
            fail(Errc::CandidateFailed,
                 "generation " + std::to_string(g) + " produced no scoreable candidate");
        }
        std::vector<Scored> pool = top;
        for (auto& s : scored) pool.push_back(std::move(s));
        std::sort(pool.begin(), pool.end(), ranks_before);
        state.pool = pool;
        state.history.push_back({g, std::move(pool)});
        state.completed_generation = g;
        if (on_generation) on_generation(state);
    }

    const Scored* best = nullptr;
    for (const auto& snap : state.history) {
        for (const auto& m : snap.members) {
            if (best == nullptr || ranks_before(m, *best)) best = &m;
        }
    }
    if (best == nullptr) fail(Errc::CandidateFailed, "no candidate was scored");
    OptimizeResult result{best->first, best->second, state.history, state.verdicts};
    return result;
}

std::size_t planned_requests(std::size_t initial, std::size_t valset, const OptimizerConfig& cfg) {
    const auto k = static_cast<std::size_t>(cfg.top_k);
    const auto iters = static_cast<std::size_t>(cfg.iterations);
    return initial * valset * 2 + iters * (k + 1 + 2 * k * valset * 2);
}

std::vector<PromptCandidate> parse_initial_prompts(std::string_view content, std::string_view origin) {
    std::vector<std::vector<std::string>> blocks(1);
    for (const auto& line : text::split_lines(content)) {
        if (text::trim(line) == "---") {
            blocks.emplace_back();
        } else {
            blocks.back().push_back(line);
        }
    }
    std::vector<PromptCandidate> out;
    std::set<std::string> ids;
    for (auto& lines : blocks) {
        while (!lines.empty() && text::trim(lines.front()).empty()) lines.erase(lines.begin());
        if (lines.empty()) continue;
        PromptCandidate c;
        if (text::starts_with_icase(text::trim(lines.front()), "id:")) {
            c.id = text::trim(text::trim(lines.front()).substr(3));
            lines.erase(lines.begin());
        }
        std::string body;
        for (const auto& l : lines) {
            body += l;
            body += '\n';
        }
        c.text = text::trim(body);
        if (c.text.empty()) continue;
        if (c.id.empty()) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "init-%02zu", out.size() + 1);
            c.id = buf;
        }
        if (!ids.insert(c.id).second) {
            fail(Errc::DuplicateId, std::string(origin) + ": duplicate prompt id " + c.id);
        }
        out.push_back(std::move(c));
    }
    if (out.empty()) fail(Errc::InvalidArgument, std::string(origin) + ": no prompts found");
    return out;
}

std::vector<PromptCandidate> load_initial_prompts(const std::filesystem::path& path) {
    return parse_initial_prompts(read_file(path), path.string());
}

ValidationItem validation_from_json(const json& j) {
    ValidationItem v;
    v.qa_id = j.at("id").get<std::string>();
    v.question = j.at("question").get<std::string>();
    v.human_reference = j.at("reference").get<std::string>();
    v.reference_char_count = text::char_length(v.human_reference);
    if (v.qa_id.empty() || v.question.empty()) fail(Errc::InvalidArgument, "validation item needs id and question");
    if (v.reference_char_count < 1) fail(Errc::InvalidArgument, "validation item " + v.qa_id + " has empty reference");
    return v;
}

std::vector<ValidationItem> load_validation_set(const std::filesystem::path& path) {
    std::vector<ValidationItem> out;
    std::set<std::string> ids;
    for (const auto& row : read_jsonl(path)) {
        auto v = validation_from_json(row);
        if (!ids.insert(v.qa_id).second) fail(Errc::DuplicateId, "duplicate validation id " + v.qa_id);
        out.push_back(std::move(v));
    }
    if (out.empty()) fail(Errc::InvalidArgument, path.string() + ": validation set is empty");
    return out;
}

ordered_json to_json(const PromptCandidate& c) {
    ordered_json j;
    j["id"] = c.id;
    j["generation"] = c.generation;
    j["lineage"] = to_string(c.lineage);
    j["parent_ids"] = c.parent_ids;
    j["text"] = c.text;
    return j;
}

PromptCandidate candidate_from_json(const json& j) {
    PromptCandidate c;
    c.id = j.at("id").get<std::string>();
    c.generation = j.at("generation").get<int>();
    c.lineage = parse_lineage(j.at("lineage").get<std::string>());
    c.parent_ids = j.at("parent_ids").get<std::vector<std::string>>();
    c.text = j.at("text").get<std::string>();
    c.validate();
    return c;
}

ordered_json to_json(const PromptScore& s) {
    ordered_json j;
    j["prompt_id"] = s.prompt_id;
    j["comprehensive"] = s.comprehensive;
    j["mean_llm"] = s.mean_llm;
    j["mean_penalty"] = s.mean_penalty;
    j["failed_items"] = s.failed_items;
    ordered_json items = ordered_json::array();
    for (const auto& it : s.per_item) {
        ordered_json row;
        row["qa_id"] = it.qa_id;
        row["s_llm"] = it.s_llm;
        row["penalty"] = it.penalty;
        row["s_i"] = it.s_i;
        items.push_back(std::move(row));
    }
    j["per_item"] = std::move(items);
    return j;
}

PromptScore score_from_json(const json& j) {
    PromptScore s;
    s.prompt_id = j.at("prompt_id").get<std::string>();
    s.comprehensive = j.at("comprehensive").get<double>();
    s.mean_llm = j.at("mean_llm").get<double>();
    s.mean_penalty = j.at("mean_penalty").get<double>();
    s.failed_items = j.value("failed_items", std::size_t{0});
    for (const auto& row : j.at("per_item")) {
        s.per_item.push_back({row.at("qa_id").get<std::string>(), row.at("s_llm").get<double>(),
                              row.at("penalty").get<double>(), row.at("s_i").get<double>()});
    }
    return s;
}

std::vector<ordered_json> history_rows(const std::vector<GenerationSnapshot>& history) {
    std::vector<ordered_json> rows;
    for (const auto& snap : history) {
        for (std::size_t i = 0; i < snap.members.size(); ++i) {
            ordered_json row;
            row["generation"] = snap.generation;
            row["rank"] = i + 1;
            row["candidate"] = to_json(snap.members[i].first);
            row["score"] = to_json(snap.members[i].second);
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

namespace {

ordered_json scored_array(const std::vector<Scored>& members) {
    ordered_json arr = ordered_json::array();
    for (const auto& [c, s] : members) {
        ordered_json m;
        m["candidate"] = to_json(c);
        m["score"] = to_json(s);
        arr.push_back(std::move(m));
    }
    return arr;
}

std::vector<Scored> scored_from(const json& arr) {
    std::vector<Scored> out;
    for (const auto& m : arr) out.emplace_back(candidate_from_json(m.at("candidate")), score_from_json(m.at("score")));
    return out;
}

}  // namespace

ordered_json checkpoint_to_json(const OptimizeState& state) {
    ordered_json j;
    j["completed_generation"] = state.completed_generation;
    j["pool"] = scored_array(state.pool);
    ordered_json history = ordered_json::array();
    for (const auto& snap : state.history) {
        ordered_json h;
        h["generation"] = snap.generation;
        h["members"] = scored_array(snap.members);
        history.push_back(std::move(h));
    }
    j["history"] = std::move(history);
    ordered_json verdicts = ordered_json::object();
    for (const auto& [id, list] : state.verdicts) {
        ordered_json arr = ordered_json::array();
        for (const auto& v : list) arr.push_back(judge::to_json(v));
        verdicts[id] = std::move(arr);
    }
    j["verdicts"] = std::move(verdicts);
    return j;
}

OptimizeState checkpoint_from_json(const json& j) {
    OptimizeState state;
    state.completed_generation = j.at("completed_generation").get<int>();
    state.pool = scored_from(j.at("pool"));
    for (const auto& h : j.at("history")) {
        state.history.push_back({h.at("generation").get<int>(), scored_from(h.at("members"))});
    }
    for (const auto& [id, arr] : j.at("verdicts").items()) {
        auto& list = state.verdicts[id];
        for (const auto& v : arr) list.push_back(judge::verdict_from_json(v));
    }
    return state;
}

}  // namespace distill::popt
