#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "distill/answer_gen.hpp"
#include "distill/judge.hpp"
#include "distill/llm_gateway.hpp"
#include "distill/rng.hpp"

namespace distill::popt {

enum class Lineage { Initial, Reflected, Resampled };

std::string_view to_string(Lineage lineage) noexcept;
Lineage parse_lineage(std::string_view s);

struct PromptCandidate {
    std::string id;
    std::string text;
    int generation = 0;
    Lineage lineage = Lineage::Initial;
    std::vector<std::string> parent_ids;

    /// generation 0 iff initial; reflected has one parent; resampled at least one.
    void validate() const;
    bool operator==(const PromptCandidate&) const = default;
};

struct ItemScore {
    std::string qa_id;
    double s_llm = 0.0;
    double penalty = 0.0;
    double s_i = 0.0;

    bool operator==(const ItemScore&) const = default;
};

struct PromptScore {
    std::string prompt_id;
    std::vector<ItemScore> per_item;
    double mean_llm = 0.0;
    double mean_penalty = 0.0;
    double comprehensive = 0.0;
    /// Validation items excluded because answering or judging failed.
    std::size_t failed_items = 0;

    bool operator==(const PromptScore&) const = default;
};

struct ValidationItem {
    std::string qa_id;
    std::string question;
    std::string human_reference;
    std::size_t reference_char_count = 1;
};

struct OptimizerConfig {
    double alpha = 0.5;
    int iterations = 3;
    int top_k = 5;
    int feedback_samples = 5;
    int initial_pool_size = 10;
    std::uint64_t rng_seed = 0;
    /// Model answering the validation questions under each candidate prompt.
    answer::ModelSettings answer_settings{"teacher", 0.7, 1024};
    /// Model performing reflection and resampling.
    std::string meta_model = "teacher";
    double meta_temperature = 0.7;
    int meta_max_tokens = 2048;
    double max_failure_fraction = 0.2;

    void validate() const;
};

/// 0 when l_res <= l_ref, else alpha * (l_res / l_ref - 1).
double length_penalty(std::size_t l_res, std::size_t l_ref, double alpha);
/// s_llm minus the length penalty; not clamped.
double comprehensive_score(double s_llm, std::size_t l_res, std::size_t l_ref, double alpha);

/// Arithmetic means over per_item; fills mean_llm, mean_penalty and comprehensive.
void aggregate(PromptScore& score);

/// Verdicts per candidate id, in validation-set order.
using VerdictStore = std::map<std::string, std::vector<judge::JudgeVerdict>>;

/// Answers every validation item with the candidate as system prompt, judges each answer
/// against its human reference and averages s_i. Failed items are excluded and counted;
/// more than max_failure_fraction failures raise CandidateFailed. Verdicts go to `store`.
PromptScore score_candidate(const PromptCandidate& candidate, const std::vector<ValidationItem>& valset,
                            const OptimizerConfig& cfg, const judge::JudgeConfig& judge_cfg,
                            llm::Gateway& gateway, VerdictStore& store);

using Scored = std::pair<PromptCandidate, PromptScore>;

/// Descending comprehensive score, then shorter text, then id. Throws PoolTooSmall.
std::vector<Scored> select_top(std::vector<Scored> pool, std::size_t k);
bool ranks_before(const Scored& a, const Scored& b);

llm::ChatRequest assemble_reflection_prompt(const PromptCandidate& candidate, const PromptScore& score,
                                            const std::vector<std::string>& feedback,
                                            const OptimizerConfig& cfg);
llm::ChatRequest assemble_resample_prompt(const std::vector<Scored>& top, std::size_t n_out,
                                          const OptimizerConfig& cfg);

/// Contents of the last <prompt>...</prompt> block; EmptyParse when there is none.
std::string extract_prompt(std::string_view output);
/// <prompt> blocks when present, otherwise numbered or bulleted lines.
std::vector<std::string> extract_prompt_list(std::string_view output);

/// Rationales sampled for reflection: min(feedback_samples, available), drawn with `rng`.
std::vector<std::string> sample_feedback(const std::vector<judge::JudgeVerdict>& verdicts,
                                         std::size_t feedback_samples, Rng& rng);

PromptCandidate reflect(const PromptCandidate& candidate, const PromptScore& score,
                        const VerdictStore& store, const OptimizerConfig& cfg, int generation,
                        std::size_t index, llm::Gateway& gateway);

/// Keeps what parsed when fewer than n_out prompts come back (logged as ShortParse).
std::vector<PromptCandidate> resample(const std::vector<Scored>& top, std::size_t n_out,
                                      const OptimizerConfig& cfg, int generation,
                                      llm::Gateway& gateway);

struct GenerationSnapshot {
    int generation = 0;
    std::vector<Scored> members;
};

struct OptimizeState {
    int completed_generation = -1;
    std::vector<Scored> pool;
    std::vector<GenerationSnapshot> history;
    VerdictStore verdicts;
};

struct OptimizeResult {
    PromptCandidate best;
    PromptScore best_score;
    std::vector<GenerationSnapshot> history;
    VerdictStore verdicts;
};

/// Called after every completed generation (checkpointing).
using GenerationHook = std::function<void(const OptimizeState&)>;

OptimizeResult optimize(const std::vector<PromptCandidate>& initial,
                        const std::vector<ValidationItem>& valset, const OptimizerConfig& cfg,
                        const judge::JudgeConfig& judge_cfg, llm::Gateway& gateway,
                        std::optional<OptimizeState> resume = std::nullopt,
                        const GenerationHook& on_generation = {});

/// Backend requests of a full run when no judge retries occur.
std::size_t planned_requests(std::size_t initial, std::size_t valset, const OptimizerConfig& cfg);

/// Blocks separated by lines "---"; a block may start with "id: <id>". Missing ids become init-NN.
std::vector<PromptCandidate> parse_initial_prompts(std::string_view content,
                                                   std::string_view origin = "<memory>");
std::vector<PromptCandidate> load_initial_prompts(const std::filesystem::path& path);

/// JSONL rows {id, question, reference}.
std::vector<ValidationItem> load_validation_set(const std::filesystem::path& path);
ValidationItem validation_from_json(const json& j);

ordered_json to_json(const PromptCandidate& c);
PromptCandidate candidate_from_json(const json& j);
ordered_json to_json(const PromptScore& s);
PromptScore score_from_json(const json& j);

/// One row per (generation, member).
std::vector<ordered_json> history_rows(const std::vector<GenerationSnapshot>& history);
ordered_json checkpoint_to_json(const OptimizeState& state);
OptimizeState checkpoint_from_json(const json& j);

}  // namespace distill::popt
