#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "distill/corpus_ingest.hpp"
#include "distill/llm_gateway.hpp"
#include "distill/rng.hpp"

namespace distill::qgen {

using ingest::SeedQuestion;
using ingest::TextbookParagraph;

enum class Origin { Paragraph, Sampled };

std::string_view to_string(Origin origin) noexcept;

struct QuestionRecord {
    std::string id;
    std::string text;
    Origin origin = Origin::Paragraph;
    std::optional<std::string> source_paragraph_id;
    std::string generator_model;
    int round = 0;

    bool operator==(const QuestionRecord&) const = default;
};

struct GenPlan {
    /// Fixed per-paragraph question count; when unset the count follows paragraph length.
    std::optional<int> per_paragraph_target;
    int in_context_seed_count = 6;
    int in_context_generated_count = 2;
    int style_example_count = 3;
    int content_example_count = 6;
    int sampling_rounds = 2;
    /// Questions requested per sampling call; a round issues ceil(|previous round| / this) calls.
    int sampled_per_request = 10;
    /// Paragraphs in one wave share the generated-example pool of all earlier waves.
    int wave_size = 8;
    int chars_per_question = 100;
    int min_target = 5;
    int max_target = 15;
    double temperature = 0.7;
    int max_tokens = 2048;
    std::uint64_t rng_seed = 0;

    void validate() const;
};

/// clamp(ceil(char_count / chars_per_question), min_target, max_target), or the fixed target.
int target_count(std::size_t char_count, const GenPlan& plan);

struct InContextExamples {
    std::vector<std::string> seed;
    std::vector<std::string> generated;
};

/// 6 seed + 2 generated examples; missing generated examples are topped up from the seed pool.
InContextExamples pick_paragraph_examples(const std::vector<SeedQuestion>& seed_pool,
                                          const std::vector<QuestionRecord>& generated_pool,
                                          const GenPlan& plan, Rng& rng);

llm::ChatRequest assemble_paragraph_prompt(const TextbookParagraph& paragraph,
                                           const InContextExamples& examples, int target_count,
                                           const std::string& model, const GenPlan& plan);

llm::ChatRequest assemble_sampling_prompt(const std::vector<std::string>& content_examples,
                                          const std::vector<std::string>& style_examples,
                                          int target_count, const std::string& model,
                                          const GenPlan& plan);

/// Strips a numbered ("1." "1、" "(1)") or bulleted ("-" "•") marker; nullopt for other lines.
std::optional<std::string> parse_list_item(std::string_view line);

/// Throws EmptyParse when nothing is extracted.
std::vector<std::string> parse_question_list(std::string_view llm_output);

std::string question_id(const std::string& model, Origin origin, const std::string& anchor,
                        int round, std::size_t index, const std::string& text);

std::vector<QuestionRecord> generate_for_paragraph(const TextbookParagraph& paragraph,
                                                   const std::vector<SeedQuestion>& seed_pool,
                                                   const std::vector<QuestionRecord>& generated_pool,
                                                   const GenPlan& plan, const std::string& model,
                                                   llm::Gateway& gateway);

struct GenerationFailure {
    std::string model;
    std::string scope;  // paragraph id or "round:<r>:<k>"
    std::string error_kind;
    std::string message;
};

struct RoundResult {
    std::vector<QuestionRecord> records;
    std::vector<GenerationFailure> failures;
};

/// Paragraph-grounded generation in deterministic waves; failures are logged, not fatal.
RoundResult generate_round0(const std::vector<TextbookParagraph>& paragraphs,
                            const std::vector<SeedQuestion>& seed_pool, const GenPlan& plan,
                            const std::string& model, llm::Gateway& gateway);

/// One sampling call. previous_round must hold at least content_example_count records.
std::vector<QuestionRecord> sample_new_questions(const std::vector<QuestionRecord>& previous_round,
                                                 const std::vector<SeedQuestion>& seed_pool,
                                                 const GenPlan& plan, const std::string& model,
                                                 llm::Gateway& gateway, std::size_t request_index = 0);

/// Rounds 1..sampling_rounds; round r+1 draws its content examples from round r.
RoundResult run_sampling_rounds(const std::vector<QuestionRecord>& round0,
                                const std::vector<SeedQuestion>& seed_pool, const GenPlan& plan,
                                const std::string& model, llm::Gateway& gateway);

/// Number of sampling calls a round over `previous_size` questions issues.
std::size_t sampling_requests_for(std::size_t previous_size, const GenPlan& plan);

// ---------------------------------------------------------------------------
// Deduplication

/// Trim, collapse whitespace, strip terminal punctuation, case-fold.
std::string normalize_question(std::string_view text);

/// Sorted distinct character 3-grams of the normalized text, each packed exactly into 63 bits.
/// Texts shorter than three code points yield one padded gram.
std::vector<std::uint64_t> char_trigrams(std::string_view normalized);

double jaccard(const std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b);

struct DedupAuditEntry {
    std::string dropped_id;
    std::string kept_id;
    double similarity = 0.0;
    bool exact = false;
};

struct DedupResult {
    std::vector<QuestionRecord> kept;
    std::vector<DedupAuditEntry> audit;
};

struct DedupOptions {
    double jaccard_threshold = 0.8;
    /// false restores exact-only deduplication.
    bool fuzzy = true;
};

DedupResult dedup(const std::vector<QuestionRecord>& questions, const DedupOptions& options = {});

struct ModelQuestions {
    std::string model;
    std::vector<QuestionRecord> records;
};

/// Concatenate in model-name order (stable), then dedup.
DedupResult merge_models(std::vector<ModelQuestions> lists, const DedupOptions& options = {});

/// Paragraphs without any surviving round-0 question.
std::vector<std::string> uncovered_paragraphs(const std::vector<TextbookParagraph>& paragraphs,
                                              const std::vector<QuestionRecord>& questions);

ordered_json to_json(const QuestionRecord& q);
QuestionRecord question_from_json(const json& j);
ordered_json to_json(const DedupAuditEntry& e);
ordered_json to_json(const GenerationFailure& f);

std::vector<QuestionRecord> read_questions(const std::filesystem::path& path);

}  // namespace distill::qgen
