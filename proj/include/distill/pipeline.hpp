#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "distill/answer_gen.hpp"
#include "distill/corpus_ingest.hpp"
#include "distill/eval_export.hpp"
#include "distill/judge.hpp"
#include "distill/llm_gateway.hpp"
#include "distill/prompt_opt.hpp"
#include "distill/question_gen.hpp"

namespace distill::pipeline {

enum class Stage { Ingest, GenQuestions, SampleQuestions, OptimizePrompt, GenAnswers, Judge, Evaluate, Export };

std::string_view to_string(Stage stage) noexcept;
std::optional<Stage> parse_stage(std::string_view name);
/// Run order of a full pipeline.
const std::vector<Stage>& all_stages();

struct Paths {
    std::vector<std::filesystem::path> textbooks;
    std::filesystem::path seed_pool;
    std::optional<std::filesystem::path> answer_template;
    std::optional<std::filesystem::path> initial_prompts;
    std::optional<std::filesystem::path> validation_set;
    std::optional<std::filesystem::path> test_set;
};

struct TeacherSpec {
    std::string model;
    std::string backend;
};

struct PipelineConfig {
    std::filesystem::path config_path;
    std::filesystem::path work_dir;
    std::uint64_t seed = 0;
    Paths paths;
    std::map<std::string, llm::BackendConfig> backends;
    std::vector<TeacherSpec> teachers;
    /// Answer model; defaults to the first teacher.
    answer::ModelSettings answer;
    std::string answer_backend;
    judge::JudgeConfig judge;
    std::string judge_backend;
    /// Also answer the test questions with the answer model, with and without the optimized prompt.
    bool judge_teacher_baselines = true;
    popt::OptimizerConfig optimizer;
    std::string meta_backend;
    qgen::GenPlan generation;
    qgen::DedupOptions dedup;
    ingest::SplitPolicy split;
    evalx::BenchmarkOptions benchmark;
    evalx::ExportOptions export_options;
    /// Constants that differ from the reference setting; accepted but reported.
    std::vector<std::string> warnings;

    /// Backend name serving `model`.
    const std::string& backend_for(const std::string& model) const;
};

/// Parses and validates a TOML config. Relative paths resolve against the config's directory.
/// Throws ValidationError listing every violation.
PipelineConfig load_config(const std::filesystem::path& config_path,
                           const std::optional<std::filesystem::path>& work_dir_override = std::nullopt);
PipelineConfig parse_config(std::string_view toml_text, const std::filesystem::path& config_path,
                            const std::optional<std::filesystem::path>& work_dir_override = std::nullopt);

/// Builds the backend behind a named config; tests substitute instrumented backends.
using BackendFactory =
    std::function<std::shared_ptr<llm::Backend>(const std::string& name, const llm::BackendConfig&)>;
BackendFactory default_backend_factory();

struct RunOptions {
    bool dry_run = false;
    bool resume = false;
};

struct StageOutcome {
    std::size_t planned_requests = 0;
    std::size_t backend_invocations = 0;
    std::size_t cache_hits = 0;
};

/// Runs stages against one work directory. Backends are created lazily, so a dry run never
/// constructs one.
class Runner {
public:
    Runner(PipelineConfig config, BackendFactory factory = default_backend_factory());

    StageOutcome run(Stage stage, const RunOptions& options);
    /// Estimated backend requests of `stage` with an empty cache and no retries.
    std::size_t planned_requests(Stage stage);

    const PipelineConfig& config() const noexcept { return config_; }
    llm::Gateway& gateway();

private:
    std::filesystem::path out(const std::string& rel) const { return config_.work_dir / rel; }
    void ingest();
    void gen_questions();
    void sample_questions();
    void optimize_prompt(bool resume);
    void gen_answers();
    void judge();
    void evaluate();
    void do_export();
    std::vector<ingest::TextbookParagraph> paragraphs_or_split() const;
    void journal(Stage stage, const std::vector<std::filesystem::path>& inputs,
                 const std::vector<std::string>& outputs);

    PipelineConfig config_;
    BackendFactory factory_;
    std::shared_ptr<llm::ResponseCache> cache_;
    std::map<std::string, std::shared_ptr<llm::Gateway>> gateways_;
    std::unique_ptr<llm::Gateway> router_;
};

/// Entry point of the command-line tool. Returns the process exit code.
int run_cli(int argc, char** argv);

}  // namespace distill::pipeline
