#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "distill/answer_gen.hpp"
#include "distill/judge.hpp"
#include "distill/llm_gateway.hpp"
#include "distill/text_metrics.hpp"

namespace distill::evalx {

using answer::QAPair;

struct TestItem {
    std::string id;
    std::string question;
    std::string human_reference;
    /// nullopt marks a model that failed to answer this item.
    std::map<std::string, std::optional<std::string>> model_outputs;
};

/// JSONL rows {id, question, reference, outputs: {model: text | null}}.
TestItem test_item_from_json(const json& j);
ordered_json to_json(const TestItem& item);
std::vector<TestItem> load_test_set(const std::filesystem::path& path);

struct EvalReport {
    std::string model_name;
    metrics::MetricRow metrics;
    double judge_mean = 0.0;
    double length_penalty_mean = 0.0;
    double comprehensive_mean = 0.0;
    std::size_t item_count = 0;
    std::size_t failed_items = 0;
};

struct BenchmarkOptions {
    double alpha = 0.5;
    metrics::BleuMode bleu_mode = metrics::BleuMode::Corpus;
    double max_failure_fraction = 0.2;
};

struct ModelVerdicts {
    std::vector<judge::JudgeVerdict> verdicts;  // test-set order, failures omitted
    std::size_t failed = 0;
};

/// Judges every (item, model) output. A model whose missing outputs plus judge failures exceed
/// the failure budget raises JudgeFailed.
std::map<std::string, ModelVerdicts> judge_test_set(const std::vector<TestItem>& test_set,
                                                    const judge::JudgeConfig& judge_cfg,
                                                    const BenchmarkOptions& options,
                                                    llm::Gateway& gateway);

/// Metric rows over the answered items plus judge, penalty and comprehensive means, one report per model.
std::vector<EvalReport> build_reports(const std::vector<TestItem>& test_set,
                                      const std::map<std::string, ModelVerdicts>& judged,
                                      const BenchmarkOptions& options);

std::vector<EvalReport> run_benchmark(const std::vector<TestItem>& test_set,
                                      const judge::JudgeConfig& judge_cfg,
                                      const BenchmarkOptions& options, llm::Gateway& gateway);

enum class ReportFormat { Markdown, Csv };

std::vector<std::string> report_columns();
/// Cells in column order: 3 decimals for n-gram metrics, 2 for judge-derived values.
std::vector<std::string> report_cells(const EvalReport& report);
std::string render_report(const std::vector<EvalReport>& reports, ReportFormat format);

ordered_json to_json(const EvalReport& report);

enum class ExportFormat { Conversation, Instruction };

struct ExportOptions {
    double split_ratio = 0.9;
    std::uint64_t rng_seed = 0;
    ExportFormat format = ExportFormat::Conversation;
};

struct ExportResult {
    std::string train_jsonl;
    std::string val_jsonl;
    ordered_json manifest;
};

/// Seeded shuffle, then the first round(ratio * n) records go to train. Throws DuplicateQuestionId.
ExportResult export_training(const std::vector<QAPair>& pairs, const ExportOptions& options);
void write_export(const std::filesystem::path& dir, const ExportResult& result);

/// Inverse of one exported record.
QAPair parse_export_record(const json& record);

}  // namespace distill::evalx
