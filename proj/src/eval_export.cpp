#include "distill/eval_export.hpp"

#include <cmath>
#include <cstdio>
#include <set>

#include <spdlog/spdlog.h>

#include "distill/digest.hpp"
#include "distill/error.hpp"
#include "distill/parallel.hpp"
#include "distill/prompt_opt.hpp"
#include "distill/rng.hpp"
#include "distill/text.hpp"

namespace distill::evalx {

TestItem test_item_from_json(const json& j) {
    TestItem item;
    item.id = j.at("id").get<std::string>();
    item.question = j.at("question").get<std::string>();
    item.human_reference = j.at("reference").get<std::string>();
    if (item.id.empty()) fail(Errc::InvalidArgument, "test item without id");
    if (text::char_length(item.human_reference) == 0) {
        fail(Errc::InvalidArgument, "test item " + item.id + " has an empty reference");
    }
    if (j.contains("outputs")) {
        for (const auto& [model, out] : j.at("outputs").items()) {
            if (out.is_null()) {
                item.model_outputs[model] = std::nullopt;
            } else {
                item.model_outputs[model] = out.get<std::string>();
            }
        }
    }
    return item;
}

ordered_json to_json(const TestItem& item) {
    ordered_json j;
    j["id"] = item.id;
    j["question"] = item.question;
    j["reference"] = item.human_reference;
    ordered_json outputs = ordered_json::object();
    for (const auto& [model, out] : item.model_outputs) {
        outputs[model] = out ? ordered_json(*out) : ordered_json(nullptr);
    }
    j["outputs"] = std::move(outputs);
    return j;
}

std::vector<TestItem> load_test_set(const std::filesystem::path& path) {
    std::vector<TestItem> out;
    std::set<std::string> ids;
    for (const auto& row : read_jsonl(path)) {
        auto item = test_item_from_json(row);
        if (!ids.insert(item.id).second) fail(Errc::DuplicateId, "duplicate test item " + item.id);
        out.push_back(std::move(item));
    }
    if (out.empty()) fail(Errc::InvalidArgument, path.string() + ": test set is empty");
    return out;
}

namespace {

std::set<std::string> model_names(const std::vector<TestItem>& test_set) {
    std::set<std::string> models;
    for (const auto& item : test_set) {
        for (const auto& [m, out] : item.model_outputs) models.insert(m);
    }
    return models;
}

}  // namespace

std::map<std::string, ModelVerdicts> judge_test_set(const std::vector<TestItem>& test_set,
                                                    const judge::JudgeConfig& judge_cfg,
                                                    const BenchmarkOptions& options,
                                                    llm::Gateway& gateway) {
    if (test_set.empty()) fail(Errc::InvalidArgument, "test set is empty");
    struct Task {
        std::size_t item;
        std::string model;
    };
    std::vector<Task> tasks;
    for (std::size_t i = 0; i < test_set.size(); ++i) {
        for (const auto& [model, out] : test_set[i].model_outputs) tasks.push_back({i, model});
    }
    std::vector<std::optional<judge::JudgeVerdict>> results(tasks.size());
    parallel_for(tasks.size(), static_cast<std::size_t>(gateway.config().max_in_flight),
                 [&](std::size_t t) {
                     const auto& item = test_set[tasks[t].item];
                     const auto& out = item.model_outputs.at(tasks[t].model);
                     if (!out || text::trim(*out).empty()) return;
                     QAPair qa;
                     qa.question_id = item.id;
                     qa.question = item.question;
                     qa.answer = *out;
                     qa.model = tasks[t].model;
                     qa.answer_char_count = text::char_length(*out);
                     try {
                         results[t] = judge::judge_answer(qa, item.human_reference, judge_cfg, gateway);
                     } catch (const Error& e) {
                         if (e.code() != Errc::JudgeFailed) throw;
                         spdlog::warn("{}", e.what());
                     }
                 });

    std::map<std::string, ModelVerdicts> judged;
    std::map<std::string, std::size_t> totals;
    for (const auto& m : model_names(test_set)) judged[m];
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        auto& mv = judged[tasks[t].model];
        ++totals[tasks[t].model];
        if (results[t]) {
            mv.verdicts.push_back(std::move(*results[t]));
        } else {
            ++mv.failed;
        }
    }
    for (const auto& [model, mv] : judged) {
        const double budget = options.max_failure_fraction * static_cast<double>(totals[model]);
        if (mv.verdicts.empty() || static_cast<double>(mv.failed) > budget) {
            fail(Errc::JudgeFailed, "model " + model + ": " + std::to_string(mv.failed) + " of " +
                                        std::to_string(totals[model]) +
                                        " items failed, over the failure budget");
        }
    }
    return judged;
}

std::vector<EvalReport> build_reports(const std::vector<TestItem>& test_set,
                                      const std::map<std::string, ModelVerdicts>& judged,
                                      const BenchmarkOptions& options) {
    std::vector<EvalReport> reports;
    for (const auto& [model, mv] : judged) {
        std::vector<metrics::TokenSequence> candidates;
        std::vector<metrics::TokenSequence> references;
        for (const auto& item : test_set) {
            const auto it = item.model_outputs.find(model);
            if (it == item.model_outputs.end() || !it->second) continue;
            candidates.push_back(metrics::tokenize(*it->second));
            references.push_back(metrics::tokenize(item.human_reference));
        }
        EvalReport r;
        r.model_name = model;
        if (!candidates.empty()) {
            r.metrics = metrics::compute_metric_row(candidates, references, options.bleu_mode);
        }
        popt::PromptScore agg;
        for (const auto& v : mv.verdicts) {
            const double penalty = popt::length_penalty(v.response_length, v.reference_length, options.alpha);
            agg.per_item.push_back({v.qa_id, static_cast<double>(v.overall), penalty, v.overall - penalty});
        }
        popt::aggregate(agg);
        r.judge_mean = agg.mean_llm;
        r.length_penalty_mean = agg.mean_penalty;
        r.comprehensive_mean = agg.comprehensive;
        r.item_count = mv.verdicts.size();
        r.failed_items = mv.failed;
        reports.push_back(std::move(r));
    }
    return reports;
}

std::vector<EvalReport> run_benchmark(const std::vector<TestItem>& test_set,
                                      const judge::JudgeConfig& judge_cfg,
                                      const BenchmarkOptions& options, llm::Gateway& gateway) {
    return build_reports(test_set, judge_test_set(test_set, judge_cfg, options, gateway), options);
}

std::vector<std::string> report_columns() {
    return {"Model",   "BLEU-1",  "BLEU-2",  "BLEU-3",  "BLEU-4",              "GLEU",
            "ROUGE-1", "ROUGE-2", "ROUGE-L", "Comprehensive Score", "LLM-as-Judge", "Length Penalty"};
}

namespace {

std::string fmt(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

std::vector<std::string> report_cells(const EvalReport& r) {
    std::vector<std::string> cells{r.model_name};
    for (double b : r.metrics.bleu) cells.push_back(fmt(b, 3));
    cells.push_back(fmt(r.metrics.gleu, 3));
    cells.push_back(fmt(r.metrics.rouge_1.f1, 3));
    cells.push_back(fmt(r.metrics.rouge_2.f1, 3));
    cells.push_back(fmt(r.metrics.rouge_l.f1, 3));
    cells.push_back(fmt(r.comprehensive_mean, 2));
    cells.push_back(fmt(r.judge_mean, 2));
    cells.push_back(fmt(r.length_penalty_mean, 2));
    return cells;
}

std::string render_report(const std::vector<EvalReport>& reports, ReportFormat format) {
    if (reports.empty()) fail(Errc::InvalidArgument, "no reports to render");
    const auto columns = report_columns();
    std::string out;
    auto row = [&](const std::vector<std::string>& cells) {
        if (format == ReportFormat::Markdown) {
            out += "|";
            for (const auto& c : cells) out += " " + c + " |";
        } else {
            for (std::size_t i = 0; i < cells.size(); ++i) {
                if (i > 0) out += ',';
                out += csv_field(cells[i]);
            }
        }
        out += '\n';
    };
    row(columns);
    if (format == ReportFormat::Markdown) {
        out += "|";
        for (std::size_t i = 0; i < columns.size(); ++i) out += i == 0 ? " --- |" : " ---: |";
        out += '\n';
    }
    for (const auto& r : reports) row(report_cells(r));
    return out;
}

ordered_json to_json(const EvalReport& r) {
    ordered_json j;
    j["model"] = r.model_name;
    j["bleu"] = r.metrics.bleu;
    j["gleu"] = r.metrics.gleu;
    for (const auto& [name, prf] : {std::pair{"rouge_1", r.metrics.rouge_1},
                                    std::pair{"rouge_2", r.metrics.rouge_2},
                                    std::pair{"rouge_l", r.metrics.rouge_l}}) {
        j[name] = {{"precision", prf.precision}, {"recall", prf.recall}, {"f1", prf.f1}};
    }
    j["judge_mean"] = r.judge_mean;
    j["length_penalty_mean"] = r.length_penalty_mean;
    j["comprehensive_mean"] = r.comprehensive_mean;
    j["item_count"] = r.item_count;
    j["failed_items"] = r.failed_items;
    return j;
}

namespace {

ordered_json export_meta(const QAPair& p) {
    ordered_json meta;
    meta["question_id"] = p.question_id;
    meta["prompt_id"] = p.prompt_id;
    meta["model"] = p.model;
    meta["reference_paragraph_id"] =
        p.reference_paragraph_id ? ordered_json(*p.reference_paragraph_id) : ordered_json(nullptr);
    return meta;
}

ordered_json export_record(const QAPair& p, ExportFormat format) {
    ordered_json j;
    if (format == ExportFormat::Conversation) {
        j["messages"] = ordered_json::array({{{"role", "user"}, {"content", p.question}},
                                             {{"role", "assistant"}, {"content", p.answer}}});
    } else {
        j["instruction"] = p.question;
        j["input"] = "";
        j["output"] = p.answer;
    }
    j["meta"] = export_meta(p);
    return j;
}

}  // namespace

ExportResult export_training(const std::vector<QAPair>& pairs, const ExportOptions& options) {
    if (pairs.empty()) fail(Errc::InvalidArgument, "no QA pairs to export");
    if (!(options.split_ratio > 0.0 && options.split_ratio <= 1.0)) {
        fail(Errc::InvalidArgument, "split_ratio must be in (0, 1]");
    }
    std::set<std::string> ids;
    std::set<std::string> prompt_ids;
    for (const auto& p : pairs) {
        if (!ids.insert(p.question_id).second) {
            fail(Errc::DuplicateQuestionId, "duplicate question id " + p.question_id);
        }
        prompt_ids.insert(p.prompt_id);
    }

    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(options.rng_seed, "export:shuffle");
    rng.shuffle(order);
    const auto n = pairs.size();
    const auto n_train = std::min<std::size_t>(
        n, static_cast<std::size_t>(std::llround(options.split_ratio * static_cast<double>(n))));

    std::vector<ordered_json> train;
    std::vector<ordered_json> val;
    ordered_json emitted = ordered_json::array();
    for (std::size_t k = 0; k < n; ++k) {
        const auto& p = pairs[order[k]];
        (k < n_train ? train : val).push_back(export_record(p, options.format));
        emitted.push_back(p.question_id);
    }

    ExportResult result;
    result.train_jsonl = to_jsonl(train);
    result.val_jsonl = to_jsonl(val);

    std::string source;
    for (const auto& id : prompt_ids) source += (source.empty() ? "" : ",") + id;

    ordered_json m;
    m["record_count"] = n;
    m["split_counts"] = {{"train", train.size()}, {"val", val.size()}};
    m["content_digest"] = sha256_hex(sha256_hex(result.train_jsonl) + "\n" + sha256_hex(result.val_jsonl));
    m["files"] = {{"train.jsonl", sha256_hex(result.train_jsonl)}, {"val.jsonl", sha256_hex(result.val_jsonl)}};
    m["source_prompt_id"] = source;
    m["format"] = options.format == ExportFormat::Conversation ? "conversation" : "instruction";
    m["split_ratio"] = options.split_ratio;
    m["order"] = std::move(emitted);
    m["notes"] = {{"intended_use", "LoRA fine-tuning input"},
                  {"base_model", "ChatGLM3-6B"},
                  {"lora_rank", 64},
                  {"lora_alpha", 128},
                  {"learning_rate", 1e-4},
                  {"batch_size", 32},
                  {"max_context_length", 2048}};
    result.manifest = std::move(m);
    return result;
}

void write_export(const std::filesystem::path& dir, const ExportResult& result) {
    write_file(dir / "train.jsonl", result.train_jsonl);
    write_file(dir / "val.jsonl", result.val_jsonl);
    write_file(dir / "manifest.json", result.manifest.dump(2) + "\n");
}

QAPair parse_export_record(const json& record) {
    QAPair p;
    if (record.contains("messages")) {
        for (const auto& msg : record.at("messages")) {
            const auto role = msg.at("role").get<std::string>();
            if (role == "user") p.question = msg.at("content").get<std::string>();
            if (role == "assistant") p.answer = msg.at("content").get<std::string>();
        }
    } else {
        p.question = record.at("instruction").get<std::string>();
        p.answer = record.at("output").get<std::string>();
    }
    const auto& meta = record.at("meta");
    p.question_id = meta.at("question_id").get<std::string>();
    p.prompt_id = meta.at("prompt_id").get<std::string>();
    p.model = meta.at("model").get<std::string>();
    if (!meta.at("reference_paragraph_id").is_null()) {
        p.reference_paragraph_id = meta.at("reference_paragraph_id").get<std::string>();
    }
    p.answer_char_count = text::char_length(p.answer);
    return p;
}

}  // namespace distill::evalx
