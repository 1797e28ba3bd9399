#include "distill/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <iostream>
#include <mutex>
#include <set>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>
#include <toml.hpp>

#include "distill/digest.hpp"
#include "distill/error.hpp"
#include "distill/rng.hpp"
#include "distill/text.hpp"

namespace distill::pipeline {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Stages

namespace {

constexpr std::array<std::pair<Stage, std::string_view>, 8> kStageNames{{
    {Stage::Ingest, "ingest"},
    {Stage::GenQuestions, "gen-questions"},
    {Stage::SampleQuestions, "sample-questions"},
    {Stage::OptimizePrompt, "optimize-prompt"},
    {Stage::GenAnswers, "gen-answers"},
    {Stage::Judge, "judge"},
    {Stage::Evaluate, "evaluate"},
    {Stage::Export, "export"},
}};

}  // namespace

std::string_view to_string(Stage stage) noexcept {
    for (const auto& [s, name] : kStageNames) {
        if (s == stage) return name;
    }
    return "unknown";
}

std::optional<Stage> parse_stage(std::string_view name) {
    for (const auto& [s, n] : kStageNames) {
        if (n == name) return s;
    }
    return std::nullopt;
}

const std::vector<Stage>& all_stages() {
    static const std::vector<Stage> order{Stage::Ingest,         Stage::GenQuestions, Stage::SampleQuestions,
                                          Stage::OptimizePrompt, Stage::GenAnswers,   Stage::Judge,
                                          Stage::Evaluate,       Stage::Export};
    return order;
}

// ---------------------------------------------------------------------------
// Config

const std::string& PipelineConfig::backend_for(const std::string& model) const {
    for (const auto& t : teachers) {
        if (t.model == model) return t.backend;
    }
    if (model == answer.model) return answer_backend;
    if (model == judge.judge_model) return judge_backend;
    if (model == optimizer.meta_model) return meta_backend;
    fail(Errc::ValidationError, "no backend configured for model '" + model + "'");
}

namespace {

class TableReader {
public:
    TableReader(const toml::table* table, std::string context, std::vector<std::string>& errors)
        : table_(table), context_(std::move(context)), errors_(errors) {}

    bool present() const { return table_ != nullptr; }

    template <typename T>
    void get(std::string_view key, T& out) {
        const toml::node* node = find(key);
        if (node == nullptr) return;
        if constexpr (std::is_same_v<T, bool>) {
            if (auto v = node->value_exact<bool>()) {
                out = *v;
                return;
            }
            bad(key, "a boolean");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (auto v = node->value_exact<std::string>()) {
                out = *v;
                return;
            }
            bad(key, "a string");
        } else if constexpr (std::is_floating_point_v<T>) {
            if (auto v = node->value<double>()) {
                out = *v;
                return;
            }
            bad(key, "a number");
        } else {
            if (auto v = node->value_exact<std::int64_t>()) {
                if (*v >= static_cast<std::int64_t>(std::numeric_limits<T>::min()) &&
                    static_cast<std::uint64_t>(std::max<std::int64_t>(*v, 0)) <=
                        static_cast<std::uint64_t>(std::numeric_limits<T>::max())) {
                    out = static_cast<T>(*v);
                    return;
                }
            }
            bad(key, "an integer in range");
        }
    }

    template <typename T>
    void get(std::string_view key, std::optional<T>& out) {
        if (find(key) == nullptr) return;
        T value{};
        get(key, value);
        out = value;
    }

    void millis(std::string_view key, std::chrono::milliseconds& out) {
        std::int64_t ms = out.count();
        get(key, ms);
        out = std::chrono::milliseconds(ms);
    }

    const toml::table* table(std::string_view key) {
        const toml::node* node = find(key);
        if (node == nullptr) return nullptr;
        if (!node->is_table()) {
            bad(key, "a table");
            return nullptr;
        }
        return node->as_table();
    }

    const toml::array* array(std::string_view key) {
        const toml::node* node = find(key);
        if (node == nullptr) return nullptr;
        if (!node->is_array()) {
            bad(key, "an array");
            return nullptr;
        }
        return node->as_array();
    }

    /// Reports keys nobody asked for.
    void finish() {
        if (table_ == nullptr) return;
        for (const auto& [k, v] : *table_) {
            if (!seen_.count(std::string(k.str()))) {
                errors_.push_back(context_ + std::string(k.str()) + ": unknown key");
            }
        }
    }

    std::string where(std::string_view key) const { return context_ + std::string(key); }

private:
    const toml::node* find(std::string_view key) {
        seen_.insert(std::string(key));
        if (table_ == nullptr) return nullptr;
        return table_->get(key);
    }
    void bad(std::string_view key, std::string_view expected) {
        errors_.push_back(context_ + std::string(key) + ": expected " + std::string(expected));
    }

    const toml::table* table_;
    std::string context_;
    std::vector<std::string>& errors_;
    std::set<std::string> seen_;
};

template <typename Fn>
void check(std::vector<std::string>& errors, std::string_view context, Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        errors.push_back(std::string(context) + ": " + e.what());
    }
}

void deviation(std::vector<std::string>& warnings, std::string_view key, double value, double reference) {
    if (value != reference) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%.*s = %g differs from the reference setting %g",
                      static_cast<int>(key.size()), key.data(), value, reference);
        warnings.emplace_back(buf);
    }
}

constexpr std::array<std::string_view, 7> kSecretKeys{"api_key", "apikey", "key", "token",
                                                      "secret",  "password", "credential"};

fs::path resolve(const fs::path& base, const std::string& p) {
    return fs::absolute(base / fs::path(p)).lexically_normal();
}

}  // namespace

PipelineConfig parse_config(std::string_view toml_text, const fs::path& config_path,
                            const std::optional<fs::path>& work_dir_override) {
    toml::table root;
    try {
        root = toml::parse(toml_text, config_path.string());
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << config_path.string() << ":" << e.source().begin.line << ":" << e.source().begin.column
            << ": " << e.description();
        fail(Errc::ValidationError, msg.str());
    }

    std::vector<std::string> errors;
    PipelineConfig cfg;
    cfg.config_path = config_path;
    const fs::path base = config_path.has_parent_path() ? config_path.parent_path() : fs::path(".");

    TableReader top(&root, "", errors);
    std::int64_t seed = 0;
    top.get("seed", seed);
    if (seed < 0) errors.push_back("seed: must be >= 0");
    cfg.seed = static_cast<std::uint64_t>(seed);
    std::string work_dir = "work";
    top.get("work_dir", work_dir);
    cfg.work_dir = work_dir_override ? fs::absolute(*work_dir_override).lexically_normal() : resolve(base, work_dir);

    // [paths]
    TableReader paths(top.table("paths"), "paths.", errors);
    if (const auto* books = paths.array("textbooks")) {
        for (const auto& node : *books) {
            if (auto s = node.value_exact<std::string>()) {
                cfg.paths.textbooks.push_back(resolve(base, *s));
            } else {
                errors.push_back("paths.textbooks: entries must be strings");
            }
        }
    }
    if (cfg.paths.textbooks.empty()) errors.push_back("paths.textbooks: at least one textbook is required");
    std::string seed_pool;
    paths.get("seed_pool", seed_pool);
    if (seed_pool.empty()) {
        errors.push_back("paths.seed_pool: required");
    } else {
        cfg.paths.seed_pool = resolve(base, seed_pool);
    }
    auto optional_path = [&](std::string_view key, std::optional<fs::path>& out) {
        std::optional<std::string> s;
        paths.get(key, s);
        if (s) out = resolve(base, *s);
    };
    optional_path("answer_template", cfg.paths.answer_template);
    optional_path("initial_prompts", cfg.paths.initial_prompts);
    optional_path("validation_set", cfg.paths.validation_set);
    optional_path("test_set", cfg.paths.test_set);
    paths.finish();
    auto must_exist = [&](std::string_view key, const fs::path& p) {
        if (!p.empty() && !fs::exists(p)) errors.push_back("paths." + std::string(key) + ": " + p.string() + " does not exist");
    };
    for (const auto& t : cfg.paths.textbooks) must_exist("textbooks", t);
    must_exist("seed_pool", cfg.paths.seed_pool);
    for (const auto& [key, p] : {std::pair{"answer_template", cfg.paths.answer_template},
                                 std::pair{"initial_prompts", cfg.paths.initial_prompts},
                                 std::pair{"validation_set", cfg.paths.validation_set},
                                 std::pair{"test_set", cfg.paths.test_set}}) {
        if (p) must_exist(key, *p);
    }

    // [backends.<name>]
    if (const auto* backends = top.table("backends")) {
        for (const auto& [name_key, node] : *backends) {
            const std::string name(name_key.str());
            const std::string ctx = "backends." + name + ".";
            if (!node.is_table()) {
                errors.push_back(ctx.substr(0, ctx.size() - 1) + ": expected a table");
                continue;
            }
            const auto* tbl = node.as_table();
            for (auto secret : kSecretKeys) {
                if (tbl->contains(secret)) {
                    errors.push_back(ctx + std::string(secret) +
                                     ": credentials are never read from config files; name an environment "
                                     "variable with credential_env");
                }
            }
            TableReader r(tbl, ctx, errors);
            for (auto secret : kSecretKeys) (void)r.table(secret);  // reported above
            llm::BackendConfig b;
            std::string kind = "replay";
            r.get("kind", kind);
            if (kind == "http") {
                b.kind = llm::BackendKind::Http;
            } else if (kind == "replay") {
                b.kind = llm::BackendKind::Replay;
            } else if (kind == "scripted") {
                b.kind = llm::BackendKind::Scripted;
            } else {
                errors.push_back(ctx + "kind: expected http, replay or scripted");
            }
            r.get("endpoint", b.endpoint);
            r.get("credential_env", b.credential_env_var);
            r.get("simulator", b.simulator);
            std::optional<std::string> fixtures;
            r.get("fixtures_dir", fixtures);
            if (fixtures) b.fixtures_dir = resolve(base, *fixtures);
            r.get("max_in_flight", b.max_in_flight);
            r.get("retry_limit", b.retry_limit);
            r.millis("backoff_ms", b.backoff_base);
            r.millis("timeout_ms", b.request_timeout);
            r.finish();
            check(errors, ctx.substr(0, ctx.size() - 1), [&] { b.validate(); });
            if (b.kind == llm::BackendKind::Replay && b.fixtures_dir && !fs::is_directory(*b.fixtures_dir)) {
                errors.push_back(ctx + "fixtures_dir: " + b.fixtures_dir->string() + " is not a directory");
            }
            if (b.kind == llm::BackendKind::Scripted && b.simulator != "teacher") {
                errors.push_back(ctx + "simulator: unknown simulator '" + b.simulator + "'");
            }
            cfg.backends.emplace(name, std::move(b));
        }
    }
    if (cfg.backends.empty()) errors.push_back("backends: at least one backend is required");
    auto known_backend = [&](const std::string& ctx, const std::string& name) {
        if (!cfg.backends.count(name)) errors.push_back(ctx + ": unknown backend '" + name + "'");
    };
    const std::string default_backend = cfg.backends.empty() ? std::string{} : cfg.backends.begin()->first;

    // [[teachers]]
    if (const auto* teachers = top.array("teachers")) {
        std::size_t i = 0;
        for (const auto& node : *teachers) {
            const std::string ctx = "teachers[" + std::to_string(i++) + "].";
            if (!node.is_table()) {
                errors.push_back(ctx + ": expected a table");
                continue;
            }
            TableReader r(node.as_table(), ctx, errors);
            TeacherSpec t{"", default_backend};
            r.get("model", t.model);
            r.get("backend", t.backend);
            r.finish();
            if (t.model.empty()) errors.push_back(ctx + "model: required");
            known_backend(ctx + "backend", t.backend);
            cfg.teachers.push_back(std::move(t));
        }
    }
    if (cfg.teachers.empty()) errors.push_back("teachers: at least one teacher is required");
    const TeacherSpec first = cfg.teachers.empty() ? TeacherSpec{"teacher", default_backend} : cfg.teachers.front();

    // [answer]
    TableReader ans(top.table("answer"), "answer.", errors);
    cfg.answer.model = first.model;
    cfg.answer_backend = first.backend;
    ans.get("model", cfg.answer.model);
    ans.get("backend", cfg.answer_backend);
    ans.get("temperature", cfg.answer.temperature);
    ans.get("max_tokens", cfg.answer.max_tokens);
    ans.finish();
    known_backend("answer.backend", cfg.answer_backend);

    // [judge]
    TableReader jr(top.table("judge"), "judge.", errors);
    cfg.judge_backend = default_backend;
    jr.get("model", cfg.judge.judge_model);
    jr.get("backend", cfg.judge_backend);
    jr.get("temperature", cfg.judge.temperature);
    jr.get("max_tokens", cfg.judge.max_tokens);
    jr.get("parse_retries", cfg.judge.parse_retries);
    jr.get("max_failure_fraction", cfg.benchmark.max_failure_fraction);
    jr.get("teacher_baselines", cfg.judge_teacher_baselines);
    std::string unit = "chars";
    jr.get("length_unit", unit);
    if (unit == "chars") {
        cfg.judge.length_unit = judge::LengthUnit::Chars;
    } else if (unit == "tokens") {
        cfg.judge.length_unit = judge::LengthUnit::Tokens;
    } else {
        errors.push_back("judge.length_unit: expected chars or tokens");
    }
    jr.finish();
    known_backend("judge.backend", cfg.judge_backend);
    check(errors, "judge", [&] { cfg.judge.validate(); });
    if (!(cfg.benchmark.max_failure_fraction >= 0 && cfg.benchmark.max_failure_fraction <= 1)) {
        errors.push_back("judge.max_failure_fraction: must be in [0, 1]");
    }

    // [optimizer]
    TableReader opt(top.table("optimizer"), "optimizer.", errors);
    auto& o = cfg.optimizer;
    o.meta_model = first.model;
    cfg.meta_backend = first.backend;
    opt.get("meta_model", o.meta_model);
    opt.get("meta_backend", cfg.meta_backend);
    opt.get("meta_temperature", o.meta_temperature);
    opt.get("meta_max_tokens", o.meta_max_tokens);
    opt.get("alpha", o.alpha);
    opt.get("iterations", o.iterations);
    opt.get("top_k", o.top_k);
    opt.get("feedback_samples", o.feedback_samples);
    opt.get("initial_pool_size", o.initial_pool_size);
    opt.get("max_failure_fraction", o.max_failure_fraction);
    opt.finish();
    o.answer_settings = cfg.answer;
    known_backend("optimizer.meta_backend", cfg.meta_backend);
    if (o.top_k <= 0) errors.push_back("optimizer.top_k: must be >= 1");
    check(errors, "optimizer", [&] { o.validate(); });
    cfg.benchmark.alpha = o.alpha;

    // [generation]
    TableReader gen(top.table("generation"), "generation.", errors);
    auto& g = cfg.generation;
    gen.get("per_paragraph_target", g.per_paragraph_target);
    gen.get("in_context_seed_count", g.in_context_seed_count);
    gen.get("in_context_generated_count", g.in_context_generated_count);
    gen.get("style_example_count", g.style_example_count);
    gen.get("content_example_count", g.content_example_count);
    gen.get("sampling_rounds", g.sampling_rounds);
    gen.get("sampled_per_request", g.sampled_per_request);
    gen.get("wave_size", g.wave_size);
    gen.get("chars_per_question", g.chars_per_question);
    gen.get("min_target", g.min_target);
    gen.get("max_target", g.max_target);
    gen.get("temperature", g.temperature);
    gen.get("max_tokens", g.max_tokens);
    gen.get("dedup_threshold", cfg.dedup.jaccard_threshold);
    gen.get("fuzzy_dedup", cfg.dedup.fuzzy);
    gen.finish();
    check(errors, "generation", [&] { g.validate(); });
    if (!(cfg.dedup.jaccard_threshold > 0.0 && cfg.dedup.jaccard_threshold <= 1.0)) {
        errors.push_back("generation.dedup_threshold: must be in (0, 1]");
    }

    // [split]
    TableReader sp(top.table("split"), "split.", errors);
    sp.get("min_chars", cfg.split.min_chars);
    sp.get("max_chars", cfg.split.max_chars);
    sp.get("sentence_terminators", cfg.split.sentence_terminators);
    sp.get("chapter_pattern", cfg.split.chapter_pattern);
    sp.finish();
    check(errors, "split", [&] { cfg.split.validate(); });

    // [metrics]
    TableReader met(top.table("metrics"), "metrics.", errors);
    std::string bleu_mode = "corpus";
    met.get("bleu_mode", bleu_mode);
    if (bleu_mode == "corpus") {
        cfg.benchmark.bleu_mode = metrics::BleuMode::Corpus;
    } else if (bleu_mode == "sentence_mean") {
        cfg.benchmark.bleu_mode = metrics::BleuMode::SentenceMean;
    } else {
        errors.push_back("metrics.bleu_mode: expected corpus or sentence_mean");
    }
    met.finish();

    // [export]
    TableReader ex(top.table("export"), "export.", errors);
    ex.get("split_ratio", cfg.export_options.split_ratio);
    std::string format = "conversation";
    ex.get("format", format);
    if (format == "conversation") {
        cfg.export_options.format = evalx::ExportFormat::Conversation;
    } else if (format == "instruction") {
        cfg.export_options.format = evalx::ExportFormat::Instruction;
    } else {
        errors.push_back("export.format: expected conversation or instruction");
    }
    ex.finish();
    if (!(cfg.export_options.split_ratio > 0.0 && cfg.export_options.split_ratio <= 1.0)) {
        errors.push_back("export.split_ratio: must be in (0, 1]");
    }
    top.finish();

    // One model name, one backend.
    std::map<std::string, std::string> owner;
    auto claim = [&](const std::string& model, const std::string& backend, const std::string& ctx) {
        auto [it, inserted] = owner.emplace(model, backend);
        if (!inserted && it->second != backend) {
            errors.push_back(ctx + ": model '" + model + "' is already served by backend '" + it->second + "'");
        }
    };
    for (const auto& t : cfg.teachers) claim(t.model, t.backend, "teachers");
    claim(cfg.answer.model, cfg.answer_backend, "answer");
    claim(cfg.judge.judge_model, cfg.judge_backend, "judge");
    claim(o.meta_model, cfg.meta_backend, "optimizer");

    if (!errors.empty()) {
        std::string msg = config_path.string() + ": invalid configuration";
        for (const auto& e : errors) msg += "\n  - " + e;
        fail(Errc::ValidationError, msg);
    }

    deviation(cfg.warnings, "generation.in_context_seed_count", g.in_context_seed_count, 6);
    deviation(cfg.warnings, "generation.in_context_generated_count", g.in_context_generated_count, 2);
    deviation(cfg.warnings, "generation.style_example_count", g.style_example_count, 3);
    deviation(cfg.warnings, "generation.dedup_threshold", cfg.dedup.jaccard_threshold, 0.8);
    deviation(cfg.warnings, "optimizer.alpha", o.alpha, 0.5);
    deviation(cfg.warnings, "optimizer.iterations", o.iterations, 3);
    deviation(cfg.warnings, "optimizer.top_k", o.top_k, 5);
    deviation(cfg.warnings, "optimizer.feedback_samples", o.feedback_samples, 5);
    deviation(cfg.warnings, "optimizer.initial_pool_size", o.initial_pool_size, 10);

    g.rng_seed = derive_seed(cfg.seed, "question_gen");
    o.rng_seed = derive_seed(cfg.seed, "prompt_opt");
    cfg.export_options.rng_seed = derive_seed(cfg.seed, "export");
    return cfg;
}

PipelineConfig load_config(const fs::path& config_path, const std::optional<fs::path>& work_dir_override) {
    if (!fs::is_regular_file(config_path)) {
        fail(Errc::ValidationError, config_path.string() + ": config file not found");
    }
    return parse_config(read_file(config_path), config_path, work_dir_override);
}

// ---------------------------------------------------------------------------
// Backends

BackendFactory default_backend_factory() {
    return [](const std::string&, const llm::BackendConfig& cfg) -> std::shared_ptr<llm::Backend> {
        return llm::make_backend(cfg);
    };
}

namespace {

/// Sends each request to the gateway of the backend that serves its model.
class Router final : public llm::Backend {
public:
    Router(const PipelineConfig& cfg, BackendFactory factory, std::shared_ptr<llm::ResponseCache> cache)
        : cfg_(cfg), factory_(std::move(factory)), cache_(std::move(cache)) {}

    llm::ChatResponse invoke(const llm::ChatRequest& request) override {
        return gateway_for(request.model_name).complete(request);
    }

    llm::Gateway& gateway_for(const std::string& model) {
        const std::string& name = cfg_.backend_for(model);
        std::lock_guard lock(mutex_);
        auto it = gateways_.find(name);
        if (it == gateways_.end()) {
            const auto& bc = cfg_.backends.at(name);
            it = gateways_.emplace(name, std::make_unique<llm::Gateway>(bc, factory_(name, bc), cache_)).first;
        }
        return *it->second;
    }

    std::pair<std::size_t, std::size_t> counters() {
        std::lock_guard lock(mutex_);
        std::size_t inv = 0;
        std::size_t hits = 0;
        for (const auto& [n, g] : gateways_) {
            inv += g->backend_invocations();
            hits += g->cache_hits();
        }
        return {inv, hits};
    }

private:
    const PipelineConfig& cfg_;
    BackendFactory factory_;
    std::shared_ptr<llm::ResponseCache> cache_;
    std::mutex mutex_;
    std::map<std::string, std::unique_ptr<llm::Gateway>> gateways_;
};

std::string slug(std::string_view model) {
    std::string out;
    for (char c : model) {
        const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-';
        out += ok ? c : '_';
    }
    return out;
}

std::string file_digest(const fs::path& p) {
    return fs::exists(p) ? sha256_hex(read_file(p)) : std::string("missing");
}

template <typename T>
std::vector<ordered_json> rows_of(const std::vector<T>& items) {
    std::vector<ordered_json> rows;
    rows.reserve(items.size());
    for (const auto& item : items) rows.push_back(to_json(item));
    return rows;
}

void require_file(const fs::path& p, std::string_view produced_by) {
    if (!fs::exists(p)) {
        fail(Errc::StageFailed, p.string() + " is missing; run " + std::string(produced_by) + " first");
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Runner

Runner::Runner(PipelineConfig config, BackendFactory factory)
    : config_(std::move(config)), factory_(std::move(factory)) {}

llm::Gateway& Runner::gateway() {
    if (!router_) {
        cache_ = std::make_shared<llm::ResponseCache>(config_.work_dir / "cache");
        auto router = std::make_shared<Router>(config_, factory_, cache_);
        llm::BackendConfig outer;
        outer.kind = llm::BackendKind::Scripted;
        outer.retry_limit = 0;
        outer.max_in_flight = 0;
        std::set<std::string> used;
        for (const auto& t : config_.teachers) used.insert(t.backend);
        used.insert(config_.answer_backend);
        used.insert(config_.judge_backend);
        used.insert(config_.meta_backend);
        for (const auto& name : used) outer.max_in_flight += config_.backends.at(name).max_in_flight;
        router_ = std::make_unique<llm::Gateway>(outer, router);
    }
    return *router_;
}

void Runner::journal(Stage stage, const std::vector<fs::path>& inputs, const std::vector<std::string>& outputs) {
    const fs::path base = config_.config_path.has_parent_path() ? config_.config_path.parent_path() : fs::path(".");
    const fs::path config_dir = fs::absolute(base).lexically_normal();
    auto label = [&](const fs::path& p) {
        auto rel = p.lexically_relative(config_.work_dir);
        if (rel.empty() || *rel.begin() == "..") rel = p.lexically_relative(config_dir);
        return rel.empty() ? p.generic_string() : rel.generic_string();
    };
    ordered_json row;
    row["stage"] = to_string(stage);
    row["status"] = "ok";
    ordered_json in = ordered_json::object();
    for (const auto& p : inputs) in[label(p)] = file_digest(p);
    row["inputs"] = std::move(in);
    ordered_json outs = ordered_json::object();
    for (const auto& p : outputs) outs[p] = file_digest(config_.work_dir / p);
    row["outputs"] = std::move(outs);
    const fs::path path = config_.work_dir / "journal.jsonl";
    std::string content = fs::exists(path) ? read_file(path) : std::string{};
    content += row.dump() + "\n";
    write_file(path, content);
}

std::vector<ingest::TextbookParagraph> Runner::paragraphs_or_split() const {
    const fs::path produced = out("ingest/paragraphs.jsonl");
    if (fs::exists(produced)) return ingest::read_paragraphs(produced);
    std::vector<ingest::TextbookParagraph> all;
    for (const auto& book : config_.paths.textbooks) {
        auto ps = ingest::split_paragraphs(read_file(book), config_.split, book.stem().string());
        all.insert(all.end(), ps.begin(), ps.end());
    }
    return all;
}

void Runner::ingest() {
    std::vector<ordered_json> rows;
    std::set<std::string> ids;
    std::vector<fs::path> inputs;
    for (const auto& book : config_.paths.textbooks) {
        inputs.push_back(book);
        for (const auto& p : ingest::split_paragraphs(read_file(book), config_.split, book.stem().string())) {
            if (!ids.insert(p.id).second) fail(Errc::DuplicateId, "paragraph id collision " + p.id);
            rows.push_back(ingest::to_json(p));
        }
    }
    write_jsonl(out("ingest/paragraphs.jsonl"), rows);
    const auto seeds = ingest::load_seed_pool(config_.paths.seed_pool);
    write_jsonl(out("ingest/seeds.jsonl"), rows_of(seeds));
    spdlog::info("ingest: {} paragraphs, {} seed questions", rows.size(), seeds.size());
    inputs.push_back(config_.paths.seed_pool);
    journal(Stage::Ingest, inputs, {"ingest/paragraphs.jsonl", "ingest/seeds.jsonl"});
}

namespace {

std::vector<ingest::SeedQuestion> read_seeds(const fs::path& p) {
    std::vector<ingest::SeedQuestion> out;
    for (const auto& row : read_jsonl(p)) out.push_back(ingest::seed_from_json(row));
    return out;
}

}  // namespace

void Runner::gen_questions() {
    require_file(out("ingest/paragraphs.jsonl"), "ingest");
    const auto paragraphs = ingest::read_paragraphs(out("ingest/paragraphs.jsonl"));
    const auto seeds = read_seeds(out("ingest/seeds.jsonl"));
    std::vector<ordered_json> failures;
    std::vector<std::string> outputs;
    for (const auto& t : config_.teachers) {
        auto result = qgen::generate_round0(paragraphs, seeds, config_.generation, t.model, gateway());
        const std::string rel = "questions/round0." + slug(t.model) + ".jsonl";
        write_jsonl(out(rel), rows_of(result.records));
        outputs.push_back(rel);
        for (const auto& f : result.failures) failures.push_back(qgen::to_json(f));
        spdlog::info("gen-questions: {} produced {} questions ({} failures)", t.model, result.records.size(),
                     result.failures.size());
    }
    write_jsonl(out("questions/gen_failures.jsonl"), failures);
    outputs.push_back("questions/gen_failures.jsonl");
    journal(Stage::GenQuestions, {out("ingest/paragraphs.jsonl"), out("ingest/seeds.jsonl")}, outputs);
}

void Runner::sample_questions() {
    const auto paragraphs = ingest::read_paragraphs(out("ingest/paragraphs.jsonl"));
    const auto seeds = read_seeds(out("ingest/seeds.jsonl"));
    std::vector<qgen::ModelQuestions> lists;
    std::vector<ordered_json> failures;
    std::vector<fs::path> inputs{out("ingest/paragraphs.jsonl"), out("ingest/seeds.jsonl")};
    std::vector<std::string> outputs;
    for (const auto& t : config_.teachers) {
        const std::string in_rel = "questions/round0." + slug(t.model) + ".jsonl";
        require_file(out(in_rel), "gen-questions");
        inputs.push_back(out(in_rel));
        auto round0 = qgen::read_questions(out(in_rel));
        auto sampled = qgen::run_sampling_rounds(round0, seeds, config_.generation, t.model, gateway());
        const std::string rel = "questions/sampled." + slug(t.model) + ".jsonl";
        write_jsonl(out(rel), rows_of(sampled.records));
        outputs.push_back(rel);
        for (const auto& f : sampled.failures) failures.push_back(qgen::to_json(f));
        qgen::ModelQuestions mq{t.model, std::move(round0)};
        mq.records.insert(mq.records.end(), sampled.records.begin(), sampled.records.end());
        lists.push_back(std::move(mq));
    }
    write_jsonl(out("questions/sample_failures.jsonl"), failures);
    const auto merged = qgen::merge_models(std::move(lists), config_.dedup);
    write_jsonl(out("questions/questions.jsonl"), rows_of(merged.kept));
    std::vector<ordered_json> audit;
    for (const auto& e : merged.audit) audit.push_back(qgen::to_json(e));
    write_jsonl(out("questions/dedup_audit.jsonl"), audit);
    std::vector<ordered_json> uncovered;
    for (const auto& id : qgen::uncovered_paragraphs(paragraphs, merged.kept)) {
        ordered_json row;
        row["paragraph_id"] = id;
        uncovered.push_back(std::move(row));
    }
    if (!uncovered.empty()) spdlog::warn("sample-questions: {} paragraphs lost all their questions", uncovered.size());
    write_jsonl(out("questions/coverage_failures.jsonl"), uncovered);
    spdlog::info("sample-questions: {} questions kept, {} dropped as duplicates", merged.kept.size(),
                 merged.audit.size());
    for (const auto* rel : {"questions/sample_failures.jsonl", "questions/questions.jsonl",
                            "questions/dedup_audit.jsonl", "questions/coverage_failures.jsonl"}) {
        outputs.emplace_back(rel);
    }
    journal(Stage::SampleQuestions, inputs, outputs);
}

void Runner::optimize_prompt(bool resume) {
    if (!config_.paths.initial_prompts || !config_.paths.validation_set) {
        fail(Errc::ValidationError, "optimize-prompt needs paths.initial_prompts and paths.validation_set");
    }
    const auto initial = popt::load_initial_prompts(*config_.paths.initial_prompts);
    const auto valset = popt::load_validation_set(*config_.paths.validation_set);
    const fs::path checkpoint = out("optimize/checkpoint.json");
    std::optional<popt::OptimizeState> state;
    if (resume && fs::exists(checkpoint)) {
        state = popt::checkpoint_from_json(json::parse(read_file(checkpoint)));
        spdlog::info("optimize-prompt: resuming after generation {}", state->completed_generation);
    }
    auto hook = [&](const popt::OptimizeState& s) {
        write_file(checkpoint, popt::checkpoint_to_json(s).dump(2) + "\n");
        double best = -1e300;
        for (const auto& [c, sc] : s.pool) best = std::max(best, sc.comprehensive);
        spdlog::info("optimize-prompt: generation {} done, best pool score {:.3f}", s.completed_generation, best);
    };
    const auto result = popt::optimize(initial, valset, config_.optimizer, config_.judge, gateway(), state, hook);

    write_jsonl(out("optimize/history.jsonl"), popt::history_rows(result.history));
    write_file(out("optimize/best_prompt.txt"),
               answer::render_template({result.best.id, result.best.text, true}));
    std::vector<ordered_json> verdicts;
    for (const auto& [cid, list] : result.verdicts) {
        for (const auto& v : list) {
            ordered_json row;
            row["candidate_id"] = cid;
            const auto fields = judge::to_json(v);
            for (const auto& [k, val] : fields.items()) row[k] = val;
            verdicts.push_back(std::move(row));
        }
    }
    write_jsonl(out("optimize/verdicts.jsonl"), verdicts);
    ordered_json best;
    best["id"] = result.best.id;
    best["comprehensive"] = result.best_score.comprehensive;
    best["mean_llm"] = result.best_score.mean_llm;
    best["mean_penalty"] = result.best_score.mean_penalty;
    write_file(out("optimize/best.json"), best.dump(2) + "\n");
    spdlog::info("optimize-prompt: best prompt {} scored {:.3f}", result.best.id, result.best_score.comprehensive);
    journal(Stage::OptimizePrompt,
            {*config_.paths.initial_prompts, *config_.paths.validation_set},
            {"optimize/history.jsonl", "optimize/best_prompt.txt", "optimize/verdicts.jsonl", "optimize/best.json",
             "optimize/checkpoint.json"});
}

void Runner::gen_answers() {
    require_file(out("questions/questions.jsonl"), "sample-questions");
    std::vector<fs::path> inputs{out("questions/questions.jsonl"), out("ingest/paragraphs.jsonl")};
    answer::AnswerPromptTemplate tmpl;
    if (fs::exists(out("optimize/best_prompt.txt"))) {
        tmpl = answer::load_template(out("optimize/best_prompt.txt"));
        inputs.push_back(out("optimize/best_prompt.txt"));
    } else if (config_.paths.answer_template) {
        tmpl = answer::load_template(*config_.paths.answer_template);
        inputs.push_back(*config_.paths.answer_template);
    } else {
        fail(Errc::ValidationError, "gen-answers needs optimize/best_prompt.txt or paths.answer_template");
    }
    const auto questions = qgen::read_questions(out("questions/questions.jsonl"));
    const auto index = answer::index_paragraphs(ingest::read_paragraphs(out("ingest/paragraphs.jsonl")));
    const auto run = answer::generate_answers(questions, tmpl, index, config_.answer, gateway());
    write_jsonl(out("answers/qa_pairs.jsonl"), rows_of(run.pairs));
    std::vector<ordered_json> failures;
    for (const auto& f : run.failures) failures.push_back(answer::to_json(f));
    write_jsonl(out("answers/failures.jsonl"), failures);
    spdlog::info("gen-answers: {} answers with prompt {}, {} failures", run.pairs.size(), tmpl.id,
                 run.failures.size());
    journal(Stage::GenAnswers, inputs, {"answers/qa_pairs.jsonl", "answers/failures.jsonl"});
}

namespace {

void add_outputs(std::vector<evalx::TestItem>& test, const std::string& model,
                 const answer::AnswerPromptTemplate& tmpl, const answer::ModelSettings& settings,
                 llm::Gateway& gateway) {
    std::vector<llm::ChatRequest> requests;
    for (const auto& item : test) {
        qgen::QuestionRecord q;
        q.id = item.id;
        q.text = item.question;
        q.origin = qgen::Origin::Sampled;
        requests.push_back(answer::assemble_answer_prompt(tmpl, q, nullptr, settings));
    }
    const auto results = gateway.complete_batch(requests);
    for (std::size_t i = 0; i < test.size(); ++i) {
        auto& slot = test[i].model_outputs[model];
        if (results[i].ok() && !text::trim(results[i].value().content).empty()) {
            slot = text::trim(results[i].value().content);
        } else {
            spdlog::warn("no answer from {} for test item {}: {}", model, test[i].id,
                         results[i].ok() ? "empty answer" : results[i].error_message());
            slot = std::nullopt;
        }
    }
}

}  // namespace

void Runner::judge() {
    if (!config_.paths.test_set) fail(Errc::ValidationError, "judge needs paths.test_set");
    auto test = evalx::load_test_set(*config_.paths.test_set);
    std::vector<fs::path> inputs{*config_.paths.test_set};
    if (config_.judge_teacher_baselines) {
        if (config_.paths.answer_template) {
            add_outputs(test, config_.answer.model, answer::load_template(*config_.paths.answer_template),
                        config_.answer, gateway());
            inputs.push_back(*config_.paths.answer_template);
        }
        if (fs::exists(out("optimize/best_prompt.txt"))) {
            add_outputs(test, config_.answer.model + "+prompt", answer::load_template(out("optimize/best_prompt.txt")),
                        config_.answer, gateway());
            inputs.push_back(out("optimize/best_prompt.txt"));
        }
    }
    std::vector<ordered_json> items;
    for (const auto& t : test) items.push_back(evalx::to_json(t));
    write_jsonl(out("judge/test_outputs.jsonl"), items);

    const auto judged = evalx::judge_test_set(test, config_.judge, config_.benchmark, gateway());
    std::vector<ordered_json> rows;
    for (const auto& [model, mv] : judged) {
        for (const auto& v : mv.verdicts) {
            ordered_json row;
            row["model"] = model;
            const auto fields = judge::to_json(v);
            for (const auto& [k, val] : fields.items()) row[k] = val;
            rows.push_back(std::move(row));
        }
    }
    write_jsonl(out("judge/verdicts.jsonl"), rows);
    spdlog::info("judge: {} verdicts over {} models", rows.size(), judged.size());
    journal(Stage::Judge, inputs, {"judge/test_outputs.jsonl", "judge/verdicts.jsonl"});
}

void Runner::evaluate() {
    require_file(out("judge/verdicts.jsonl"), "judge");
    std::vector<evalx::TestItem> test;
    for (const auto& row : read_jsonl(out("judge/test_outputs.jsonl"))) test.push_back(evalx::test_item_from_json(row));
    std::map<std::string, evalx::ModelVerdicts> judged;
    std::map<std::string, std::size_t> totals;
    for (const auto& item : test) {
        for (const auto& [model, o] : item.model_outputs) ++totals[model];
    }
    for (const auto& [model, n] : totals) judged[model];
    for (const auto& row : read_jsonl(out("judge/verdicts.jsonl"))) {
        judged[row.at("model").get<std::string>()].verdicts.push_back(judge::verdict_from_json(row));
    }
    for (auto& [model, mv] : judged) mv.failed = totals[model] - std::min(totals[model], mv.verdicts.size());
    const auto reports = evalx::build_reports(test, judged, config_.benchmark);
    const auto markdown = evalx::render_report(reports, evalx::ReportFormat::Markdown);
    write_file(out("evaluate/report.md"), markdown);
    write_file(out("evaluate/report.csv"), evalx::render_report(reports, evalx::ReportFormat::Csv));
    std::vector<ordered_json> rows;
    for (const auto& r : reports) rows.push_back(evalx::to_json(r));
    write_jsonl(out("evaluate/reports.jsonl"), rows);
    journal(Stage::Evaluate, {out("judge/test_outputs.jsonl"), out("judge/verdicts.jsonl")},
            {"evaluate/report.md", "evaluate/report.csv", "evaluate/reports.jsonl"});
}

void Runner::do_export() {
    require_file(out("answers/qa_pairs.jsonl"), "gen-answers");
    const auto pairs = answer::read_qa_pairs(out("answers/qa_pairs.jsonl"));
    const auto result = evalx::export_training(pairs, config_.export_options);
    evalx::write_export(out("export"), result);
    spdlog::info("export: {} train / {} val records, digest {}", result.manifest["split_counts"]["train"].get<std::size_t>(),
                 result.manifest["split_counts"]["val"].get<std::size_t>(),
                 result.manifest["content_digest"].get<std::string>());
    journal(Stage::Export, {out("answers/qa_pairs.jsonl")}, {"export/train.jsonl", "export/val.jsonl", "export/manifest.json"});
}

std::size_t Runner::planned_requests(Stage stage) {
    const auto& plan = config_.generation;
    auto round0_estimate = [&](const std::vector<ingest::TextbookParagraph>& paragraphs, const std::string& model) {
        const fs::path produced = out("questions/round0." + slug(model) + ".jsonl");
        if (fs::exists(produced)) return qgen::read_questions(produced).size();
        std::size_t n = 0;
        for (const auto& p : paragraphs) n += static_cast<std::size_t>(qgen::target_count(p.char_count, plan));
        return n;
    };
    auto sampling_estimate = [&](std::size_t n0, std::size_t* produced) {
        std::size_t calls = 0;
        std::size_t prev = n0;
        std::size_t made = 0;
        for (int r = 0; r < plan.sampling_rounds; ++r) {
            const auto k = qgen::sampling_requests_for(prev, plan);
            calls += k;
            prev = k * static_cast<std::size_t>(plan.sampled_per_request);
            made += prev;
        }
        if (produced) *produced = made;
        return calls;
    };
    auto count_jsonl = [&](const std::optional<fs::path>& p) -> std::size_t {
        return p && fs::exists(*p) ? read_jsonl(*p).size() : 0;
    };
    switch (stage) {
        case Stage::Ingest:
        case Stage::Evaluate:
        case Stage::Export:
            return 0;
        case Stage::GenQuestions:
            return paragraphs_or_split().size() * config_.teachers.size();
        case Stage::SampleQuestions: {
            const auto paragraphs = paragraphs_or_split();
            std::size_t total = 0;
            for (const auto& t : config_.teachers) total += sampling_estimate(round0_estimate(paragraphs, t.model), nullptr);
            return total;
        }
        case Stage::OptimizePrompt: {
            const std::size_t initial = config_.paths.initial_prompts && fs::exists(*config_.paths.initial_prompts)
                                            ? popt::load_initial_prompts(*config_.paths.initial_prompts).size()
                                            : static_cast<std::size_t>(config_.optimizer.initial_pool_size);
            return popt::planned_requests(initial, count_jsonl(config_.paths.validation_set), config_.optimizer);
        }
        case Stage::GenAnswers: {
            if (fs::exists(out("questions/questions.jsonl"))) return read_jsonl(out("questions/questions.jsonl")).size();
            const auto paragraphs = paragraphs_or_split();
            std::size_t total = 0;
            for (const auto& t : config_.teachers) {
                std::size_t sampled = 0;
                const auto n0 = round0_estimate(paragraphs, t.model);
                sampling_estimate(n0, &sampled);
                total += n0 + sampled;
            }
            return total;
        }
        case Stage::Judge: {
            if (!config_.paths.test_set || !fs::exists(*config_.paths.test_set)) return 0;
            const auto test = evalx::load_test_set(*config_.paths.test_set);
            std::size_t listed = 0;
            for (const auto& item : test) listed += item.model_outputs.size();
            std::size_t baselines = 0;
            if (config_.judge_teacher_baselines) {
                baselines += config_.paths.answer_template ? 1 : 0;
                baselines += (fs::exists(out("optimize/best_prompt.txt")) || config_.paths.initial_prompts) ? 1 : 0;
            }
            return listed + 2 * baselines * test.size();
        }
    }
    return 0;
}

StageOutcome Runner::run(Stage stage, const RunOptions& options) {
    StageOutcome outcome;
    if (options.dry_run) {
        outcome.planned_requests = planned_requests(stage);
        return outcome;
    }
    const auto start = std::chrono::steady_clock::now();
    std::pair<std::size_t, std::size_t> before{0, 0};
    if (router_) before = {router_->backend_invocations(), 0};
    switch (stage) {
        case Stage::Ingest: ingest(); break;
        case Stage::GenQuestions: gen_questions(); break;
        case Stage::SampleQuestions: sample_questions(); break;
        case Stage::OptimizePrompt: optimize_prompt(options.resume); break;
        case Stage::GenAnswers: gen_answers(); break;
        case Stage::Judge: judge(); break;
        case Stage::Evaluate: evaluate(); break;
        case Stage::Export: do_export(); break;
    }
    if (router_) {
        outcome.backend_invocations = router_->backend_invocations() - before.first;
    }
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
    spdlog::info("{} finished in {} ms ({} requests through the gateway)", to_string(stage), ms.count(),
                 outcome.backend_invocations);
    return outcome;
}

// ---------------------------------------------------------------------------
// CLI

namespace {

void init_logging(const std::string& level) {
    auto logger = spdlog::get("distill");
    if (!logger) {
        logger = spdlog::stderr_logger_mt("distill");
        logger->set_pattern("[%l] %v");
    }
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::from_str(level));
}

void error_report(std::string_view stage, std::string_view kind, std::string_view message) {
    ordered_json j;
    j["stage"] = stage;
    j["error_kind"] = kind;
    j["message"] = message;
    std::cerr << j.dump(-1, ' ', false, nlohmann::detail::error_handler_t::replace) << "\n";
}

}  // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"Builds a distilled question-answer training set from course textbooks.", "distill"};
    std::string stage_name;
    std::string config_path;
    std::optional<std::string> work_dir;
    bool dry_run = false;
    bool resume = false;
    std::string log_level = "info";
    app.add_option("stage", stage_name,
                   "ingest | gen-questions | sample-questions | optimize-prompt | gen-answers | judge | "
                   "evaluate | export | all | validate")
        ->required();
    app.add_option("-c,--config", config_path, "TOML pipeline config")->required();
    app.add_option("--work-dir", work_dir, "Override the config's work directory");
    app.add_flag("--dry-run", dry_run, "Print the planned LLM request count and exit");
    app.add_flag("--resume", resume, "Continue prompt optimization from its checkpoint");
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error")
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    init_logging(log_level);

    std::vector<Stage> stages;
    const bool validate_only = stage_name == "validate";
    if (stage_name == "all") {
        stages = all_stages();
    } else if (auto s = parse_stage(stage_name)) {
        stages.push_back(*s);
    } else if (!validate_only) {
        std::cerr << "distill: unknown stage '" << stage_name << "'\n";
        return 2;
    }

    std::optional<PipelineConfig> config;
    try {
        config = load_config(config_path, work_dir ? std::optional<fs::path>(*work_dir) : std::nullopt);
    } catch (const Error& e) {
        error_report("config", e.kind(), e.what());
        return 2;
    }
    for (const auto& w : config->warnings) spdlog::warn("config: {}", w);
    if (validate_only) {
        std::cout << "config ok: " << config_path << "\n";
        return 0;
    }

    Runner runner(std::move(*config));
    const RunOptions options{dry_run, resume};
    std::size_t planned_total = 0;
    for (Stage stage : stages) {
        try {
            const auto outcome = runner.run(stage, options);
            if (dry_run) {
                std::cout << to_string(stage) << " planned_requests: " << outcome.planned_requests << "\n";
                planned_total += outcome.planned_requests;
            } else if (stage == Stage::Evaluate) {
                std::cout << read_file(runner.config().work_dir / "evaluate/report.md") << std::flush;
            }
        } catch (const Error& e) {
            error_report(to_string(stage), e.kind(), e.what());
            return 1;
        } catch (const std::exception& e) {
            error_report(to_string(stage), "Internal", e.what());
            return 1;
        }
    }
    if (dry_run) std::cout << "planned_requests: " << planned_total << "\n";
    return 0;
}

}  // namespace distill::pipeline
