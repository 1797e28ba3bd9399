// Acceptance checks. Prints one PASS/FAIL line per criterion and exits nonzero on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "distill/eval_export.hpp"
#include "distill/jsonl.hpp"
#include "distill/judge.hpp"
#include "distill/pipeline.hpp"
#include "distill/prompt_opt.hpp"
#include "distill/prompts.hpp"
#include "distill/question_gen.hpp"
#include "distill/text.hpp"
#include "distill/text_metrics.hpp"
#include "oracles.hpp"
#include "scripted_world.hpp"
#include "support_core.hpp"

using namespace distill;
namespace fs = std::filesystem;
using testing_support::fixtures_dir;
using testing_support::make_gateway;
using testing_support::reply;
using testing_support::TempDir;

namespace {

// Collects failed expectations of one criterion.
class Check {
public:
    void expect(bool ok, const std::string& what) {
        ++count_;
        if (!ok && failures_.size() < 5) failures_.push_back(what);
        if (!ok) ++failed_;
    }
    bool ok() const { return failed_ == 0; }
    std::string summary() const {
        if (ok()) return std::to_string(count_) + " checks";
        std::string s = std::to_string(failed_) + "/" + std::to_string(count_) + " failed";
        for (const auto& f : failures_) s += "; " + f;
        return s;
    }

private:
    std::size_t count_ = 0;
    std::size_t failed_ = 0;
    std::vector<std::string> failures_;
};

std::string num(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

struct Criterion {
    std::string name;
    double limit_seconds;
    std::function<void(Check&)> body;
};

// ---------------------------------------------------------------------------
// 1. Reported benchmark rows: judge - penalty = comprehensive

void table_arithmetic(Check& c) {
    struct Row {
        double judge, penalty, comprehensive;
    };
    const std::vector<Row> rows{{5.54, 0.90, 4.64}, {5.84, 0.92, 4.92}, {6.21, 0.93, 5.28}, {6.75, 1.03, 5.72},
                                {6.69, 0.55, 6.14}, {6.65, 0.17, 6.48}, {6.55, 0.34, 6.21}};
    constexpr double kTol = 0.005;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& row = rows[r];
        // 100 items whose integer scores average to the judge mean and whose lengths all give
        // the reported penalty at alpha = 0.5.
        const int hundredths = static_cast<int>(std::lround(row.judge * 100));
        const int lo = hundredths / 100;
        const int high_items = hundredths % 100;
        const std::size_t l_ref = 100;
        const auto l_res = static_cast<std::size_t>(std::lround(100 * (1 + row.penalty / 0.5)));
        evalx::ModelVerdicts mv;
        for (int i = 0; i < 100; ++i) {
            judge::JudgeVerdict v;
            v.qa_id = "r" + std::to_string(r) + "-" + std::to_string(i);
            v.overall = i < high_items ? lo + 1 : lo;
            v.factual_accuracy = v.user_satisfaction = v.clarity = v.condensability = v.overall;
            v.response_length = l_res;
            v.reference_length = l_ref;
            mv.verdicts.push_back(v);
        }
        const auto reports = evalx::build_reports({}, {{"model", mv}}, evalx::BenchmarkOptions{});
        const auto& rep = reports.at(0);
        const std::string tag = "row " + std::to_string(r + 1);
        c.expect(std::abs(rep.judge_mean - row.judge) <= kTol, tag + " judge " + num(rep.judge_mean));
        c.expect(std::abs(rep.length_penalty_mean - row.penalty) <= kTol, tag + " penalty " + num(rep.length_penalty_mean));
        c.expect(std::abs(rep.comprehensive_mean - row.comprehensive) <= kTol,
                 tag + " comprehensive " + num(rep.comprehensive_mean) + " vs " + num(row.comprehensive));
        c.expect(std::abs(row.judge - row.penalty - row.comprehensive) <= kTol, tag + " reported arithmetic");
        const double direct = popt::comprehensive_score(row.judge, l_res, l_ref, 0.5);
        c.expect(std::abs(direct - row.comprehensive) <= kTol, tag + " comprehensive_score " + num(direct));
    }
}

// ---------------------------------------------------------------------------
// 2. Metrics against naive oracles

metrics::TokenSequence random_seq(std::mt19937& gen, char first_letter) {
    std::uniform_int_distribution<int> len(1, 30);
    std::uniform_int_distribution<int> sym(0, 4);
    metrics::TokenSequence s;
    const int n = len(gen);
    for (int i = 0; i < n; ++i) s.tokens.emplace_back(1, static_cast<char>(first_letter + sym(gen)));
    return s;
}

void metric_oracles(Check& c) {
    constexpr double kTol = 1e-12;
    std::mt19937 gen(20240);
    std::vector<metrics::TokenSequence> cands, refs;
    std::vector<oracle::Seq> ocands, orefs;
    auto near = [&](double a, double b, const std::string& what) {
        c.expect(std::abs(a - b) <= kTol, what + " " + num(a, 15) + " vs " + num(b, 15));
    };
    for (int i = 0; i < 200; ++i) {
        const auto cand = random_seq(gen, 'a');
        const auto ref = random_seq(gen, 'a');
        const std::string tag = "pair " + std::to_string(i);
        for (int n = 1; n <= 4; ++n) {
            near(metrics::bleu({cand}, {ref}, n), oracle::bleu({cand.tokens}, {ref.tokens}, n), tag + " BLEU-" + std::to_string(n));
        }
        near(metrics::gleu(cand, ref), oracle::gleu(cand.tokens, ref.tokens), tag + " GLEU");
        for (int n = 1; n <= 2; ++n) {
            const auto got = metrics::rouge_n(cand, ref, n);
            const auto want = oracle::rouge_n(cand.tokens, ref.tokens, static_cast<std::size_t>(n));
            near(got.precision, want.p, tag + " ROUGE-" + std::to_string(n) + " P");
            near(got.recall, want.r, tag + " ROUGE-" + std::to_string(n) + " R");
            near(got.f1, want.f, tag + " ROUGE-" + std::to_string(n) + " F");
        }
        const auto gl = metrics::rouge_l(cand, ref);
        const auto wl = oracle::rouge_l(cand.tokens, ref.tokens);
        near(gl.precision, wl.p, tag + " ROUGE-L P");
        near(gl.recall, wl.r, tag + " ROUGE-L R");
        near(gl.f1, wl.f, tag + " ROUGE-L F");
        cands.push_back(cand);
        refs.push_back(ref);
        ocands.push_back(cand.tokens);
        orefs.push_back(ref.tokens);

        // Identity scores exactly 1 wherever the n-gram order exists; disjoint alphabets score 0.
        const auto len = cand.size();
        for (int n = 1; n <= 4; ++n) {
            if (len >= static_cast<std::size_t>(n)) {
                c.expect(metrics::bleu({cand}, {cand}, n) == 1.0, tag + " identity BLEU-" + std::to_string(n));
            }
        }
        c.expect(metrics::gleu(cand, cand) == 1.0, tag + " identity GLEU");
        c.expect(metrics::rouge_n(cand, cand, 1).f1 == 1.0, tag + " identity ROUGE-1");
        if (len >= 2) c.expect(metrics::rouge_n(cand, cand, 2).f1 == 1.0, tag + " identity ROUGE-2");
        c.expect(metrics::rouge_l(cand, cand).f1 == 1.0, tag + " identity ROUGE-L");

        const auto other = random_seq(gen, 'f');
        for (int n = 1; n <= 4; ++n) {
            c.expect(metrics::bleu({cand}, {other}, n) == 0.0, tag + " disjoint BLEU-" + std::to_string(n));
        }
        c.expect(metrics::gleu(cand, other) == 0.0, tag + " disjoint GLEU");
        c.expect(metrics::rouge_n(cand, other, 1).f1 == 0.0, tag + " disjoint ROUGE-1");
        c.expect(metrics::rouge_n(cand, other, 2).f1 == 0.0, tag + " disjoint ROUGE-2");
        c.expect(metrics::rouge_l(cand, other).f1 == 0.0, tag + " disjoint ROUGE-L");
    }
    for (int n = 1; n <= 4; ++n) {
        near(metrics::bleu(cands, refs, n), oracle::bleu(ocands, orefs, n), "corpus BLEU-" + std::to_string(n));
    }
}

// ---------------------------------------------------------------------------
// 3. Prompt optimizer under the scripted judge

std::vector<popt::PromptCandidate> initial_pool() {
    const char* texts[] = {
        "You answer course questions.",
        "You are an expert who answers course questions.",
        "Give accurate answers to course questions.",
        "Give detailed answers to course questions.",
        "Give concise answers.",
        "You are an expert; be accurate.",
        "Answer with an example.",
        "Answer plainly.",
        "Be detailed and accurate.",
        "Respond to the student.",
    };
    std::vector<popt::PromptCandidate> out;
    for (int i = 0; i < 10; ++i) {
        popt::PromptCandidate p;
        p.id = "init-" + std::to_string(i);
        p.text = texts[i];
        out.push_back(p);
    }
    return out;
}

std::vector<popt::ValidationItem> valset() {
    std::vector<popt::ValidationItem> out;
    for (int i = 0; i < 5; ++i) {
        popt::ValidationItem v;
        v.qa_id = "v" + std::to_string(i);
        v.question = "Question number " + std::to_string(i) + "?";
        v.human_reference = std::string(60, 'r');
        v.reference_char_count = 60;
        out.push_back(v);
    }
    return out;
}

// Mean of base + rubric bonus - length penalty, computed from the scripted world directly.
double oracle_prompt_score(const std::string& system, const std::vector<popt::ValidationItem>& items, double alpha) {
    double sum = 0;
    for (const auto& v : items) {
        const std::string answer = scripted_world::answer_for(system, v.question);
        const double ratio = static_cast<double>(text::char_length(answer)) / static_cast<double>(v.reference_char_count);
        const double penalty = ratio > 1 ? alpha * (ratio - 1) : 0.0;
        sum += scripted_world::judge_score(answer) - penalty;
    }
    return sum / static_cast<double>(items.size());
}

void optimizer_scripted(Check& c) {
    auto handler = [](const llm::ChatRequest& r, std::size_t) { return scripted_world::handle(r); };
    popt::OptimizerConfig cfg;
    cfg.alpha = 0.5;
    cfg.iterations = 3;
    const auto items = valset();

    // (a) best-so-far never decreases across generations.
    {
        auto gw = make_gateway(handler);
        const auto result = popt::optimize(initial_pool(), items, cfg, judge::JudgeConfig{}, *gw);
        c.expect(result.history.size() == 4, "history has " + std::to_string(result.history.size()) + " generations");
        double best = -1e300;
        for (const auto& snap : result.history) {
            double gen_best = -1e300;
            for (const auto& [cand, score] : snap.members) gen_best = std::max(gen_best, score.comprehensive);
            const double next = std::max(best, gen_best);
            // The surviving pool always carries the previous best forward.
            c.expect(gen_best >= best, "generation " + std::to_string(snap.generation) + " best " + num(gen_best) +
                                           " below earlier " + num(best));
            best = next;
        }
        c.expect(std::abs(result.best_score.comprehensive - best) < 1e-12, "reported best differs from history max");
    }

    // (b) zero iterations return the argmax of the initial pool.
    {
        auto zero = cfg;
        zero.iterations = 0;
        auto gw = make_gateway(handler);
        const auto pool = initial_pool();
        const auto result = popt::optimize(pool, items, zero, judge::JudgeConfig{}, *gw);
        const popt::PromptCandidate* best = nullptr;
        double best_score = -1e300;
        for (const auto& p : pool) {
            const double s = oracle_prompt_score(p.text, items, zero.alpha);
            const bool better = s > best_score + 1e-12 ||
                                (std::abs(s - best_score) <= 1e-12 &&
                                 text::codepoint_count(p.text) < text::codepoint_count(best->text));
            if (best == nullptr || better) {
                best = &p;
                best_score = s;
            }
        }
        c.expect(result.best.id == best->id, "argmax " + best->id + " but optimizer chose " + result.best.id);
        c.expect(std::abs(result.best_score.comprehensive - best_score) < 1e-9,
                 "argmax score " + num(best_score) + " vs " + num(result.best_score.comprehensive));
    }

    // (c) replaying the recorded mini run reproduces the committed history and best id.
    {
        const fs::path mini = fixtures_dir() / "mini";
        TempDir work("distill-accept");
        pipeline::Runner runner(pipeline::load_config(mini / "pipeline.toml", work.path()));
        runner.run(pipeline::Stage::OptimizePrompt, {});
        const auto history = testing_support::read_file(work / "optimize/history.jsonl");
        const auto golden = testing_support::read_file(mini / "golden/optimize_history.jsonl");
        c.expect(!golden.empty() && history == golden, "history differs from golden");
        const auto best = json::parse(testing_support::read_file(work / "optimize/best.json"));
        const auto golden_best = json::parse(testing_support::read_file(mini / "golden/optimize_best.json"));
        c.expect(best.at("id") == golden_best.at("id"),
                 "best id " + best.at("id").get<std::string>() + " vs " + golden_best.at("id").get<std::string>());
        c.expect(testing_support::read_file(work / "optimize/best.json") ==
                     testing_support::read_file(mini / "golden/optimize_best.json"),
                 "best.json differs from golden");
    }
}

// ---------------------------------------------------------------------------
// 4. Question generation prompts and dedup

void question_generation(Check& c) {
    const fs::path mini = fixtures_dir() / "mini";
    const auto seeds = ingest::load_seed_pool(mini / "seeds.jsonl");
    std::set<std::string> seed_texts;
    for (const auto& s : seeds) seed_texts.insert(s.text);
    const auto paragraphs = ingest::split_paragraphs(testing_support::read_file(mini / "textbook.md"), ingest::SplitPolicy{});

    std::mutex mu;
    std::vector<std::string> prompts_seen;
    auto gw = make_gateway([&](const llm::ChatRequest& r, std::size_t call) {
        const auto& u = r.last_user_content();
        {
            std::lock_guard lock(mu);
            prompts_seen.push_back(u);
        }
        const auto pos = u.find("exactly ");
        const int n = std::stoi(u.substr(pos + 8, 3));
        std::string out;
        for (int i = 1; i <= n; ++i) {
            out += std::to_string(i) + ". Generated question " + std::to_string(call) + "." + std::to_string(i) + "?\n";
        }
        return reply(out);
    });
    qgen::GenPlan plan;
    plan.rng_seed = 42;
    const auto round0 = qgen::generate_round0(paragraphs, seeds, plan, "teacher", *gw);
    c.expect(round0.failures.empty(), "round-0 failures");

    std::size_t cold = 0, warm = 0;
    for (const auto& u : prompts_seen) {
        const auto lines = testing_support::example_lines(u, prompts::kExamplesHeader);
        std::size_t from_seed = 0;
        for (const auto& l : lines) from_seed += seed_texts.count(l);
        c.expect(lines.size() == 8, "paragraph prompt holds " + std::to_string(lines.size()) + " examples");
        if (from_seed == 8) {
            ++cold;
        } else {
            ++warm;
            c.expect(from_seed == 6, "warm prompt holds " + std::to_string(from_seed) + " seed examples");
        }
    }
    // The first wave has no generated questions to draw on.
    c.expect(cold >= std::min<std::size_t>(paragraphs.size(), static_cast<std::size_t>(plan.wave_size)),
             "cold-start prompts " + std::to_string(cold));
    c.expect(paragraphs.size() <= static_cast<std::size_t>(plan.wave_size) || warm > 0, "no warm prompts");

    prompts_seen.clear();
    const auto sampled = qgen::run_sampling_rounds(round0.records, seeds, plan, "teacher", *gw);
    c.expect(!prompts_seen.empty(), "no sampling prompts");
    for (const auto& u : prompts_seen) {
        const auto style = testing_support::example_lines(u, prompts::kStyleExamplesHeader);
        c.expect(style.size() == 3, "sampling prompt holds " + std::to_string(style.size()) + " style examples");
        for (const auto& s : style) c.expect(seed_texts.count(s) == 1, "style example not from the seed pool");
    }
    c.expect(!sampled.records.empty(), "sampling produced nothing");

    // Dedup of the 500-question fixture, verified by brute force.
    const auto questions = qgen::read_questions(fixtures_dir() / "dedup/questions_500.jsonl");
    c.expect(questions.size() == 500, "fixture size " + std::to_string(questions.size()));
    const auto result = qgen::dedup(questions, qgen::DedupOptions{0.8, true});
    std::vector<std::u32string> cps;
    std::set<std::string> normalized;
    for (const auto& q : result.kept) {
        const auto n = qgen::normalize_question(q.text);
        c.expect(normalized.insert(n).second, "normalized duplicate survives: " + q.id);
        cps.push_back(text::decode_utf8(n));
    }
    std::size_t close_pairs = 0;
    for (std::size_t i = 0; i < cps.size(); ++i) {
        for (std::size_t j = i + 1; j < cps.size(); ++j) {
            if (oracle::jaccard_trigrams(cps[i], cps[j]) >= 0.8) ++close_pairs;
        }
    }
    c.expect(close_pairs == 0, std::to_string(close_pairs) + " surviving pairs at Jaccard >= 0.8");
    c.expect(result.kept.size() < questions.size(), "fixture duplicates were not removed");
    c.expect(result.kept.size() + result.audit.size() == questions.size(), "kept + dropped != input");
}

// ---------------------------------------------------------------------------
// 5. End-to-end determinism

std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) out[e.path().lexically_relative(root).generic_string()] = testing_support::read_file(e.path());
    }
    return out;
}

void end_to_end(Check& c) {
    const fs::path mini = fixtures_dir() / "mini";
    TempDir a("distill-e2e"), b("distill-e2e");
    for (const auto* dir : {&a, &b}) {
        auto cfg = pipeline::load_config(mini / "pipeline.toml", dir->path());
        c.expect(cfg.seed == 42, "config seed is not 42");
        pipeline::Runner runner(std::move(cfg));
        for (auto stage : pipeline::all_stages()) runner.run(stage, {});
    }
    const auto ta = tree(a.path());
    const auto tb = tree(b.path());
    c.expect(ta.size() > 10, "work dir holds " + std::to_string(ta.size()) + " files");
    c.expect(ta.size() == tb.size(), "file counts differ");
    for (const auto& [rel, content] : ta) {
        auto it = tb.find(rel);
        c.expect(it != tb.end() && it->second == content, rel + " differs between runs");
    }
    const auto manifest = json::parse(ta.at("export/manifest.json"));
    std::string golden = testing_support::read_file(mini / "golden/manifest_digest.txt");
    golden = text::trim(golden);
    c.expect(manifest.at("content_digest").get<std::string>() == golden,
             "manifest digest " + manifest.at("content_digest").get<std::string>() + " vs golden " + golden);
}

// ---------------------------------------------------------------------------
// 6. Judge verdict round trip and retry accounting

void judge_round_trip(Check& c) {
    std::mt19937 gen(606);
    std::uniform_int_distribution<int> score(1, 10);
    std::uniform_int_distribution<int> len(0, 400);
    for (int i = 0; i < 100; ++i) {
        judge::JudgeVerdict v;
        v.qa_id = "item-" + std::to_string(i);
        v.factual_accuracy = score(gen);
        v.user_satisfaction = score(gen);
        v.clarity = score(gen);
        v.condensability = score(gen);
        v.overall = score(gen);
        answer::QAPair qa;
        qa.question_id = v.qa_id;
        qa.question = "Question " + std::to_string(i) + "?";
        qa.answer = std::string(static_cast<std::size_t>(len(gen)), 'a');
        qa.answer_char_count = qa.answer.size();
        const std::string ref(static_cast<std::size_t>(len(gen) + 1), 'r');
        v.response_length = qa.answer.size();
        v.reference_length = ref.size();
        const auto out = judge::render_verdict(v, "Reasoning for item " + std::to_string(i) + ".");
        v.rationale_text = out;
        const auto parsed = judge::parse_verdict(out, qa, ref);
        c.expect(parsed == v, "verdict " + std::to_string(i) + " changed in the round trip");
        c.expect(judge::verdict_from_json(json::parse(judge::to_json(parsed).dump())) == parsed,
                 "verdict " + std::to_string(i) + " changed through JSON");
    }

    answer::QAPair qa;
    qa.question_id = "q";
    qa.question = "What is aliasing?";
    qa.answer = "Overlap of spectral copies.";
    for (const auto& row : read_jsonl(fixtures_dir() / "judge/malformed.jsonl")) {
        const auto name = row.at("name").get<std::string>();
        const auto output = row.at("output").get<std::string>();
        for (int retries : {0, 1, 2, 3}) {
            auto gw = make_gateway([&](const llm::ChatRequest&, std::size_t) { return reply(output); });
            judge::JudgeConfig cfg;
            cfg.parse_retries = retries;
            std::string kind = "none";
            try {
                judge::judge_answer(qa, "Spectral overlap caused by undersampling.", cfg, *gw);
            } catch (const Error& e) {
                kind = std::string(e.kind());
            }
            const std::string tag = name + " retries=" + std::to_string(retries);
            c.expect(kind == "JudgeFailed", tag + " raised " + kind);
            c.expect(gw.backend->calls() == static_cast<std::size_t>(retries + 1),
                     tag + " made " + std::to_string(gw.backend->calls()) + " attempts");
        }
    }
}

}  // namespace

int main() {
    spdlog::set_level(spdlog::level::off);
    const std::vector<Criterion> criteria{
        {"1 reported-row arithmetic within 0.005", 1.0, table_arithmetic},
        {"2 metrics match naive oracles within 1e-12", 10.0, metric_oracles},
        {"3 optimizer under scripted judge", 30.0, optimizer_scripted},
        {"4 question prompts and dedup", 10.0, question_generation},
        {"5 end-to-end determinism and golden digest", 60.0, end_to_end},
        {"6 judge round trip and retry count", 10.0, judge_round_trip},
    };
    int failed = 0;
    for (const auto& cr : criteria) {
        Check check;
        const auto start = std::chrono::steady_clock::now();
        std::string error;
        try {
            cr.body(check);
        } catch (const std::exception& e) {
            error = e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = secs <= cr.limit_seconds;
        const bool pass = error.empty() && check.ok() && in_time;
        if (!pass) ++failed;
        std::cout << (pass ? "PASS" : "FAIL") << "  [" << cr.name << "]  " << num(secs, 3) << "s (limit "
                  << num(cr.limit_seconds, 0) << "s)  ";
        if (!error.empty()) {
            std::cout << "exception: " << error;
        } else {
            std::cout << check.summary();
            if (!in_time) std::cout << "; over time limit";
        }
        std::cout << "\n";
    }
    std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed\n";
    return failed == 0 ? 0 : 1;
}
