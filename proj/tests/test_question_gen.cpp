#include <gtest/gtest.h>

#include <mutex>
#include <random>
#include <set>

#include "distill/prompts.hpp"
#include "distill/question_gen.hpp"
#include "distill/text.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace distill;
using qgen::GenPlan;
using qgen::Origin;
using qgen::QuestionRecord;
using testing_support::example_lines;
using testing_support::make_gateway;
using testing_support::reply;

namespace {

std::vector<ingest::SeedQuestion> seeds(std::size_t n) {
    std::vector<ingest::SeedQuestion> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back({"s" + std::to_string(i), "Seed question " + std::to_string(i) + "?"});
    return out;
}

ingest::TextbookParagraph paragraph(const std::string& id, std::size_t chars) {
    ingest::TextbookParagraph p;
    p.id = id;
    p.source_doc = "book";
    p.text = std::string(chars, 'z');
    p.char_count = chars;
    return p;
}

QuestionRecord record(const std::string& id, const std::string& text, int round = 0) {
    QuestionRecord q;
    q.id = id;
    q.text = text;
    q.round = round;
    q.origin = round == 0 ? Origin::Paragraph : Origin::Sampled;
    if (round == 0) q.source_paragraph_id = "p";
    q.generator_model = "m";
    return q;
}

// Replies with as many numbered questions as the prompt asks for, tagged by a request counter.
llm::ChatResponse list_teacher(const llm::ChatRequest& r, std::size_t call) {
    const auto& u = r.last_user_content();
    const auto pos = u.find("exactly ");
    const int n = std::stoi(u.substr(pos + 8, 3));
    std::string out;
    for (int i = 1; i <= n; ++i) {
        out += std::to_string(i) + ". Distinct question " + std::to_string(call) + "-" + std::to_string(i) +
               " about topic " + std::to_string(call * 31 + i) + "?\n";
    }
    return reply(out);
}

double brute_jaccard(const std::string& a, const std::string& b) {
    return oracle::jaccard_trigrams(text::decode_utf8(qgen::normalize_question(a)),
                                    text::decode_utf8(qgen::normalize_question(b)));
}

}  // namespace

TEST(TargetCount, Examples) {
    GenPlan plan;
    EXPECT_EQ(qgen::target_count(1000, plan), 10);
    EXPECT_EQ(qgen::target_count(200, plan), 5);
    EXPECT_EQ(qgen::target_count(5000, plan), 15);
    EXPECT_EQ(qgen::target_count(1001, plan), 11);
    plan.per_paragraph_target = 7;
    EXPECT_EQ(qgen::target_count(5000, plan), 7);
}

TEST(ParagraphPrompt, SixSeedPlusTwoGenerated) {
    GenPlan plan;
    Rng rng(1);
    std::vector<QuestionRecord> gen_pool{record("g1", "Generated one?"), record("g2", "Generated two?"),
                                         record("g3", "Generated three?")};
    auto ex = qgen::pick_paragraph_examples(seeds(20), gen_pool, plan, rng);
    EXPECT_EQ(ex.seed.size(), 6u);
    EXPECT_EQ(ex.generated.size(), 2u);
    auto req = qgen::assemble_paragraph_prompt(paragraph("p1", 500), ex, 10, "m", plan);
    const auto& u = req.last_user_content();
    auto lines = example_lines(u, prompts::kExamplesHeader);
    EXPECT_EQ(lines.size(), 8u);
    EXPECT_NE(u.find("exactly 10 "), std::string::npos);
    EXPECT_NE(u.find(std::string(500, 'z')), std::string::npos);
}

TEST(ParagraphPrompt, ColdStartUsesEightSeeds) {
    GenPlan plan;
    Rng rng(2);
    auto ex = qgen::pick_paragraph_examples(seeds(20), {}, plan, rng);
    EXPECT_EQ(ex.seed.size(), 8u);
    EXPECT_TRUE(ex.generated.empty());
    std::set<std::string> distinct(ex.seed.begin(), ex.seed.end());
    EXPECT_EQ(distinct.size(), 8u);
    Rng rng1(3);
    auto one = qgen::pick_paragraph_examples(seeds(20), {record("g", "Only one?")}, plan, rng1);
    EXPECT_EQ(one.seed.size(), 7u);
    EXPECT_EQ(one.generated.size(), 1u);
}

TEST(SamplingPrompt, ThreeStyleExamples) {
    GenPlan plan;
    std::vector<QuestionRecord> prev;
    for (int i = 0; i < 20; ++i) prev.push_back(record("r" + std::to_string(i), "Round zero question " + std::to_string(i) + "?"));
    std::vector<std::string> prompts_seen;
    std::mutex mu;
    auto gw = make_gateway([&](const llm::ChatRequest& r, std::size_t call) {
        std::lock_guard lock(mu);
        prompts_seen.push_back(r.last_user_content());
        return list_teacher(r, call);
    });
    auto out = qgen::sample_new_questions(prev, seeds(12), plan, "m", *gw);
    ASSERT_EQ(prompts_seen.size(), 1u);
    EXPECT_EQ(example_lines(prompts_seen[0], prompts::kStyleExamplesHeader).size(), 3u);
    EXPECT_EQ(example_lines(prompts_seen[0], prompts::kContentExamplesHeader).size(), 6u);
    EXPECT_EQ(out.size(), 10u);
    for (const auto& q : out) {
        EXPECT_EQ(q.round, 1);
        EXPECT_EQ(q.origin, Origin::Sampled);
        EXPECT_FALSE(q.source_paragraph_id.has_value());
    }
    EXPECT_ERRC(qgen::sample_new_questions({prev.begin(), prev.begin() + 5}, seeds(12), plan, "m", *gw),
                InsufficientPool);
}

TEST(ParseList, Examples) {
    EXPECT_EQ(qgen::parse_question_list("1. A?\n2. B?"), (std::vector<std::string>{"A?", "B?"}));
    EXPECT_EQ(qgen::parse_question_list("- A?\n- B?"), (std::vector<std::string>{"A?", "B?"}));
    EXPECT_EQ(qgen::parse_question_list("1、甲？\n(2) B?\n• C?\nHere you go:"),
              (std::vector<std::string>{"甲？", "B?", "C?"}));
    EXPECT_ERRC(qgen::parse_question_list("I cannot help with that."), EmptyParse);
    EXPECT_FALSE(qgen::parse_list_item("3.5 volts is typical").has_value());
}

TEST(GenerateForParagraph, ProvenanceAndCount) {
    GenPlan plan;
    auto gw = make_gateway(list_teacher);
    auto p = paragraph("para-1", 1000);
    auto out = qgen::generate_for_paragraph(p, seeds(12), {}, plan, "teacher-a", *gw);
    EXPECT_EQ(out.size(), 10u);
    for (const auto& q : out) {
        EXPECT_EQ(q.source_paragraph_id, "para-1");
        EXPECT_EQ(q.round, 0);
        EXPECT_EQ(q.generator_model, "teacher-a");
    }
}

TEST(GenerateForParagraph, ReprompsOnceOnEmptyParse) {
    auto gw = make_gateway([](const llm::ChatRequest& r, std::size_t call) {
        if (call == 0) return reply("Sure! Here are some thoughts.");
        EXPECT_EQ(r.messages.back().content, std::string(prompts::kListReminder));
        return reply("1. Q one?\n2. Q two?");
    });
    auto out = qgen::generate_for_paragraph(paragraph("p", 300), seeds(12), {}, GenPlan{}, "m", *gw);
    EXPECT_EQ(out.size(), 2u);
    auto never = make_gateway([](const llm::ChatRequest&, std::size_t) { return reply("no list"); });
    EXPECT_ERRC(qgen::generate_for_paragraph(paragraph("p", 300), seeds(12), {}, GenPlan{}, "m", *never), EmptyParse);
    EXPECT_EQ(never.backend->calls(), 2u);
}

TEST(Rounds, TwoRoundsOnlyAndRequestCounts) {
    GenPlan plan;
    std::vector<ingest::TextbookParagraph> ps;
    for (int i = 0; i < 10; ++i) ps.push_back(paragraph("p" + std::to_string(i), 500));
    auto gw = make_gateway(list_teacher);
    auto r0 = qgen::generate_round0(ps, seeds(12), plan, "m", *gw);
    EXPECT_EQ(r0.records.size(), 50u);
    EXPECT_TRUE(r0.failures.empty());
    EXPECT_TRUE(qgen::uncovered_paragraphs(ps, r0.records).empty());
    auto rs = qgen::run_sampling_rounds(r0.records, seeds(12), plan, "m", *gw);
    std::set<int> rounds;
    for (const auto& q : rs.records) rounds.insert(q.round);
    EXPECT_EQ(rounds, (std::set<int>{1, 2}));
    EXPECT_EQ(qgen::sampling_requests_for(50, plan), 5u);
    // 10 paragraph calls, 5 calls in round 1 and ceil(50/10) = 5 in round 2.
    EXPECT_EQ(gw.backend->calls(), 20u);
}

TEST(Rounds, FailuresAreLoggedAndCoverageReported) {
    auto gw = make_gateway([](const llm::ChatRequest& r, std::size_t call) -> llm::ChatResponse {
        if (r.last_user_content().find("BROKEN") != std::string::npos) fail(Errc::MalformedResponse, "bad");
        return list_teacher(r, call);
    });
    std::vector<ingest::TextbookParagraph> ps{paragraph("ok", 300), paragraph("bad", 300)};
    ps[1].text = "BROKEN paragraph";
    auto r0 = qgen::generate_round0(ps, seeds(12), GenPlan{}, "m", *gw);
    ASSERT_EQ(r0.failures.size(), 1u);
    EXPECT_EQ(r0.failures[0].scope, "bad");
    EXPECT_EQ(r0.failures[0].error_kind, "MalformedResponse");
    EXPECT_EQ(qgen::uncovered_paragraphs(ps, r0.records), std::vector<std::string>{"bad"});
}

TEST(Round0, DeterministicAcrossWorkerCounts) {
    std::vector<ingest::TextbookParagraph> ps;
    for (int i = 0; i < 20; ++i) ps.push_back(paragraph("p" + std::to_string(i), 300 + 37 * i));
    GenPlan plan;
    plan.rng_seed = 99;
    // Reply content depends only on the request, so scheduling cannot change output.
    auto content_teacher = [](const llm::ChatRequest& r, std::size_t) {
        const auto key = llm::cache_key(r).substr(0, 8);
        return reply("1. Question " + key + " one?\n2. Question " + key + " two?");
    };
    auto g1 = make_gateway(content_teacher, 1);
    auto g8 = make_gateway(content_teacher, 8);
    auto a = qgen::generate_round0(ps, seeds(12), plan, "m", *g1);
    auto b = qgen::generate_round0(ps, seeds(12), plan, "m", *g8);
    EXPECT_EQ(a.records, b.records);
}

TEST(Dedup, Examples) {
    auto r = qgen::dedup({record("a", "What is QPSK?"), record("b", "What is QPSK?")});
    EXPECT_EQ(r.kept.size(), 1u);
    EXPECT_EQ(r.kept[0].id, "a");
    EXPECT_TRUE(r.audit[0].exact);

    r = qgen::dedup({record("a", "What is QPSK?"), record("b", "what is  qpsk")});
    EXPECT_EQ(r.kept.size(), 1u);

    const std::string x = "Explain why the matched filter maximizes output SNR at the sampling instant";
    const std::string y = "Explain why the matched filter maximizes output SNR at the sampling instants";
    const std::string z = "Compare delta modulation with PCM in terms of bandwidth";
    ASSERT_GE(brute_jaccard(x, y), 0.8);
    ASSERT_LT(brute_jaccard(x, z), 0.3);
    r = qgen::dedup({record("x", x), record("y", y), record("z", z)});
    ASSERT_EQ(r.kept.size(), 2u);
    EXPECT_EQ(r.kept[0].id, "x");
    EXPECT_EQ(r.kept[1].id, "z");
    EXPECT_EQ(r.audit[0].dropped_id, "y");
    EXPECT_NEAR(r.audit[0].similarity, brute_jaccard(x, y), 1e-12);
}

TEST(Dedup, EarlierRoundWins) {
    auto r = qgen::dedup({record("late", "What is ISI?", 2), record("early", "What is ISI?", 0)});
    ASSERT_EQ(r.kept.size(), 1u);
    EXPECT_EQ(r.kept[0].id, "early");
}

TEST(Dedup, ExactOnlyMode) {
    const std::string x = "Explain why the matched filter maximizes output SNR at the sampling instant";
    qgen::DedupOptions opts;
    opts.fuzzy = false;
    auto r = qgen::dedup({record("x", x), record("y", x + "s")}, opts);
    EXPECT_EQ(r.kept.size(), 2u);
}

TEST(DedupProperties, NoSurvivingNearPairsAndIdempotent) {
    std::mt19937 gen(21);
    const std::vector<std::string> words{"signal", "noise", "channel", "code", "rate", "error", "PCM",
                                         "QAM",    "filter", "band",    "power", "phase", "gain"};
    std::uniform_int_distribution<std::size_t> w(0, words.size() - 1);
    std::uniform_int_distribution<int> len(2, 7);
    std::uniform_int_distribution<int> coin(0, 3);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<QuestionRecord> qs;
        for (int i = 0; i < 150; ++i) {
            std::string t;
            if (!qs.empty() && coin(gen) == 0) {
                t = qs[std::uniform_int_distribution<std::size_t>(0, qs.size() - 1)(gen)].text;
                if (coin(gen) == 0) t += "?";
                if (coin(gen) == 0) t += " " + words[w(gen)];
            } else {
                int n = len(gen);
                for (int k = 0; k < n; ++k) t += (k ? " " : "") + words[w(gen)];
            }
            qs.push_back(record("q" + std::to_string(i), t, coin(gen) == 0 ? 1 : 0));
        }
        auto once = qgen::dedup(qs);
        for (std::size_t i = 0; i < once.kept.size(); ++i) {
            for (std::size_t j = i + 1; j < once.kept.size(); ++j) {
                EXPECT_NE(qgen::normalize_question(once.kept[i].text), qgen::normalize_question(once.kept[j].text));
                EXPECT_LT(brute_jaccard(once.kept[i].text, once.kept[j].text), 0.8);
            }
        }
        EXPECT_EQ(once.kept.size() + once.audit.size(), qs.size());
        auto twice = qgen::dedup(once.kept);
        EXPECT_EQ(twice.kept, once.kept);
        EXPECT_TRUE(twice.audit.empty());
    }
}

TEST(MergeModels, Examples) {
    std::vector<QuestionRecord> a, b;
    for (int i = 0; i < 5; ++i) {
        a.push_back(record("a" + std::to_string(i), "Alpha topic number " + std::to_string(i * 1111) + " about fading?"));
        b.push_back(record("b" + std::to_string(i), "Beta subject item " + std::to_string(i * 7777) + " regarding coding?"));
    }
    EXPECT_EQ(qgen::merge_models({{"m2", b}, {"m1", a}}).kept.size(), 10u);
    auto b2 = b;
    b2[2].text = a[3].text + "!";
    auto merged = qgen::merge_models({{"m2", b2}, {"m1", a}});
    EXPECT_EQ(merged.kept.size(), 9u);
    EXPECT_EQ(merged.kept.front().id, "a0");  // model-name order
    auto only = qgen::merge_models({{"m1", a}, {"m2", {}}});
    EXPECT_EQ(only.kept, a);
}

TEST(Trigrams, MatchOracleOnShortAndCjkText) {
    for (auto [x, y] : std::vector<std::pair<std::string, std::string>>{
             {"ab", "ab"}, {"a", "abc"}, {"信道编码", "信道解码"}, {"What is AM?", "What is FM?"}}) {
        const auto nx = qgen::normalize_question(x), ny = qgen::normalize_question(y);
        EXPECT_NEAR(qgen::jaccard(qgen::char_trigrams(nx), qgen::char_trigrams(ny)), brute_jaccard(x, y), 1e-12);
    }
}

TEST(Serialization, QuestionRoundTrip) {
    auto q = record("id1", "Why use line coding?");
    EXPECT_EQ(qgen::question_from_json(json::parse(qgen::to_json(q).dump())), q);
    auto s = record("id2", "Why?", 2);
    EXPECT_EQ(qgen::question_from_json(json::parse(qgen::to_json(s).dump())), s);
}
