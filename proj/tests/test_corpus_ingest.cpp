#include <gtest/gtest.h>

#include <random>
#include <set>

#include "distill/corpus_ingest.hpp"
#include "distill/text.hpp"
#include "test_support.hpp"

using namespace distill;
using ingest::SplitPolicy;

namespace {

// Sentences of `sentence_len` characters ending in a period, cut to exactly `chars`.
std::string block(std::size_t chars, char fill = 'x', std::size_t sentence_len = 50) {
    std::string out;
    while (out.size() < chars) {
        if (!out.empty()) out += ' ';
        out += std::string(sentence_len - 1, fill) + '.';
    }
    out.resize(chars);
    out.back() = '.';
    return out;
}

std::string strip_space(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c != ' ' && c != '\n' && c != '\t') out += c;
    }
    return out;
}

std::string seed_lines(std::size_t n, bool duplicate = false) {
    std::string out;
    for (std::size_t i = 0; i < n; ++i) {
        std::string id = duplicate && i == n - 1 ? "s0" : "s" + std::to_string(i);
        out += R"({"id":")" + id + R"(","text":"Seed question )" + std::to_string(i) + "?\"}\n";
    }
    return out;
}

}  // namespace

TEST(Split, TwoLargeBlocks) {
    auto doc = block(300, 'a') + "\n\n" + block(300, 'b');
    auto ps = ingest::split_paragraphs(doc, SplitPolicy{});
    ASSERT_EQ(ps.size(), 2u);
    EXPECT_EQ(ps[0].ordinal, 0u);
    EXPECT_EQ(ps[1].ordinal, 1u);
    EXPECT_EQ(ps[0].char_count, 300u);
}

TEST(Split, ShortBlocksMergeForward) {
    auto doc = block(100, 'a') + "\n\n" + block(150, 'b');
    auto ps = ingest::split_paragraphs(doc, SplitPolicy{});
    ASSERT_EQ(ps.size(), 1u);
    EXPECT_EQ(ps[0].char_count, 250u + ingest::kMergeSeparator.size());
}

TEST(Split, LongBlockCutsAtSentenceEnds) {
    auto doc = block(2500, 'c', 70);
    SplitPolicy pol;
    auto ps = ingest::split_paragraphs(doc, pol);
    ASSERT_GE(ps.size(), 2u);
    for (std::size_t i = 0; i < ps.size(); ++i) {
        EXPECT_LE(ps[i].char_count, 1200u);
        EXPECT_EQ(ps[i].text.back(), '.') << i;
    }
}

TEST(Split, EmptyDocument) {
    EXPECT_ERRC(ingest::split_paragraphs("  \n\n \t\n", SplitPolicy{}), EmptyDocument);
}

TEST(Split, ChapterHeadingsLabelButDoNotEnterText) {
    auto doc = "Chapter 1 Signals\n\n" + block(300, 'a') + "\n\nChapter 2 Noise\n" + block(300, 'b');
    auto ps = ingest::split_paragraphs(doc, SplitPolicy{});
    ASSERT_EQ(ps.size(), 2u);
    EXPECT_EQ(ps[0].chapter, "Chapter 1 Signals");
    EXPECT_EQ(ps[1].chapter, "Chapter 2 Noise");
    EXPECT_EQ(ps[1].text.find("Chapter"), std::string::npos);
}

TEST(Split, CjkTerminators) {
    std::string sentence = "信道编码用于提高传输的可靠性。";  // 15 code points
    std::string doc;
    for (int i = 0; i < 100; ++i) doc += sentence;
    auto ps = ingest::split_paragraphs(doc, SplitPolicy{});
    ASSERT_GE(ps.size(), 2u);
    for (const auto& p : ps) {
        EXPECT_LE(p.char_count, 1200u);
        EXPECT_EQ(p.char_count, text::codepoint_count(p.text));
        EXPECT_EQ(p.text.substr(p.text.size() - 3), "。");
    }
}

TEST(Split, PolicyValidation) {
    SplitPolicy p;
    p.min_chars = 1200;
    EXPECT_ERRC(ingest::split_paragraphs("x", p), InvalidArgument);
}

TEST(SplitProperties, DeterministicBoundedAndPreserving) {
    std::mt19937 gen(12);
    std::uniform_int_distribution<std::size_t> nblocks(1, 12);
    std::uniform_int_distribution<std::size_t> size(20, 2600);
    std::uniform_int_distribution<std::size_t> sent(10, 160);
    for (int trial = 0; trial < 60; ++trial) {
        std::string doc;
        std::size_t n = nblocks(gen);
        for (std::size_t i = 0; i < n; ++i) {
            if (i) doc += "\n\n";
            doc += block(size(gen), static_cast<char>('a' + i % 26), sent(gen));
        }
        SplitPolicy pol;
        auto a = ingest::split_paragraphs(doc, pol, "doc");
        auto b = ingest::split_paragraphs(doc, pol, "doc");
        EXPECT_EQ(a, b);
        std::size_t short_count = 0;
        std::string joined;
        std::set<std::string> ids;
        for (std::size_t i = 0; i < a.size(); ++i) {
            EXPECT_LE(a[i].char_count, pol.max_chars);
            EXPECT_GE(a[i].char_count, 1u);
            EXPECT_EQ(a[i].ordinal, i);
            if (a[i].char_count < pol.min_chars) ++short_count;
            joined += a[i].text;
            ids.insert(a[i].id);
        }
        EXPECT_LE(short_count, 1u);
        EXPECT_EQ(ids.size(), a.size());
        EXPECT_EQ(strip_space(joined), strip_space(doc));
    }
}

TEST(SeedPool, Examples) {
    EXPECT_EQ(ingest::parse_seed_pool(seed_lines(50)).size(), 50u);
    EXPECT_ERRC(ingest::parse_seed_pool(seed_lines(8)), PoolTooSmall);
    EXPECT_ERRC(ingest::parse_seed_pool(seed_lines(12, true)), DuplicateId);
}

TEST(SeedPool, IdsDefaultToContentDigest) {
    std::string content;
    for (int i = 0; i < 9; ++i) content += R"({"text":"Q )" + std::to_string(i) + "\"}\n";
    auto a = ingest::parse_seed_pool(content);
    auto b = ingest::parse_seed_pool(content);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a[0].id.rfind("seed-", 0), 0u);
}

TEST(SeedPool, LoadsFixture) {
    auto pool = ingest::load_seed_pool(testing_support::fixtures_dir() / "mini" / "seeds.jsonl");
    EXPECT_EQ(pool.size(), 12u);
}

TEST(Paragraphs, JsonRoundTrip) {
    auto ps = ingest::split_paragraphs(testing_support::read_file(testing_support::fixtures_dir() / "mini" / "textbook.md"),
                                       SplitPolicy{});
    EXPECT_EQ(ps.size(), 10u);
    for (const auto& p : ps) EXPECT_EQ(ingest::paragraph_from_json(json::parse(ingest::to_json(p).dump())), p);
}
