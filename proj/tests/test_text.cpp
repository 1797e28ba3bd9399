#include <gtest/gtest.h>

#include <set>

#include "distill/digest.hpp"
#include "distill/jsonl.hpp"
#include "distill/rng.hpp"
#include "distill/text.hpp"
#include "test_support.hpp"

using namespace distill;

TEST(Utf8, DecodeEncodeRoundTrip) {
    const std::string s = "ASCII, 信道 and émigré \xF0\x9F\x93\xA1";
    auto cps = text::decode_utf8(s);
    EXPECT_EQ(cps.size(), 22u);
    EXPECT_EQ(text::encode_utf8(cps), s);
    EXPECT_EQ(text::codepoint_count(s), 22u);
}

TEST(Utf8, InvalidBytesBecomeReplacement) {
    auto cps = text::decode_utf8("a\xFF" "b");
    ASSERT_EQ(cps.size(), 3u);
    EXPECT_EQ(cps[1], U'�');
}

TEST(Whitespace, NormalizeAndCharLength) {
    EXPECT_EQ(text::normalize_whitespace("  a \t b\n\nc  "), "a b c");
    EXPECT_EQ(text::normalize_whitespace("信道　编码"), "信道 编码");
    EXPECT_EQ(text::char_length("  a \t b\n\nc  "), 5u);
    EXPECT_EQ(text::char_length(""), 0u);
    EXPECT_EQ(text::trim("\n x y \t"), "x y");
}

TEST(Lines, SplitHandlesCrlf) {
    EXPECT_EQ(text::split_lines("a\r\nb\nc"), (std::vector<std::string>{"a", "b", "c"}));
}

TEST(Digest, KnownVector) {
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    EXPECT_EQ(short_digest("abc", 8), "ba7816bf");
    EXPECT_EQ(digest_u64("abc"), 0xba7816bf8f01cfeaULL);
}

TEST(Rng, DerivedStreamsAreStableAndDistinct) {
    EXPECT_EQ(derive_seed(42, "a"), derive_seed(42, "a"));
    EXPECT_NE(derive_seed(42, "a"), derive_seed(42, "b"));
    EXPECT_NE(derive_seed(42, "a"), derive_seed(43, "a"));
    Rng x(42, "stream"), y(42, "stream");
    for (int i = 0; i < 10; ++i) EXPECT_EQ(x.next(), y.next());
}

TEST(Rng, BelowAndSampleIndices) {
    Rng r(1);
    for (int i = 0; i < 1000; ++i) EXPECT_LT(r.below(7), 7u);
    auto idx = r.sample_indices(10, 10);
    std::set<std::size_t> distinct(idx.begin(), idx.end());
    EXPECT_EQ(distinct.size(), 10u);
    EXPECT_ERRC(r.sample_indices(3, 4), InvalidArgument);
    EXPECT_ERRC(r.below(0), InvalidArgument);
}

TEST(Rng, BelowIsRoughlyUniform) {
    Rng r(7);
    std::vector<int> counts(5, 0);
    for (int i = 0; i < 50000; ++i) ++counts[r.below(5)];
    for (int c : counts) EXPECT_NEAR(c, 10000, 500);
}

TEST(Jsonl, ParseReportsLine) {
    auto rows = parse_jsonl("{\"a\":1}\n\n{\"a\":2}\n");
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[1]["a"], 2);
    try {
        parse_jsonl("{\"a\":1}\n{oops\n", "f.jsonl");
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("f.jsonl:2"), std::string::npos) << e.what();
    }
}

TEST(Jsonl, AtomicWriteCreatesParents) {
    testing_support::TempDir dir;
    auto p = dir / "a/b/c.jsonl";
    write_jsonl(p, std::vector<ordered_json>{{{"k", "v"}}});
    EXPECT_EQ(read_file(p), "{\"k\":\"v\"}\n");
}
