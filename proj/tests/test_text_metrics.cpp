#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "distill/error.hpp"
#include "distill/text_metrics.hpp"
#include "oracles.hpp"

using namespace distill;
using metrics::from_words;
using metrics::TokenSequence;

namespace {

TokenSequence random_seq(std::mt19937& gen, int min_len, int max_len, int alphabet) {
    std::uniform_int_distribution<int> len(min_len, max_len);
    std::uniform_int_distribution<int> sym(0, alphabet - 1);
    TokenSequence s;
    int n = len(gen);
    for (int i = 0; i < n; ++i) s.tokens.push_back(std::string(1, static_cast<char>('a' + sym(gen))));
    return s;
}

}  // namespace

TEST(Tokenize, Examples) {
    EXPECT_EQ(metrics::tokenize("Hello, World").tokens, (std::vector<std::string>{"hello", "world"}));
    EXPECT_EQ(metrics::tokenize("OFDM 调制").tokens, (std::vector<std::string>{"ofdm", "调", "制"}));
    EXPECT_TRUE(metrics::tokenize("").empty());
    EXPECT_EQ(metrics::tokenize("QAM-16, 64QAM!").tokens,
              (std::vector<std::string>{"qam", "16", "64qam"}));
}

TEST(Tokenize, NoEmptyTokens) {
    for (const char* s : {"  ,, ;;", "a  b", "。信道，编码。", "x\ty\nz"}) {
        for (const auto& t : metrics::tokenize(s).tokens) EXPECT_FALSE(t.empty()) << s;
    }
}

TEST(Bleu, Examples) {
    EXPECT_NEAR(metrics::bleu({from_words("a b c")}, {from_words("a b d")}, 1), 2.0 / 3.0, 1e-12);
    EXPECT_NEAR(metrics::bleu({from_words("a b")}, {from_words("a b c d")}, 1), std::exp(1.0 - 2.0), 1e-12);
    std::vector<TokenSequence> corpus{from_words("the cat sat on the mat"), from_words("a b c d e")};
    for (int n = 1; n <= 4; ++n) EXPECT_DOUBLE_EQ(metrics::bleu(corpus, corpus, n), 1.0);
}

TEST(Bleu, Errors) {
    auto expect_code = [](auto fn, Errc code) {
        try {
            fn();
            FAIL() << "no throw";
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), code);
        }
    };
    expect_code([] { metrics::bleu({from_words("a")}, {}, 1); }, Errc::LengthMismatch);
    expect_code([] { metrics::bleu({}, {}, 1); }, Errc::EmptyCorpus);
    expect_code([] { metrics::bleu({from_words("a")}, {from_words("a")}, 5); }, Errc::InvalidArgument);
}

TEST(Bleu, ZeroPrecisionGivesZero) {
    EXPECT_EQ(metrics::bleu({from_words("a b c")}, {from_words("c b a")}, 2), 0.0);
}

TEST(Gleu, Examples) {
    EXPECT_DOUBLE_EQ(metrics::gleu(from_words("a b c d e"), from_words("a b c d e")), 1.0);
    EXPECT_EQ(metrics::gleu(TokenSequence{}, from_words("a b")), 0.0);
    EXPECT_NEAR(metrics::gleu(from_words("a b c"), from_words("a b c d")), 0.6, 1e-12);
}

TEST(Rouge, Examples) {
    auto id = metrics::rouge_n(from_words("a b c"), from_words("a b c"), 2);
    EXPECT_DOUBLE_EQ(id.f1, 1.0);
    auto r1 = metrics::rouge_n(from_words("a b c"), from_words("a b d"), 1);
    EXPECT_NEAR(r1.recall, 2.0 / 3.0, 1e-12);
    EXPECT_NEAR(r1.precision, 2.0 / 3.0, 1e-12);
    EXPECT_NEAR(r1.f1, 2.0 / 3.0, 1e-12);
    auto dis = metrics::rouge_n(from_words("a b"), from_words("c d"), 1);
    EXPECT_EQ(dis.precision, 0.0);
    EXPECT_EQ(dis.recall, 0.0);
    EXPECT_EQ(dis.f1, 0.0);
}

TEST(RougeL, Examples) {
    auto l = metrics::rouge_l(from_words("a c e"), from_words("a b c d e"));
    EXPECT_EQ(metrics::lcs_length(from_words("a c e"), from_words("a b c d e")), 3u);
    EXPECT_NEAR(l.recall, 0.6, 1e-12);
    EXPECT_NEAR(l.precision, 1.0, 1e-12);
    auto e = metrics::rouge_l(TokenSequence{}, from_words("a b"));
    EXPECT_EQ(e.f1, 0.0);
    EXPECT_DOUBLE_EQ(metrics::rouge_l(from_words("x y z w"), from_words("x y z w")).f1, 1.0);
}

TEST(RougeL, LongSequencesMatchDp) {
    // Crosses 64-token word boundaries of the bit-parallel LCS.
    std::mt19937 gen(7);
    for (int trial = 0; trial < 30; ++trial) {
        auto a = random_seq(gen, 50, 200, 6);
        auto b = random_seq(gen, 50, 200, 6);
        EXPECT_EQ(metrics::lcs_length(a, b), oracle::lcs(a.tokens, b.tokens));
    }
}

TEST(MetricProperties, OracleEquivalenceRandomPairs) {
    std::mt19937 gen(2024);
    std::vector<TokenSequence> cands, refs;
    std::vector<oracle::Seq> oc, orf;
    for (int i = 0; i < 200; ++i) {
        auto c = random_seq(gen, 1, 30, 5);
        auto r = random_seq(gen, 1, 30, 5);
        for (int n = 1; n <= 4; ++n) {
            EXPECT_NEAR(metrics::bleu({c}, {r}, n), oracle::bleu({c.tokens}, {r.tokens}, n), 1e-12);
        }
        EXPECT_NEAR(metrics::gleu(c, r), oracle::gleu(c.tokens, r.tokens), 1e-12);
        for (int n = 1; n <= 2; ++n) {
            auto got = metrics::rouge_n(c, r, n);
            auto want = oracle::rouge_n(c.tokens, r.tokens, static_cast<std::size_t>(n));
            EXPECT_NEAR(got.precision, want.p, 1e-12);
            EXPECT_NEAR(got.recall, want.r, 1e-12);
            EXPECT_NEAR(got.f1, want.f, 1e-12);
        }
        auto gl = metrics::rouge_l(c, r);
        auto wl = oracle::rouge_l(c.tokens, r.tokens);
        EXPECT_NEAR(gl.f1, wl.f, 1e-12);
        EXPECT_NEAR(gl.precision, wl.p, 1e-12);
        cands.push_back(c);
        refs.push_back(r);
        oc.push_back(c.tokens);
        orf.push_back(r.tokens);
    }
    for (int n = 1; n <= 4; ++n) EXPECT_NEAR(metrics::bleu(cands, refs, n), oracle::bleu(oc, orf, n), 1e-12);
}

TEST(MetricProperties, BoundsIdentityDisjoint) {
    std::mt19937 gen(99);
    for (int i = 0; i < 100; ++i) {
        auto c = random_seq(gen, 1, 30, 5);
        auto r = random_seq(gen, 1, 30, 5);
        auto row = metrics::compute_metric_row({c}, {r});
        for (double v : {row.bleu[0], row.bleu[1], row.bleu[2], row.bleu[3], row.gleu, row.rouge_1.f1,
                         row.rouge_2.f1, row.rouge_l.f1}) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
        auto same = metrics::compute_metric_row({c}, {c});
        if (c.size() >= 4) {
            for (double b : same.bleu) EXPECT_EQ(b, 1.0);
        }
        EXPECT_EQ(same.gleu, 1.0);
        EXPECT_EQ(same.rouge_1.f1, 1.0);
        EXPECT_EQ(same.rouge_l.f1, 1.0);

        // Disjoint vocabularies: upper-case tokens never occur in the lower-case alphabet.
        TokenSequence d;
        for (const auto& t : r.tokens) d.tokens.push_back(std::string(1, static_cast<char>(t[0] - 'a' + 'A')));
        auto dis = metrics::compute_metric_row({c}, {d});
        for (double v : {dis.bleu[0], dis.gleu, dis.rouge_1.f1, dis.rouge_2.f1, dis.rouge_l.f1}) EXPECT_EQ(v, 0.0);
    }
}

TEST(MetricProperties, ClippedCountsIgnoreExtraRepeats) {
    // Once every reference copy of a token is matched, more copies add nothing.
    TokenSequence r = from_words("a b a c");
    TokenSequence c = from_words("a a b c");
    double prev = metrics::bleu({c}, {r}, 1);
    for (int k = 0; k < 4; ++k) {
        c.tokens.push_back("a");
        double cur = metrics::bleu({c}, {r}, 1);
        EXPECT_LE(cur, prev + 1e-15);
        prev = cur;
    }
}

TEST(MetricProperties, PrecisionNonIncreasingUnderRepeatedMatchedPadding) {
    std::mt19937 gen(11);
    for (int i = 0; i < 100; ++i) {
        auto r = random_seq(gen, 1, 20, 5);
        TokenSequence c = r;  // every reference unigram already matched once
        const std::string tok = r.tokens[0];
        double prev = metrics::rouge_n(c, r, 1).precision;
        for (int k = 0; k < 5; ++k) {
            c.tokens.push_back(tok);
            double p = metrics::rouge_n(c, r, 1).precision;
            EXPECT_LE(p, prev + 1e-15);
            prev = p;
        }
    }
}

TEST(MetricProperties, RougeLSwapSymmetry) {
    std::mt19937 gen(17);
    for (int i = 0; i < 100; ++i) {
        auto a = random_seq(gen, 1, 30, 5);
        auto b = random_seq(gen, 1, 30, 5);
        auto ab = metrics::rouge_l(a, b);
        auto ba = metrics::rouge_l(b, a);
        EXPECT_DOUBLE_EQ(ab.precision, ba.recall);
        EXPECT_DOUBLE_EQ(ab.recall, ba.precision);
        EXPECT_NEAR(ab.f1, ba.f1, 1e-15);
    }
}

TEST(MetricRow, SentenceMeanModeAveragesPairs) {
    std::vector<TokenSequence> c{from_words("a b c"), from_words("a b")};
    std::vector<TokenSequence> r{from_words("a b d"), from_words("a b c d")};
    auto row = metrics::compute_metric_row(c, r, metrics::BleuMode::SentenceMean);
    double want = (2.0 / 3.0 + std::exp(-1.0)) / 2.0;
    EXPECT_NEAR(row.bleu[0], want, 1e-12);
    EXPECT_NEAR(row.gleu, (metrics::gleu(c[0], r[0]) + metrics::gleu(c[1], r[1])) / 2.0, 1e-15);
}
