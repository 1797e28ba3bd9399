#include "distill/text_metrics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <unordered_map>

#include "distill/error.hpp"
#include "distill/text.hpp"

namespace distill::metrics {

namespace {

bool is_cjk_ideograph(char32_t c) {
    return (c >= 0x4E00 && c <= 0x9FFF) || (c >= 0x3400 && c <= 0x4DBF) ||
           (c >= 0xF900 && c <= 0xFAFF) || (c >= 0x20000 && c <= 0x2A6DF) ||
           (c >= 0x2A700 && c <= 0x2EBEF) || (c >= 0x30000 && c <= 0x3134F);
}

bool is_word_char(char32_t c) {
    if ((c >= U'a' && c <= U'z') || (c >= U'A' && c <= U'Z') || (c >= U'0' && c <= U'9')) return true;
    if (c >= 0xC0 && c <= 0x24F && c != 0xD7 && c != 0xF7) return true;  // Latin-1 and Extended
    if (c >= 0x370 && c <= 0x3FF && c != 0x37E && c != 0x387) return true;  // Greek
    return c >= 0x400 && c <= 0x4FF;                                        // Cyrillic
}

char32_t fold(char32_t c) {
    if (c >= U'A' && c <= U'Z') return c + 32;
    if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 32;
    if (c >= 0x391 && c <= 0x3A9) return c + 32;
    if (c >= 0x410 && c <= 0x42F) return c + 32;
    return c;
}

// N-grams are interned to token ids so counting is over integer vectors.
using Gram = std::vector<std::uint32_t>;

struct Interner {
    std::unordered_map<std::string, std::uint32_t> ids;
    std::vector<std::uint32_t> encode(const TokenSequence& s) {
        std::vector<std::uint32_t> out;
        out.reserve(s.size());
        for (const auto& t : s.tokens) {
            auto [it, inserted] = ids.try_emplace(t, static_cast<std::uint32_t>(ids.size()));
            out.push_back(it->second);
        }
        return out;
    }
};

std::map<Gram, std::size_t> gram_counts(const std::vector<std::uint32_t>& s, int n) {
    std::map<Gram, std::size_t> counts;
    const auto un = static_cast<std::size_t>(n);
    for (std::size_t i = 0; i + un <= s.size(); ++i) {
        ++counts[Gram(s.begin() + static_cast<std::ptrdiff_t>(i),
                      s.begin() + static_cast<std::ptrdiff_t>(i + un))];
    }
    return counts;
}

struct Overlap {
    std::size_t matches = 0;
    std::size_t candidate_total = 0;
    std::size_t reference_total = 0;
};

Overlap clipped_overlap(const std::vector<std::uint32_t>& cand, const std::vector<std::uint32_t>& ref,
                        int n) {
    Overlap o;
    const auto un = static_cast<std::size_t>(n);
    o.candidate_total = cand.size() >= un ? cand.size() - un + 1 : 0;
    o.reference_total = ref.size() >= un ? ref.size() - un + 1 : 0;
    if (o.candidate_total == 0 || o.reference_total == 0) return o;
    auto rc = gram_counts(ref, n);
    for (const auto& [gram, count] : gram_counts(cand, n)) {
        auto it = rc.find(gram);
        if (it != rc.end()) o.matches += std::min(count, it->second);
    }
    return o;
}

PRF make_prf(std::size_t matches, std::size_t cand_total, std::size_t ref_total) {
    PRF r;
    r.precision = cand_total ? static_cast<double>(matches) / static_cast<double>(cand_total) : 0.0;
    r.recall = ref_total ? static_cast<double>(matches) / static_cast<double>(ref_total) : 0.0;
    r.f1 = (r.precision + r.recall) > 0.0
               ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
               : 0.0;
    return r;
}

void check_corpus(const std::vector<TokenSequence>& c, const std::vector<TokenSequence>& r) {
    if (c.size() != r.size()) {
        fail(Errc::LengthMismatch, "candidate and reference corpora differ in size");
    }
    if (c.empty()) fail(Errc::EmptyCorpus, "empty corpus");
}

}  // namespace

TokenSequence from_words(std::string_view words) {
    TokenSequence s;
    std::size_t i = 0;
    while (i < words.size()) {
        while (i < words.size() && words[i] == ' ') ++i;
        std::size_t j = i;
        while (j < words.size() && words[j] != ' ') ++j;
        if (j > i) s.tokens.emplace_back(words.substr(i, j - i));
        i = j;
    }
    return s;
}

TokenSequence tokenize(std::string_view input) {
    TokenSequence out;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) out.tokens.push_back(std::move(word));
        word.clear();
    };
    for (char32_t c : text::decode_utf8(input)) {
        if (is_cjk_ideograph(c)) {
            flush();
            std::string t;
            text::append_utf8(t, c);
            out.tokens.push_back(std::move(t));
        } else if (is_word_char(c)) {
            text::append_utf8(word, fold(c));
        } else {
            flush();
        }
    }
    flush();
    return out;
}

double bleu(const std::vector<TokenSequence>& candidates,
            const std::vector<TokenSequence>& references, int max_n) {
    check_corpus(candidates, references);
    if (max_n < 1 || max_n > 4) fail(Errc::InvalidArgument, "BLEU max_n must be in 1..4");
    Interner interner;
    std::vector<std::size_t> matches(static_cast<std::size_t>(max_n), 0);
    std::vector<std::size_t> totals(static_cast<std::size_t>(max_n), 0);
    std::size_t c_len = 0, r_len = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        auto c = interner.encode(candidates[i]);
        auto r = interner.encode(references[i]);
        c_len += c.size();
        r_len += r.size();
        for (int n = 1; n <= max_n; ++n) {
            auto o = clipped_overlap(c, r, n);
            matches[static_cast<std::size_t>(n - 1)] += o.matches;
            totals[static_cast<std::size_t>(n - 1)] += o.candidate_total;
        }
    }
    double log_sum = 0.0;
    for (int n = 0; n < max_n; ++n) {
        const auto un = static_cast<std::size_t>(n);
        if (totals[un] == 0 || matches[un] == 0) return 0.0;
        log_sum += std::log(static_cast<double>(matches[un]) / static_cast<double>(totals[un]));
    }
    const double geo = std::exp(log_sum / max_n);
    const double bp = c_len >= r_len
                          ? 1.0
                          : std::exp(1.0 - static_cast<double>(r_len) / static_cast<double>(c_len));
    return geo * bp;
}

double sentence_bleu_mean(const std::vector<TokenSequence>& candidates,
                          const std::vector<TokenSequence>& references, int max_n) {
    check_corpus(candidates, references);
    double sum = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        sum += bleu({candidates[i]}, {references[i]}, max_n);
    }
    return sum / static_cast<double>(candidates.size());
}

double gleu(const TokenSequence& candidate, const TokenSequence& reference) {
    if (candidate.empty() || reference.empty()) return 0.0;
    Interner interner;
    auto c = interner.encode(candidate);
    auto r = interner.encode(reference);
    std::size_t matches = 0, c_total = 0, r_total = 0;
    for (int n = 1; n <= 4; ++n) {
        auto o = clipped_overlap(c, r, n);
        matches += o.matches;
        c_total += o.candidate_total;
        r_total += o.reference_total;
    }
    const double p = static_cast<double>(matches) / static_cast<double>(c_total);
    const double rc = static_cast<double>(matches) / static_cast<double>(r_total);
    return std::min(p, rc);
}

double corpus_gleu(const std::vector<TokenSequence>& candidates,
                   const std::vector<TokenSequence>& references) {
    check_corpus(candidates, references);
    double sum = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) sum += gleu(candidates[i], references[i]);
    return sum / static_cast<double>(candidates.size());
}

PRF rouge_n(const TokenSequence& candidate, const TokenSequence& reference, int n) {
    if (n < 1) fail(Errc::InvalidArgument, "ROUGE-N needs n >= 1");
    Interner interner;
    auto c = interner.encode(candidate);
    auto r = interner.encode(reference);
    auto o = clipped_overlap(c, r, n);
    return make_prf(o.matches, o.candidate_total, o.reference_total);
}

std::size_t lcs_length(const TokenSequence& a_seq, const TokenSequence& b_seq) {
    // Allison-Dix / Hyyro bit-vector LCS over the shorter sequence's positions.
    const TokenSequence& a = a_seq.size() <= b_seq.size() ? a_seq : b_seq;
    const TokenSequence& b = a_seq.size() <= b_seq.size() ? b_seq : a_seq;
    if (a.empty()) return 0;
    Interner interner;
    auto av = interner.encode(a);
    auto bv = interner.encode(b);
    const std::size_t m = av.size();
    const std::size_t words = (m + 63) / 64;
    std::unordered_map<std::uint32_t, std::vector<std::uint64_t>> match;
    for (std::size_t i = 0; i < m; ++i) {
        auto& mask = match[av[i]];
        if (mask.empty()) mask.assign(words, 0);
        mask[i / 64] |= std::uint64_t{1} << (i % 64);
    }
    std::vector<std::uint64_t> v(words, ~std::uint64_t{0});
    for (std::uint32_t sym : bv) {
        auto it = match.find(sym);
        if (it == match.end()) continue;
        const auto& pm = it->second;
        std::uint64_t carry = 0;
        for (std::size_t w = 0; w < words; ++w) {
            const std::uint64_t u = v[w] & pm[w];
            const std::uint64_t sum1 = v[w] + u;
            const std::uint64_t c1 = sum1 < v[w] ? 1 : 0;
            const std::uint64_t sum = sum1 + carry;
            const std::uint64_t c2 = sum < sum1 ? 1 : 0;
            carry = c1 | c2;
            v[w] = sum | (v[w] & ~u);
        }
    }
    std::size_t zeros = 0;
    for (std::size_t w = 0; w < words; ++w) {
        std::uint64_t valid = (w + 1 < words || m % 64 == 0) ? ~std::uint64_t{0}
                                                            : ((std::uint64_t{1} << (m % 64)) - 1);
        zeros += static_cast<std::size_t>(std::popcount(~v[w] & valid));
    }
    return zeros;
}

PRF rouge_l(const TokenSequence& candidate, const TokenSequence& reference) {
    if (candidate.empty() || reference.empty()) return {};
    return make_prf(lcs_length(candidate, reference), candidate.size(), reference.size());
}

MetricRow compute_metric_row(const std::vector<TokenSequence>& candidates,
                             const std::vector<TokenSequence>& references, BleuMode mode) {
    check_corpus(candidates, references);
    MetricRow row;
    for (int n = 1; n <= 4; ++n) {
        row.bleu[static_cast<std::size_t>(n - 1)] = mode == BleuMode::Corpus
                                                        ? bleu(candidates, references, n)
                                                        : sentence_bleu_mean(candidates, references, n);
    }
    row.gleu = corpus_gleu(candidates, references);
    auto accumulate = [](PRF& acc, const PRF& x) {
        acc.precision += x.precision;
        acc.recall += x.recall;
        acc.f1 += x.f1;
    };
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        accumulate(row.rouge_1, rouge_n(candidates[i], references[i], 1));
        accumulate(row.rouge_2, rouge_n(candidates[i], references[i], 2));
        accumulate(row.rouge_l, rouge_l(candidates[i], references[i]));
    }
    const double n = static_cast<double>(candidates.size());
    for (PRF* p : {&row.rouge_1, &row.rouge_2, &row.rouge_l}) {
        p->precision /= n;
        p->recall /= n;
        p->f1 /= n;
    }
    return row;
}

}  // namespace distill::metrics
