#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace distill::metrics {

/// Tokens are never empty strings.
struct TokenSequence {
    std::vector<std::string> tokens;

    std::size_t size() const noexcept { return tokens.size(); }
    bool empty() const noexcept { return tokens.empty(); }
    bool operator==(const TokenSequence&) const = default;
};

/// Build from whitespace-separated tokens (test convenience).
TokenSequence from_words(std::string_view words);

/// CJK ideographs become single tokens; Latin/Greek/Cyrillic letter and digit runs become one
/// case-folded token; punctuation, symbols and whitespace are dropped.
TokenSequence tokenize(std::string_view text);

struct PRF {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Corpus BLEU: clipped counts pooled over the corpus, geometric mean of p_1..p_max_n, times
/// BP = min(1, exp(1 - r/c)). No smoothing: any zero pooled precision gives 0.
/// Throws LengthMismatch, EmptyCorpus, InvalidArgument (max_n outside 1..4).
double bleu(const std::vector<TokenSequence>& candidates,
            const std::vector<TokenSequence>& references, int max_n);

/// Mean of single-pair BLEU scores; the alternative to pooled counts.
double sentence_bleu_mean(const std::vector<TokenSequence>& candidates,
                          const std::vector<TokenSequence>& references, int max_n);

/// Sentence GLEU over pooled 1..4-grams: min(matches / candidate grams, matches / reference grams).
double gleu(const TokenSequence& candidate, const TokenSequence& reference);
double corpus_gleu(const std::vector<TokenSequence>& candidates,
                   const std::vector<TokenSequence>& references);

PRF rouge_n(const TokenSequence& candidate, const TokenSequence& reference, int n);

/// LCS-based ROUGE-L. LCS length is computed with a bit-parallel algorithm.
PRF rouge_l(const TokenSequence& candidate, const TokenSequence& reference);
std::size_t lcs_length(const TokenSequence& a, const TokenSequence& b);

enum class BleuMode { Corpus, SentenceMean };

struct MetricRow {
    std::array<double, 4> bleu{};  // BLEU-1..4
    double gleu = 0.0;
    PRF rouge_1;
    PRF rouge_2;
    PRF rouge_l;
};

/// BLEU per mode; GLEU and ROUGE are means over pairs (ROUGE components averaged separately).
MetricRow compute_metric_row(const std::vector<TokenSequence>& candidates,
                             const std::vector<TokenSequence>& references,
                             BleuMode mode = BleuMode::Corpus);

}  // namespace distill::metrics
