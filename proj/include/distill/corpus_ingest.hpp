#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "distill/jsonl.hpp"

namespace distill::ingest {

struct TextbookParagraph {
    std::string id;
    std::string source_doc;
    std::optional<std::string> chapter;
    std::size_t ordinal = 0;
    std::string text;
    std::size_t char_count = 0;

    bool operator==(const TextbookParagraph&) const = default;
};

struct SeedQuestion {
    std::string id;
    std::string text;

    bool operator==(const SeedQuestion&) const = default;
};

struct SplitPolicy {
    std::size_t min_chars = 200;
    std::size_t max_chars = 1200;
    /// Terminators as UTF-8; ASCII ones only count when followed by whitespace or end of text.
    std::string sentence_terminators = ".!?;\xE3\x80\x82\xEF\xBC\x81\xEF\xBC\x9F\xEF\xBC\x9B";
    /// ECMAScript regex matched against whole trimmed lines; empty disables chapter parsing.
    std::string chapter_pattern = R"(^(Chapter\s+\d+.*|CHAPTER\s+\d+.*|第[0-9一二三四五六七八九十百]+章.*)$)";

    void validate() const;
};

/// Separator inserted between blocks merged into one paragraph.
inline constexpr std::string_view kMergeSeparator = "\n\n";

/// Blank-line blocks, short blocks merged forward, long blocks cut at the last sentence
/// terminator before max_chars. Throws EmptyDocument on blank input.
std::vector<TextbookParagraph> split_paragraphs(const std::string& document_text,
                                                const SplitPolicy& policy,
                                                const std::string& source_doc = "textbook");

std::string paragraph_id(const std::string& source_doc, std::size_t ordinal,
                         const std::string& text);

inline constexpr std::size_t kMinSeedPool = 9;

/// One JSON object per line with "text" and optional "id". Throws PoolTooSmall, DuplicateId.
std::vector<SeedQuestion> load_seed_pool(const std::filesystem::path& path);
std::vector<SeedQuestion> parse_seed_pool(std::string_view content,
                                          std::string_view origin = "<memory>");

ordered_json to_json(const TextbookParagraph& p);
TextbookParagraph paragraph_from_json(const json& j);
ordered_json to_json(const SeedQuestion& q);
SeedQuestion seed_from_json(const json& j);

std::vector<TextbookParagraph> read_paragraphs(const std::filesystem::path& path);

}  // namespace distill::ingest
