#include "distill/corpus_ingest.hpp"

#include <regex>
#include <unordered_set>

#include "distill/digest.hpp"
#include "distill/error.hpp"
#include "distill/text.hpp"

namespace distill::ingest {

namespace {

struct Block {
    std::u32string text;
    std::optional<std::string> chapter;
};

bool is_blank(std::string_view line) {
    return text::normalize_whitespace(line).empty();
}

bool is_ascii_terminator(char32_t c) { return c < 0x80; }

class Splitter {
public:
    explicit Splitter(const SplitPolicy& policy)
        : policy_(policy), terminators_(text::decode_utf8(policy.sentence_terminators)) {}

    // Position just past the cut, or 0 when no terminator fits.
    std::size_t last_terminator_cut(const std::u32string& s, std::size_t limit) const {
        std::size_t best = 0;
        const std::size_t end = std::min(limit, s.size());
        for (std::size_t i = 0; i < end; ++i) {
            if (terminators_.find(s[i]) == std::u32string::npos) continue;
            bool boundary = !is_ascii_terminator(s[i]) || i + 1 == s.size() ||
                            text::is_space(s[i + 1]);
            if (boundary) best = i + 1;
        }
        return best;
    }

    std::size_t cut_point(const std::u32string& s) const {
        std::size_t cut = last_terminator_cut(s, policy_.max_chars);
        if (cut > 0) return cut;
        // No sentence boundary fits: fall back to the last whitespace, then a hard cut.
        for (std::size_t i = std::min(policy_.max_chars, s.size()); i > 1; --i) {
            if (text::is_space(s[i - 1])) return i - 1;
        }
        return policy_.max_chars;
    }

private:
    const SplitPolicy& policy_;
    std::u32string terminators_;
};

std::u32string strip_leading_space(std::u32string s) {
    std::size_t b = 0;
    while (b < s.size() && text::is_space(s[b])) ++b;
    return s.substr(b);
}

std::u32string strip_trailing_space(std::u32string s) {
    while (!s.empty() && text::is_space(s.back())) s.pop_back();
    return s;
}

}  // namespace

void SplitPolicy::validate() const {
    if (min_chars == 0 || max_chars == 0) fail(Errc::InvalidArgument, "split sizes must be positive");
    if (min_chars >= max_chars) fail(Errc::InvalidArgument, "min_chars must be < max_chars");
    if (sentence_terminators.empty()) fail(Errc::InvalidArgument, "no sentence terminators");
}

std::string paragraph_id(const std::string& source_doc, std::size_t ordinal,
                         const std::string& text) {
    std::u32string cps = text::decode_utf8(text);
    std::string prefix = text::encode_utf8(std::u32string_view(cps).substr(0, 64));
    return "para-" + short_digest(source_doc + '\x1f' + std::to_string(ordinal) + '\x1f' + prefix);
}

std::vector<TextbookParagraph> split_paragraphs(const std::string& document_text,
                                                const SplitPolicy& policy,
                                                const std::string& source_doc) {
    policy.validate();
    if (is_blank(document_text)) fail(Errc::EmptyDocument, "document '" + source_doc + "' is empty");

    std::optional<std::regex> heading;
    if (!policy.chapter_pattern.empty()) heading.emplace(policy.chapter_pattern);

    std::vector<Block> blocks;
    std::optional<std::string> chapter;
    std::string current;
    std::optional<std::string> current_chapter;
    auto flush = [&] {
        if (!current.empty()) blocks.push_back({text::decode_utf8(current), current_chapter});
        current.clear();
    };
    for (const std::string& line : text::split_lines(document_text)) {
        if (is_blank(line)) {
            flush();
            continue;
        }
        std::string trimmed = text::trim(line);
        if (heading && std::regex_match(trimmed, *heading)) {
            flush();
            chapter = trimmed;
            continue;
        }
        if (current.empty()) current_chapter = chapter;
        else current += '\n';
        current += trimmed;
    }
    flush();

    const Splitter splitter(policy);
    const std::u32string sep = text::decode_utf8(kMergeSeparator);
    std::vector<Block> out;
    Block pending;
    for (Block& b : blocks) {
        if (pending.text.empty()) {
            pending = std::move(b);
        } else {
            pending.text += sep;
            pending.text += b.text;
        }
        if (pending.text.size() < policy.min_chars) continue;
        while (pending.text.size() > policy.max_chars) {
            std::size_t cut = splitter.cut_point(pending.text);
            out.push_back({strip_trailing_space(pending.text.substr(0, cut)), pending.chapter});
            pending.text = strip_leading_space(pending.text.substr(cut));
        }
        if (pending.text.size() >= policy.min_chars) {
            out.push_back(std::move(pending));
            pending = Block{};
        }
    }
    if (!pending.text.empty()) {
        if (!out.empty() &&
            out.back().text.size() + sep.size() + pending.text.size() <= policy.max_chars) {
            out.back().text += sep;
            out.back().text += pending.text;
        } else {
            out.push_back(std::move(pending));
        }
    }

    std::vector<TextbookParagraph> paragraphs;
    paragraphs.reserve(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        TextbookParagraph p;
        p.source_doc = source_doc;
        p.chapter = out[i].chapter;
        p.ordinal = i;
        p.text = text::encode_utf8(out[i].text);
        p.char_count = out[i].text.size();
        p.id = paragraph_id(source_doc, i, p.text);
        paragraphs.push_back(std::move(p));
    }
    return paragraphs;
}

std::vector<SeedQuestion> parse_seed_pool(std::string_view content, std::string_view origin) {
    std::vector<SeedQuestion> pool;
    std::unordered_set<std::string> ids;
    for (const json& row : parse_jsonl(content, origin)) {
        SeedQuestion q;
        if (row.is_string()) {
            q.text = row.get<std::string>();
        } else {
            q.text = row.value("text", std::string{});
            q.id = row.value("id", std::string{});
        }
        q.text = text::trim(q.text);
        if (q.text.empty()) {
            fail(Errc::InvalidArgument, std::string(origin) + ": seed question text is empty");
        }
        if (q.id.empty()) q.id = "seed-" + short_digest(q.text, 10);
        if (!ids.insert(q.id).second) {
            fail(Errc::DuplicateId, std::string(origin) + ": duplicate seed id '" + q.id + "'");
        }
        pool.push_back(std::move(q));
    }
    if (pool.size() < kMinSeedPool) {
        fail(Errc::PoolTooSmall, std::string(origin) + ": seed pool has " +
                                     std::to_string(pool.size()) + " entries; at least " +
                                     std::to_string(kMinSeedPool) + " are required");
    }
    return pool;
}

std::vector<SeedQuestion> load_seed_pool(const std::filesystem::path& path) {
    return parse_seed_pool(read_file(path), path.string());
}

ordered_json to_json(const TextbookParagraph& p) {
    ordered_json j;
    j["id"] = p.id;
    j["source_doc"] = p.source_doc;
    j["chapter"] = p.chapter ? ordered_json(*p.chapter) : ordered_json(nullptr);
    j["ordinal"] = p.ordinal;
    j["text"] = p.text;
    j["char_count"] = p.char_count;
    return j;
}

TextbookParagraph paragraph_from_json(const json& j) {
    TextbookParagraph p;
    p.id = j.at("id").get<std::string>();
    p.source_doc = j.value("source_doc", std::string{});
    if (j.contains("chapter") && !j["chapter"].is_null()) p.chapter = j["chapter"].get<std::string>();
    p.ordinal = j.value("ordinal", std::size_t{0});
    p.text = j.at("text").get<std::string>();
    p.char_count = text::codepoint_count(p.text);
    return p;
}

ordered_json to_json(const SeedQuestion& q) {
    ordered_json j;
    j["id"] = q.id;
    j["text"] = q.text;
    return j;
}

SeedQuestion seed_from_json(const json& j) {
    return {j.at("id").get<std::string>(), j.at("text").get<std::string>()};
}

std::vector<TextbookParagraph> read_paragraphs(const std::filesystem::path& path) {
    std::vector<TextbookParagraph> out;
    for (const json& row : read_jsonl(path)) out.push_back(paragraph_from_json(row));
    return out;
}

}  // namespace distill::ingest
