#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace distill::text {

/// Decodes UTF-8 into code points. Invalid bytes decode to U+FFFD one byte at a time.
std::u32string decode_utf8(std::string_view s);
std::string encode_utf8(std::u32string_view s);
void append_utf8(std::string& out, char32_t cp);

std::size_t codepoint_count(std::string_view s);

bool is_space(char32_t cp) noexcept;

std::string trim(std::string_view s);

/// Trim, then collapse every whitespace run (including newlines and U+3000) to one ASCII space.
std::string normalize_whitespace(std::string_view s);

/// The single definition of "length" used for answers, references and the length penalty:
/// code points of the whitespace-normalized text.
std::size_t char_length(std::string_view s);

std::vector<std::string> split_lines(std::string_view s);

std::string to_lower_ascii(std::string_view s);

bool starts_with_icase(std::string_view s, std::string_view prefix);

}  // namespace distill::text
