#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace distill {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string read_file(const std::filesystem::path& path);

/// Writes atomically (temp file + rename); parent directories are created.
void write_file(const std::filesystem::path& path, std::string_view content);

/// Parses one JSON object per non-blank line. Errors name the file and line.
std::vector<json> read_jsonl(const std::filesystem::path& path);
std::vector<json> parse_jsonl(std::string_view content, std::string_view origin = "<memory>");

template <typename Json>
std::string to_jsonl(const std::vector<Json>& rows) {
    std::string out;
    for (const auto& row : rows) {
        out += row.dump(-1, ' ', false, nlohmann::detail::error_handler_t::replace);
        out += '\n';
    }
    return out;
}

template <typename Json>
void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& rows) {
    write_file(path, to_jsonl(rows));
}

}  // namespace distill
