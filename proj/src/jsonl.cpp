#include "distill/jsonl.hpp"

#include <fstream>
#include <sstream>

#include "distill/error.hpp"

namespace distill {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Errc::IoError, "cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const fs::path& path, std::string_view content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(Errc::IoError, "cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) fail(Errc::IoError, "short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::vector<json> parse_jsonl(std::string_view content, std::string_view origin) {
    std::vector<json> rows;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start < content.size()) {
        std::size_t end = content.find('\n', start);
        if (end == std::string_view::npos) end = content.size();
        std::string_view line = content.substr(start, end - start);
        ++line_no;
        start = end + 1;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
        try {
            rows.push_back(json::parse(line));
        } catch (const json::parse_error& e) {
            fail(Errc::IoError, std::string(origin) + ":" + std::to_string(line_no) +
                                    ": invalid JSON: " + e.what());
        }
    }
    return rows;
}

std::vector<json> read_jsonl(const fs::path& path) {
    return parse_jsonl(read_file(path), path.string());
}

}  // namespace distill
