#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"

namespace rico {

using Json = nlohmann::json;

inline std::vector<Json> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw format_error(format_issue::malformed, "cannot open: " + path.string());
    std::vector<Json> rows;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            rows.push_back(Json::parse(line));
        } catch (const Json::parse_error& e) {
            throw format_error(format_issue::malformed, path.string() + ":" +
                                                            std::to_string(lineno) + ": " +
                                                            e.what());
        }
    }
    return rows;
}

inline void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw format_error(format_issue::malformed, "cannot open for writing: " + path.string());
    for (const auto& row : rows) out << row.dump() << '\n';
    if (!out) throw format_error(format_issue::malformed, "write failed: " + path.string());
}

} // namespace rico
