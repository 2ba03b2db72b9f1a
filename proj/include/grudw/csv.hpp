#pragma once

// Minimal reader for the unquoted comma-separated files this project writes.
// Columns are located by header name; errors carry file and line number.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "error.hpp"

namespace grudw {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(std::move(cur));
    return out;
}

class CsvReader {
public:
    explicit CsvReader(const std::filesystem::path& path) : path_(path), in_(path) {
        if (!in_) throw DataError("cannot open " + path.string());
        std::string header;
        if (!std::getline(in_, header)) throw DataError(path.string() + ": empty file, expected a header");
        line_no_ = 1;
        header_ = split_csv_line(header);
    }

    std::size_t require(const std::string& column) const {
        if (auto c = optional(column)) return *c;
        throw DataError(fmt::format("{}: missing required column '{}'", path_.string(), column));
    }

    std::optional<std::size_t> optional(const std::string& column) const {
        for (std::size_t i = 0; i < header_.size(); ++i) {
            if (header_[i] == column) return i;
        }
        return std::nullopt;
    }

    std::optional<std::vector<std::string>> next() {
        std::string line;
        while (std::getline(in_, line)) {
            ++line_no_;
            if (line.empty() || line == "\r") continue;
            auto fields = split_csv_line(line);
            if (fields.size() != header_.size()) {
                fail(fmt::format("expected {} fields, found {}", header_.size(), fields.size()));
            }
            return fields;
        }
        return std::nullopt;
    }

    const std::string& field(const std::vector<std::string>& row, std::size_t col) const { return row[col]; }

    [[noreturn]] void fail(const std::string& what) const {
        throw DataError(fmt::format("{}:{}: {}", path_.string(), line_no_, what));
    }

    int parse_int(const std::string& s, const std::string& column) const {
        int v = 0;
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || ptr != s.data() + s.size()) fail("column '" + column + "': not an integer: '" + s + "'");
        return v;
    }

    double parse_double(const std::string& s, const std::string& column) const {
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || ptr != s.data() + s.size()) fail("column '" + column + "': not a number: '" + s + "'");
        return v;
    }

    std::size_t line() const noexcept { return line_no_; }

private:
    std::filesystem::path path_;
    std::ifstream in_;
    std::vector<std::string> header_;
    std::size_t line_no_ = 0;
};

}  // namespace grudw
