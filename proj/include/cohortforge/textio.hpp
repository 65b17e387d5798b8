#pragma once

#include <charconv>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cohortforge/error.hpp"

namespace cohortforge {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    for (char& c : out)
        if (c >= 'A' && c <= 'Z') c += 'a' - 'A';
    return out;
}

// Missing values in text tables: empty cell or literal NA/NaN, case-insensitive.
inline bool is_missing_token(std::string_view s) {
    s = trim(s);
    if (s.empty()) return true;
    std::string l = to_lower(s);
    return l == "na" || l == "nan";
}

inline std::optional<double> parse_double(std::string_view s) {
    s = trim(s);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

inline std::optional<long> parse_long(std::string_view s) {
    s = trim(s);
    long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

// Shortest representation that round-trips exactly.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

inline std::string format_fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return std::string(buf);
}

struct DelimitedTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(std::string_view name) const {
        for (size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        return -1;
    }
};

// Parses delimiter-separated text with a mandatory header row. Handles LF and
// CRLF endings and double-quoted fields with "" escapes. Every row must have
// the same cell count as the header.
inline DelimitedTable parse_delimited(std::string_view text, char delim,
                                      const std::string& what) {
    DelimitedTable table;
    size_t pos = 0;
    bool in_header = true;
    size_t line_no = 0;
    while (pos < text.size()) {
        std::vector<std::string> cells;
        std::string cell;
        bool quoted = false;
        bool line_done = false;
        ++line_no;
        while (pos < text.size() && !line_done) {
            char c = text[pos];
            if (quoted) {
                if (c == '"') {
                    if (pos + 1 < text.size() && text[pos + 1] == '"') {
                        cell += '"';
                        ++pos;
                    } else {
                        quoted = false;
                    }
                } else {
                    cell += c;
                }
                ++pos;
            } else if (c == '"' && cell.empty()) {
                quoted = true;
                ++pos;
            } else if (c == delim) {
                cells.push_back(std::move(cell));
                cell.clear();
                ++pos;
            } else if (c == '\n') {
                ++pos;
                line_done = true;
            } else if (c == '\r') {
                ++pos;  // swallowed; LF handled next
            } else {
                cell += c;
                ++pos;
            }
        }
        if (quoted) fail("MALFORMED_" + what, "unterminated quote at line " + std::to_string(line_no));
        cells.push_back(std::move(cell));
        if (in_header) {
            if (cells.size() == 1 && trim(cells[0]).empty())
                fail("MISSING_HEADER", what + " input has an empty header row");
            table.header = std::move(cells);
            in_header = false;
        } else {
            if (cells.size() == 1 && cells[0].empty()) continue;  // blank line
            if (cells.size() != table.header.size())
                fail("MALFORMED_" + what,
                     "line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                         " cells, header has " + std::to_string(table.header.size()));
            table.rows.push_back(std::move(cells));
        }
    }
    if (in_header) fail("MISSING_HEADER", what + " input is empty");
    return table;
}

// Quotes a cell only when it contains the delimiter, a quote, or a newline.
inline std::string csv_escape(std::string_view cell, char delim) {
    bool needs = false;
    for (char c : cell)
        if (c == delim || c == '"' || c == '\n' || c == '\r') needs = true;
    if (!needs) return std::string(cell);
    std::string out = "\"";
    for (char c : cell) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

}  // namespace cohortforge
