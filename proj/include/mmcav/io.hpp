#pragma once

// Small numeric CSV and JSON file helpers shared by the modules and the CLI.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmcav/errors.hpp"

namespace mmcav::io {

/// Round-trippable, locale-independent number text.
inline std::string num(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw UsageError("missing CSV column '" + name + "'");
    }

    std::vector<double> numbers(const std::string& name) const {
        const std::size_t c = column(name);
        std::vector<double> out;
        out.reserve(rows.size());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const std::string& cell = rows[r][c];
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(cell, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used == 0 || used != cell.size())
                throw UsageError("row " + std::to_string(r + 2) + ": '" + cell + "' is not a number", name);
            out.push_back(v);
        }
        return out;
    }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open " + path.string());
    CsvTable t;
    std::string line;
    while (std::getline(in, line) && (line.empty() || line[0] == '#')) {
    }
    if (line.empty()) throw UsageError(path.string() + ": empty CSV file");
    t.header = split_csv_line(line);
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r" || line[0] == '#') continue;
        auto cells = split_csv_line(line);
        if (cells.size() != t.header.size())
            throw UsageError(path.string() + ": row has " + std::to_string(cells.size()) + " cells, header has " +
                             std::to_string(t.header.size()));
        t.rows.push_back(std::move(cells));
    }
    return t;
}

/// Builds CSV text with fixed formatting so that output is byte-stable.
class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header) : columns_(header.size()) { row_strings(header); }

    CsvWriter& row(const std::vector<double>& values) {
        std::vector<std::string> cells;
        cells.reserve(values.size());
        for (double v : values) cells.push_back(num(v));
        return row_strings(cells);
    }

    CsvWriter& row_strings(const std::vector<std::string>& cells) {
        if (cells.size() != columns_) throw DomainError("CsvWriter: row width does not match header");
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) text_ += ',';
            text_ += cells[i];
        }
        text_ += '\n';
        return *this;
    }

    const std::string& str() const { return text_; }

private:
    std::size_t columns_;
    std::string text_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw Error("write failed: " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot open " + path.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
    const std::string text = read_text(path);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw UsageError(path.string() + ": invalid JSON (" + e.what() + ")");
    }
}

}  // namespace mmcav::io
