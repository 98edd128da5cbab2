#pragma once

// Deterministic artifact plumbing: fixed float formatting, RFC 4180 CSV
// reading and writing, and JSON report files. All writers emit identical
// bytes for identical inputs.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace lab {

// shortest round-trip decimal for a double
inline std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
}

inline std::string csv_quote(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

class CsvWriter {
public:
    explicit CsvWriter(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw std::runtime_error("CsvWriter: cannot open " + path);
    }
    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ',';
            out_ << csv_quote(cells[i]);
        }
        out_ << "\r\n";
    }

private:
    std::ofstream out_;
};

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw std::invalid_argument("csv column not found: " + name);
    }
};

// RFC 4180 reader; accepts LF or CRLF records, quoted fields may span lines
inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_csv: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CsvTable t;
    std::vector<std::string> record;
    std::string cell;
    bool quoted = false, any = false;
    auto end_cell = [&]() {
        record.push_back(cell);
        cell.clear();
    };
    auto end_record = [&]() {
        end_cell();
        if (t.header.empty() && !any) t.header = record;
        else t.rows.push_back(record);
        any = true;
        record.clear();
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    cell += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cell += c;
            }
        } else if (c == '"' && cell.empty()) {
            quoted = true;
        } else if (c == ',') {
            end_cell();
        } else if (c == '\r') {
            // consumed with the following newline
        } else if (c == '\n') {
            end_record();
        } else {
            cell += c;
        }
    }
    if (!cell.empty() || !record.empty()) end_record();
    if (t.header.empty()) throw std::runtime_error("read_csv: empty file " + path);
    return t;
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_json_file: cannot open " + path);
    out << j.dump(2) << '\n';
}

}  // namespace lab
