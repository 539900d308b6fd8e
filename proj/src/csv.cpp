#include "relcp/csv.hpp"

#include <fstream>
#include <sstream>

#include "relcp/errors.hpp"

namespace relcp {

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();

    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool quoted = false;
    bool field_started = false;

    size_t i = 0;
    const size_t n = text.size();
    auto end_field = [&]() {
        record.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_record = [&]() {
        end_field();
        records.push_back(std::move(record));
        record.clear();
    };

    while (i < n) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < n && text[i + 1] == '"') {
                    field.push_back('"');
                    i += 2;
                } else {
                    quoted = false;
                    ++i;
                }
            } else {
                field.push_back(c);
                ++i;
            }
            continue;
        }
        switch (c) {
            case '"':
                if (!field_started && field.empty()) {
                    quoted = true;
                    field_started = true;
                } else {
                    field.push_back(c);
                }
                ++i;
                break;
            case ',':
                end_field();
                ++i;
                break;
            case '\r':
                if (i + 1 < n && text[i + 1] == '\n') ++i;
                end_record();
                ++i;
                break;
            case '\n':
                end_record();
                ++i;
                break;
            default:
                field.push_back(c);
                field_started = true;
                ++i;
        }
    }
    if (quoted) throw ParseError(path + ": unterminated quoted field");
    if (field_started || !field.empty() || !record.empty()) end_record();
    return records;
}

std::string csv_escape(const std::string& field) {
    const bool needs_quote =
        field.find_first_of(",\"\r\n") != std::string::npos;
    if (!needs_quote) return field;
    std::string out = "\"";
    for (const char c : field) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out.push_back('"');
    return out;
}

void write_csv(const std::string& path, const std::vector<std::vector<std::string>>& records) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    for (const auto& record : records) {
        for (size_t i = 0; i < record.size(); ++i) {
            if (i) out << ',';
            out << csv_escape(record[i]);
        }
        out << '\n';
    }
    if (!out) throw IoError("write failed for " + path);
}

}  // namespace relcp
