#include "relcp/database.hpp"

#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "relcp/csv.hpp"
#include "relcp/errors.hpp"

namespace relcp {

namespace {

bool parse_full_int(const std::string& s, int64_t& out) {
    if (s.empty()) return false;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [p, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && p == last;
}

bool parse_full_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [p, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && p == last;
}

int parse_fixed_digits(const std::string& s, size_t pos, size_t len, const std::string& where) {
    int v = 0;
    for (size_t i = pos; i < pos + len; ++i) {
        if (i >= s.size() || s[i] < '0' || s[i] > '9')
            throw ParseError(where + ": bad timestamp '" + s + "'");
        v = v * 10 + (s[i] - '0');
    }
    return v;
}

std::string format_double(double x) {
    std::array<char, 40> buf;
    auto [p, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x);
    return std::string(buf.data(), p);
}

std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ';';
        out += tokens[i];
    }
    return out;
}

// Stable textual key used to deduplicate Values exactly (Numbers bitwise).
std::string dedup_key(const Value& v) {
    switch (v.tag()) {
        case ValueTag::Null:
            return "n";
        case ValueTag::Number: {
            char buf[20];
            std::snprintf(buf, sizeof(buf), "d%016llx",
                          static_cast<unsigned long long>(std::bit_cast<uint64_t>(v.as_number())));
            return buf;
        }
        case ValueTag::Category:
            return "c" + v.as_category();
        case ValueTag::MultiCategory: {
            std::string out = "m";
            for (const auto& t : v.as_multi_category()) {
                out += t;
                out += '\x1f';
            }
            return out;
        }
        case ValueTag::Text:
            return "t" + v.as_text();
        case ValueTag::Time:
            return "s" + std::to_string(v.as_time());
        case ValueTag::Key:
            return "k" + v.as_key();
    }
    return "?";
}

}  // namespace

int64_t parse_timestamp(const std::string& text, const std::string& where) {
    int64_t epoch = 0;
    if (parse_full_int(text, epoch)) return epoch;
    // ISO-8601: YYYY-MM-DD, optionally followed by ('T' or ' ')HH:MM:SS and 'Z'.
    if (text.size() < 10 || text[4] != '-' || text[7] != '-')
        throw ParseError(where + ": bad timestamp '" + text + "'");
    const int y = parse_fixed_digits(text, 0, 4, where);
    const unsigned mo = static_cast<unsigned>(parse_fixed_digits(text, 5, 2, where));
    const unsigned d = static_cast<unsigned>(parse_fixed_digits(text, 8, 2, where));
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{mo},
                                          std::chrono::day{d}};
    if (!ymd.ok()) throw ParseError(where + ": impossible date in '" + text + "'");
    int64_t secs =
        static_cast<int64_t>(std::chrono::sys_days(ymd).time_since_epoch().count()) * 86400;
    size_t pos = 10;
    if (pos < text.size() && (text[pos] == 'T' || text[pos] == ' ')) {
        ++pos;
        const int hh = parse_fixed_digits(text, pos, 2, where);
        if (pos + 2 >= text.size() || text[pos + 2] != ':')
            throw ParseError(where + ": bad timestamp '" + text + "'");
        const int mi = parse_fixed_digits(text, pos + 3, 2, where);
        if (pos + 5 >= text.size() || text[pos + 5] != ':')
            throw ParseError(where + ": bad timestamp '" + text + "'");
        const int ss = parse_fixed_digits(text, pos + 6, 2, where);
        if (hh > 23 || mi > 59 || ss > 59)
            throw ParseError(where + ": impossible time of day in '" + text + "'");
        secs += hh * 3600 + mi * 60 + ss;
        pos += 8;
    }
    if (pos < text.size() && text[pos] == 'Z') ++pos;
    if (pos != text.size()) throw ParseError(where + ": bad timestamp '" + text + "'");
    return secs;
}

Value parse_cell(const std::string& text, const Attribute& attr, const std::string& where) {
    if (text.empty()) {
        if (attr.stype == SemanticType::PrimaryKey)
            throw ParseError(where + ": empty primary key");
        if (!attr.nullable)
            throw ParseError(where + ": empty cell in non-nullable column");
        return Value::null();
    }
    switch (attr.stype) {
        case SemanticType::Numerical: {
            double x = 0.0;
            if (!parse_full_double(text, x) || !std::isfinite(x))
                throw ParseError(where + ": bad number '" + text + "'");
            return Value::number(x);
        }
        case SemanticType::Categorical:
            return Value::category(text);
        case SemanticType::MultiCategorical: {
            std::vector<std::string> tokens;
            std::string cur;
            for (char c : text) {
                if (c == ';') {
                    if (!cur.empty()) tokens.push_back(std::move(cur));
                    cur.clear();
                } else {
                    cur += c;
                }
            }
            if (!cur.empty()) tokens.push_back(std::move(cur));
            return Value::multi_category(std::move(tokens));
        }
        case SemanticType::Text:
            return Value::text(text);
        case SemanticType::Timestamp:
            return Value::time(parse_timestamp(text, where));
        case SemanticType::PrimaryKey:
        case SemanticType::ForeignKey:
            return Value::key(text);
    }
    throw ParseError(where + ": unhandled column type");
}

std::string format_cell(const Value& v) {
    switch (v.tag()) {
        case ValueTag::Null:
            return "";
        case ValueTag::Number:
            return format_double(v.as_number());
        case ValueTag::Category:
            return v.as_category();
        case ValueTag::MultiCategory:
            return join_tokens(v.as_multi_category());
        case ValueTag::Text:
            return v.as_text();
        case ValueTag::Time: {
            const int64_t t = v.as_time();
            int64_t days = t / 86400;
            int64_t rem = t % 86400;
            if (rem < 0) {
                rem += 86400;
                --days;
            }
            const std::chrono::year_month_day ymd{
                std::chrono::sys_days{std::chrono::days{days}}};
            char buf[24];
            std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02d:%02d:%02d",
                          static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                          static_cast<unsigned>(ymd.day()), static_cast<int>(rem / 3600),
                          static_cast<int>((rem / 60) % 60), static_cast<int>(rem % 60));
            return buf;
        }
        case ValueTag::Key:
            return v.as_key();
    }
    return "";
}

size_t Database::total_rows() const {
    size_t n = 0;
    for (const auto& t : tables) n += t.size();
    return n;
}

Database load_database(const DatabaseSchema& schema, const std::string& dir) {
    schema.validate();
    Database db;
    db.schema = schema;
    db.tables.resize(schema.tables.size());
    for (size_t ti = 0; ti < schema.tables.size(); ++ti) {
        const TableSchema& ts = schema.tables[ti];
        const std::string path = dir + "/" + ts.name + ".csv";
        const auto records = read_csv(path);
        if (records.empty()) throw ParseError(path + ": missing header row");
        const auto& header = records[0];
        // Header may reorder columns but must match the schema exactly.
        std::vector<int> attr_of_col(header.size(), -1);
        std::vector<bool> seen(ts.attributes.size(), false);
        for (size_t c = 0; c < header.size(); ++c) {
            const int ai = ts.attribute_index(header[c]);
            if (ai < 0)
                throw UnknownColumn(path + ": column '" + header[c] + "' not in schema");
            if (seen[static_cast<size_t>(ai)])
                throw ParseError(path + ": duplicate column '" + header[c] + "'");
            seen[static_cast<size_t>(ai)] = true;
            attr_of_col[c] = ai;
        }
        for (size_t ai = 0; ai < ts.attributes.size(); ++ai)
            if (!seen[ai])
                throw ParseError(path + ": column '" + ts.attributes[ai].name + "' missing");
        auto& rows = db.tables[ti];
        rows.reserve(records.size() - 1);
        for (size_t r = 1; r < records.size(); ++r) {
            const auto& rec = records[r];
            if (rec.size() != header.size())
                throw ParseError(path + " row " + std::to_string(r + 1) + ": has " +
                                 std::to_string(rec.size()) + " fields, expected " +
                                 std::to_string(header.size()));
            Row row;
            row.values.resize(ts.attributes.size());
            for (size_t c = 0; c < rec.size(); ++c) {
                const auto ai = static_cast<size_t>(attr_of_col[c]);
                const Attribute& attr = ts.attributes[ai];
                const std::string where =
                    path + " row " + std::to_string(r + 1) + ", column " + attr.name;
                row.values[ai] = parse_cell(rec[c], attr, where);
            }
            rows.push_back(std::move(row));
        }
    }
    const IntegrityReport report = validate_integrity(db);
    if (!report.clean()) throw IntegrityError(dir + ": " + report.describe());
    return db;
}

void write_database_csv(const Database& db, const std::string& dir) {
    std::filesystem::create_directories(dir);
    for (size_t ti = 0; ti < db.schema.tables.size(); ++ti) {
        const TableSchema& ts = db.schema.tables[ti];
        std::vector<std::vector<std::string>> records;
        records.reserve(db.tables[ti].size() + 1);
        std::vector<std::string> header;
        for (const auto& a : ts.attributes) header.push_back(a.name);
        records.push_back(std::move(header));
        for (const auto& row : db.tables[ti]) {
            std::vector<std::string> rec;
            rec.reserve(row.values.size());
            for (const auto& v : row.values) rec.push_back(format_cell(v));
            records.push_back(std::move(rec));
        }
        write_csv(dir + "/" + ts.name + ".csv", records);
    }
}

IntegrityReport validate_integrity(const Database& db) {
    IntegrityReport report;
    // PK value -> row index, per table, reused for FK containment below.
    std::vector<std::unordered_map<std::string, int>> pk_maps(db.schema.tables.size());
    for (size_t ti = 0; ti < db.schema.tables.size(); ++ti) {
        const TableSchema& ts = db.schema.tables[ti];
        const int pk = ts.primary_key_index();
        auto& map = pk_maps[ti];
        const auto& rows = db.tables[ti];
        map.reserve(rows.size() * 2);
        for (size_t r = 0; r < rows.size(); ++r) {
            const std::string& key = rows[r].values[static_cast<size_t>(pk)].as_key();
            auto [it, inserted] = map.emplace(key, static_cast<int>(r));
            if (!inserted)
                report.duplicate_pks.push_back(
                    {ts.name, key, it->second, static_cast<int>(r)});
        }
    }
    for (size_t ti = 0; ti < db.schema.tables.size(); ++ti) {
        const TableSchema& ts = db.schema.tables[ti];
        for (int fki : ts.foreign_key_indices()) {
            const Attribute& attr = ts.attributes[static_cast<size_t>(fki)];
            const int target = db.schema.table_index(attr.fk_target);
            const auto& target_pks = pk_maps[static_cast<size_t>(target)];
            const auto& rows = db.tables[ti];
            for (size_t r = 0; r < rows.size(); ++r) {
                const Value& v = rows[r].values[static_cast<size_t>(fki)];
                if (v.is_null()) continue;
                if (!target_pks.count(v.as_key()))
                    report.dangling_fks.push_back(
                        {ts.name, attr.name, static_cast<int>(r), v.as_key()});
            }
        }
    }
    return report;
}

std::string IntegrityReport::describe() const {
    std::ostringstream out;
    out << duplicate_pks.size() << " duplicate primary key(s), " << dangling_fks.size()
        << " dangling foreign key(s)";
    size_t shown = 0;
    for (const auto& d : duplicate_pks) {
        if (shown++ >= 5) break;
        out << "\n  " << d.table << " pk '" << d.pk_value << "' at rows " << d.first_row << " and "
            << d.second_row;
    }
    for (const auto& d : dangling_fks) {
        if (shown++ >= 10) break;
        out << "\n  " << d.table << "." << d.column << " row " << d.row << " -> missing '"
            << d.value << "'";
    }
    return out.str();
}

ColumnMarginal column_marginal(const Database& db, const std::string& table,
                               const std::string& attribute) {
    const int ti = db.schema.table_index(table);
    if (ti < 0) throw UnknownColumn("no table named '" + table + "'");
    const TableSchema& ts = db.schema.tables[static_cast<size_t>(ti)];
    const int ai = ts.attribute_index(attribute);
    if (ai < 0) throw UnknownColumn(table + " has no column '" + attribute + "'");
    const Attribute& attr = ts.attributes[static_cast<size_t>(ai)];
    if (is_key_type(attr.stype))
        throw KeyColumnNotAllowed(table + "." + attribute + " is a key column");
    ColumnMarginal m;
    m.table = table;
    m.attribute = attribute;
    std::unordered_set<std::string> seen;
    for (const auto& row : db.tables[static_cast<size_t>(ti)]) {
        const Value& v = row.values[static_cast<size_t>(ai)];
        if (v.is_null()) continue;
        if (seen.insert(dedup_key(v)).second) m.observed_values.push_back(v);
    }
    return m;
}

Database temporal_prune(const Database& db, int64_t cutoff) {
    const size_t n_tables = db.schema.tables.size();
    std::vector<std::vector<bool>> keep(n_tables);
    for (size_t ti = 0; ti < n_tables; ++ti) {
        const TableSchema& ts = db.schema.tables[ti];
        keep[ti].assign(db.tables[ti].size(), true);
        if (!ts.time_attribute) continue;
        const auto ai = static_cast<size_t>(ts.attribute_index(*ts.time_attribute));
        for (size_t r = 0; r < db.tables[ti].size(); ++r) {
            const Value& v = db.tables[ti][r].values[ai];
            if (!v.is_null() && v.as_time() > cutoff) keep[ti][r] = false;
        }
    }
    // Cascade: a row whose FK points at a dropped row is dropped too.
    std::vector<int> pk_idx(n_tables);
    for (size_t ti = 0; ti < n_tables; ++ti) pk_idx[ti] = db.schema.tables[ti].primary_key_index();
    bool changed = true;
    while (changed) {
        changed = false;
        std::vector<std::unordered_set<std::string>> surviving(n_tables);
        for (size_t ti = 0; ti < n_tables; ++ti)
            for (size_t r = 0; r < db.tables[ti].size(); ++r)
                if (keep[ti][r])
                    surviving[ti].insert(
                        db.tables[ti][r].values[static_cast<size_t>(pk_idx[ti])].as_key());
        for (size_t ti = 0; ti < n_tables; ++ti) {
            const TableSchema& ts = db.schema.tables[ti];
            for (int fki : ts.foreign_key_indices()) {
                const auto target =
                    static_cast<size_t>(db.schema.table_index(ts.attributes[static_cast<size_t>(fki)].fk_target));
                for (size_t r = 0; r < db.tables[ti].size(); ++r) {
                    if (!keep[ti][r]) continue;
                    const Value& v = db.tables[ti][r].values[static_cast<size_t>(fki)];
                    if (!v.is_null() && !surviving[target].count(v.as_key())) {
                        keep[ti][r] = false;
                        changed = true;
                    }
                }
            }
        }
    }
    Database out;
    out.schema = db.schema;
    out.tables.resize(n_tables);
    for (size_t ti = 0; ti < n_tables; ++ti)
        for (size_t r = 0; r < db.tables[ti].size(); ++r)
            if (keep[ti][r]) out.tables[ti].push_back(db.tables[ti][r]);
    const IntegrityReport report = validate_integrity(out);
    if (!report.clean()) throw IntegrityError("pruning left the database dirty: " + report.describe());
    return out;
}

}  // namespace relcp
