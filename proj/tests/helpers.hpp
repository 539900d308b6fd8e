#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "relcp/database.hpp"
#include "relcp/schema.hpp"

namespace relcp::testing {

// Scratch directory removed on scope exit.
struct TempDir {
    std::filesystem::path path;

    TempDir() {
        std::string tmpl =
            (std::filesystem::temp_directory_path() / "relcp_test_XXXXXX").string();
        if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
        path = tmpl;
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string str() const { return path.string(); }
};

inline void write_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    out << content;
}

inline Attribute attr(std::string name, SemanticType st, bool nullable = false,
                      std::string fk_target = "") {
    Attribute a;
    a.name = std::move(name);
    a.stype = st;
    a.nullable = nullable;
    a.fk_target = std::move(fk_target);
    return a;
}

// parent(pk, score) and child(pk, fk->parent, amount), childs FK nullable.
inline DatabaseSchema parent_child_schema() {
    DatabaseSchema s;
    TableSchema parent;
    parent.name = "parent";
    parent.attributes = {attr("pid", SemanticType::PrimaryKey),
                         attr("score", SemanticType::Numerical)};
    TableSchema child;
    child.name = "child";
    child.attributes = {attr("cid", SemanticType::PrimaryKey),
                        attr("pid", SemanticType::ForeignKey, true, "parent"),
                        attr("amount", SemanticType::Numerical)};
    s.tables = {parent, child};
    return s;
}

inline Row make_row(std::vector<Value> values) {
    Row r;
    r.values = std::move(values);
    return r;
}

// users/items/events star with events holding FKs to both and a timestamp.
// Deterministic contents; event i has time i * 10.
inline Database dense_db(int users = 150, int items = 150, int events = 3000) {
    DatabaseSchema s;
    TableSchema u;
    u.name = "users";
    u.attributes = {attr("uid", SemanticType::PrimaryKey),
                    attr("age", SemanticType::Numerical)};
    TableSchema it;
    it.name = "items";
    it.attributes = {attr("iid", SemanticType::PrimaryKey),
                     attr("price", SemanticType::Numerical)};
    TableSchema ev;
    ev.name = "events";
    ev.attributes = {attr("eid", SemanticType::PrimaryKey),
                     attr("uid", SemanticType::ForeignKey, false, "users"),
                     attr("iid", SemanticType::ForeignKey, false, "items"),
                     attr("amount", SemanticType::Numerical),
                     attr("at", SemanticType::Timestamp)};
    ev.time_attribute = "at";
    s.tables = {u, it, ev};

    Database db;
    db.schema = s;
    db.tables.resize(3);
    for (int i = 0; i < users; ++i)
        db.tables[0].push_back(
            make_row({Value::key("u" + std::to_string(i)), Value::number(20 + i % 50)}));
    for (int i = 0; i < items; ++i)
        db.tables[1].push_back(
            make_row({Value::key("i" + std::to_string(i)), Value::number(i * 0.25)}));
    uint64_t h = 0x12345;
    auto next = [&h](int n) {
        h = h * 6364136223846793005ULL + 1442695040888963407ULL;
        return static_cast<int>((h >> 33) % static_cast<uint64_t>(n));
    };
    for (int i = 0; i < events; ++i)
        db.tables[2].push_back(make_row({Value::key("e" + std::to_string(i)),
                                         Value::key("u" + std::to_string(next(users))),
                                         Value::key("i" + std::to_string(next(items))),
                                         Value::number(next(1000) * 0.1),
                                         Value::time(static_cast<int64_t>(i) * 10)}));
    return db;
}

inline bool same_rows(const Database& a, const Database& b) {
    if (a.tables.size() != b.tables.size()) return false;
    for (size_t t = 0; t < a.tables.size(); ++t) {
        if (a.tables[t].size() != b.tables[t].size()) return false;
        for (size_t r = 0; r < a.tables[t].size(); ++r)
            if (a.tables[t][r].values != b.tables[t][r].values) return false;
    }
    return true;
}

}  // namespace relcp::testing
