#include "relcp/schema.hpp"

#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"
#include "relcp/errors.hpp"

namespace relcp {

using nlohmann::json;

const char* semantic_type_name(SemanticType t) {
    switch (t) {
        case SemanticType::Numerical: return "numerical";
        case SemanticType::Categorical: return "categorical";
        case SemanticType::MultiCategorical: return "multi_categorical";
        case SemanticType::Text: return "text";
        case SemanticType::Timestamp: return "timestamp";
        case SemanticType::PrimaryKey: return "primary_key";
        case SemanticType::ForeignKey: return "foreign_key";
    }
    return "?";
}

SemanticType semantic_type_from_name(const std::string& name) {
    if (name == "numerical") return SemanticType::Numerical;
    if (name == "categorical") return SemanticType::Categorical;
    if (name == "multi_categorical") return SemanticType::MultiCategorical;
    if (name == "text") return SemanticType::Text;
    if (name == "timestamp") return SemanticType::Timestamp;
    if (name == "primary_key") return SemanticType::PrimaryKey;
    if (name == "foreign_key") return SemanticType::ForeignKey;
    throw ParseError("unknown semantic type '" + name + "'");
}

int TableSchema::attribute_index(const std::string& attr_name) const {
    for (size_t i = 0; i < attributes.size(); ++i)
        if (attributes[i].name == attr_name) return static_cast<int>(i);
    return -1;
}

const Attribute& TableSchema::attribute(const std::string& attr_name) const {
    const int i = attribute_index(attr_name);
    if (i < 0) throw UnknownColumn(name + " has no attribute '" + attr_name + "'");
    return attributes[static_cast<size_t>(i)];
}

int TableSchema::primary_key_index() const {
    for (size_t i = 0; i < attributes.size(); ++i)
        if (attributes[i].stype == SemanticType::PrimaryKey) return static_cast<int>(i);
    return -1;
}

std::vector<int> TableSchema::foreign_key_indices() const {
    std::vector<int> out;
    for (size_t i = 0; i < attributes.size(); ++i)
        if (attributes[i].stype == SemanticType::ForeignKey) out.push_back(static_cast<int>(i));
    return out;
}

std::vector<int> TableSchema::value_attribute_indices() const {
    std::vector<int> out;
    for (size_t i = 0; i < attributes.size(); ++i)
        if (!is_key_type(attributes[i].stype)) out.push_back(static_cast<int>(i));
    return out;
}

int DatabaseSchema::table_index(const std::string& table_name) const {
    for (size_t i = 0; i < tables.size(); ++i)
        if (tables[i].name == table_name) return static_cast<int>(i);
    return -1;
}

const TableSchema& DatabaseSchema::table(const std::string& table_name) const {
    const int i = table_index(table_name);
    if (i < 0) throw SchemaError("no table named '" + table_name + "'");
    return tables[static_cast<size_t>(i)];
}

void DatabaseSchema::validate() const {
    std::unordered_set<std::string> table_names;
    for (const auto& t : tables) {
        if (!table_names.insert(t.name).second)
            throw SchemaError("duplicate table name '" + t.name + "'");
    }
    for (const auto& t : tables) {
        std::unordered_set<std::string> attr_names;
        int pk_count = 0;
        for (const auto& a : t.attributes) {
            if (!attr_names.insert(a.name).second)
                throw SchemaError(t.name + ": duplicate attribute '" + a.name + "'");
            if (a.stype == SemanticType::PrimaryKey) {
                ++pk_count;
                if (a.nullable)
                    throw SchemaError(t.name + "." + a.name + ": primary key cannot be nullable");
            }
            if (a.stype == SemanticType::ForeignKey) {
                if (a.fk_target.empty())
                    throw SchemaError(t.name + "." + a.name + ": foreign key without target table");
                if (table_index(a.fk_target) < 0)
                    throw SchemaError(t.name + "." + a.name + ": foreign key targets missing table '" +
                                      a.fk_target + "'");
            }
        }
        if (pk_count == 0) throw SchemaError(t.name + ": no primary key attribute");
        if (pk_count > 1) throw SchemaError(t.name + ": multiple primary key attributes");
        if (t.time_attribute) {
            const int i = t.attribute_index(*t.time_attribute);
            if (i < 0)
                throw SchemaError(t.name + ": time attribute '" + *t.time_attribute + "' not found");
            if (t.attributes[static_cast<size_t>(i)].stype != SemanticType::Timestamp)
                throw SchemaError(t.name + ": time attribute '" + *t.time_attribute +
                                  "' is not a timestamp column");
        }
    }
}

namespace {

json require_field(const json& obj, const char* key, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key))
        throw ParseError(where + ": missing field '" + key + "'");
    return obj.at(key);
}

}  // namespace

DatabaseSchema parse_schema_json(const std::string& text, const std::string& origin) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(origin + ": " + e.what());
    }
    DatabaseSchema schema;
    const json tables = require_field(root, "tables", origin);
    if (!tables.is_array()) throw ParseError(origin + ": 'tables' must be an array");
    for (const auto& tj : tables) {
        TableSchema t;
        t.name = require_field(tj, "name", origin).get<std::string>();
        const std::string where = origin + ", table '" + t.name + "'";
        const json attrs = require_field(tj, "attributes", where);
        if (!attrs.is_array() || attrs.empty())
            throw ParseError(where + ": 'attributes' must be a non-empty array");
        for (const auto& aj : attrs) {
            Attribute a;
            a.name = require_field(aj, "name", where).get<std::string>();
            a.stype = semantic_type_from_name(require_field(aj, "stype", where).get<std::string>());
            a.nullable = aj.value("nullable", false);
            t.attributes.push_back(std::move(a));
        }
        // The table-level primary_key entry must agree with the attribute tags.
        const std::string pk = require_field(tj, "primary_key", where).get<std::string>();
        const int pk_idx = t.attribute_index(pk);
        if (pk_idx < 0 || t.attributes[static_cast<size_t>(pk_idx)].stype != SemanticType::PrimaryKey)
            throw SchemaError(where + ": primary_key '" + pk +
                              "' does not name a primary_key attribute");
        if (tj.contains("foreign_keys")) {
            for (const auto& fj : tj.at("foreign_keys")) {
                const std::string col = require_field(fj, "column", where).get<std::string>();
                const std::string target = require_field(fj, "target_table", where).get<std::string>();
                const int ci = t.attribute_index(col);
                if (ci < 0 || t.attributes[static_cast<size_t>(ci)].stype != SemanticType::ForeignKey)
                    throw SchemaError(where + ": foreign key entry '" + col +
                                      "' does not name a foreign_key attribute");
                auto& attr = t.attributes[static_cast<size_t>(ci)];
                if (!attr.fk_target.empty())
                    throw SchemaError(where + ": duplicate foreign key entry for '" + col + "'");
                attr.fk_target = target;
            }
        }
        for (const auto& a : t.attributes) {
            if (a.stype == SemanticType::ForeignKey && a.fk_target.empty())
                throw SchemaError(where + ": foreign_key attribute '" + a.name +
                                  "' has no foreign_keys entry");
        }
        if (tj.contains("time_attribute") && !tj.at("time_attribute").is_null())
            t.time_attribute = tj.at("time_attribute").get<std::string>();
        schema.tables.push_back(std::move(t));
    }
    schema.validate();
    return schema;
}

DatabaseSchema load_schema(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open schema file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_schema_json(buf.str(), path);
}

std::string schema_to_json(const DatabaseSchema& schema) {
    json root;
    root["tables"] = json::array();
    for (const auto& t : schema.tables) {
        json tj;
        tj["name"] = t.name;
        tj["attributes"] = json::array();
        json fks = json::array();
        std::string pk;
        for (const auto& a : t.attributes) {
            json aj;
            aj["name"] = a.name;
            aj["stype"] = semantic_type_name(a.stype);
            aj["nullable"] = a.nullable;
            tj["attributes"].push_back(aj);
            if (a.stype == SemanticType::PrimaryKey) pk = a.name;
            if (a.stype == SemanticType::ForeignKey)
                fks.push_back({{"column", a.name}, {"target_table", a.fk_target}});
        }
        tj["primary_key"] = pk;
        tj["foreign_keys"] = fks;
        tj["time_attribute"] = t.time_attribute ? json(*t.time_attribute) : json(nullptr);
        root["tables"].push_back(tj);
    }
    return root.dump(2);
}

}  // namespace relcp
