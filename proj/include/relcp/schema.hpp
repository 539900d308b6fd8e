#pragma once

#include <optional>
#include <string>
#include <vector>

#include "relcp/value.hpp"

namespace relcp {

struct Attribute {
    std::string name;
    SemanticType stype = SemanticType::Numerical;
    bool nullable = false;
    std::string fk_target;  // set iff stype == ForeignKey
};

struct TableSchema {
    std::string name;
    std::vector<Attribute> attributes;
    std::optional<std::string> time_attribute;

    int attribute_index(const std::string& attr_name) const;
    const Attribute& attribute(const std::string& attr_name) const;
    int primary_key_index() const;
    std::vector<int> foreign_key_indices() const;
    // Indices of non-key attributes, in schema order. These carry features.
    std::vector<int> value_attribute_indices() const;
};

struct DatabaseSchema {
    std::vector<TableSchema> tables;

    int table_index(const std::string& table_name) const;
    const TableSchema& table(const std::string& table_name) const;

    // Throws SchemaError on any structural violation: duplicate table or
    // attribute names, zero or multiple primary keys, unresolvable or
    // ill-typed foreign keys, non-timestamp time attribute.
    void validate() const;
};

// Parse a schema file (JSON, see README for the format) and validate it.
DatabaseSchema load_schema(const std::string& path);

DatabaseSchema parse_schema_json(const std::string& text, const std::string& origin);
std::string schema_to_json(const DatabaseSchema& schema);

}  // namespace relcp
