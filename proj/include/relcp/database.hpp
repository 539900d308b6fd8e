#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "relcp/schema.hpp"
#include "relcp/value.hpp"

namespace relcp {

struct Row {
    std::vector<Value> values;  // aligned with TableSchema.attributes
};

struct Database {
    DatabaseSchema schema;
    std::vector<std::vector<Row>> tables;  // aligned with schema.tables

    const std::vector<Row>& rows(const std::string& table_name) const {
        return tables[static_cast<size_t>(schema.table_index(table_name))];
    }
    size_t total_rows() const;
};

struct IntegrityReport {
    struct DuplicatePk {
        std::string table;
        std::string pk_value;
        int first_row;
        int second_row;
    };
    struct DanglingFk {
        std::string table;
        std::string column;
        int row;
        std::string value;
    };
    std::vector<DuplicatePk> duplicate_pks;
    std::vector<DanglingFk> dangling_fks;

    bool clean() const { return duplicate_pks.empty() && dangling_fks.empty(); }
    std::string describe() const;
};

// Load `<table>.csv` for every schema table from dir. Cells are parsed per
// semantic type; empty cells become Null. Throws ParseError with row/column
// coordinates on a malformed cell, IntegrityError if the loaded data violates
// PK uniqueness or FK containment.
Database load_database(const DatabaseSchema& schema, const std::string& dir);

// Write one CSV per table into dir (used by the generator and round-trips).
void write_database_csv(const Database& db, const std::string& dir);

IntegrityReport validate_integrity(const Database& db);

struct ColumnMarginal {
    std::string table;
    std::string attribute;
    std::vector<Value> observed_values;  // deduplicated, first-occurrence order
};

// Non-null observed values of a value column, deduplicated in first-occurrence
// order. Throws UnknownColumn / KeyColumnNotAllowed.
ColumnMarginal column_marginal(const Database& db, const std::string& table,
                               const std::string& attribute);

// Drop rows of timestamped tables newer than cutoff, then cascade: rows whose
// FK references a dropped row are dropped too, until the result is clean.
Database temporal_prune(const Database& db, int64_t cutoff);

// Parse a single cell per the column's semantic type. Empty text is Null.
// `where` names the cell in error messages.
Value parse_cell(const std::string& text, const Attribute& attr, const std::string& where);
std::string format_cell(const Value& v);

int64_t parse_timestamp(const std::string& text, const std::string& where);

}  // namespace relcp
