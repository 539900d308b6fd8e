#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "relcp/database.hpp"

namespace relcp {

enum class EdgeDir { Forward, Reverse };

// One edge type per FK column and direction. Forward runs FK-holder row ->
// referenced PK-holder row; the Reverse twin is its exact transpose.
struct EdgeTypeInfo {
    std::string name;
    int source_type = 0;
    int target_type = 0;
    std::string fk_column;
    EdgeDir dir = EdgeDir::Forward;
    int twin = 0;  // index of the opposite-direction edge type
};

struct NodeId {
    int type = 0;
    int index = 0;

    bool operator==(const NodeId& o) const = default;
};

// Rows become nodes (one node type per table), non-null FK cells become
// typed directed edges in both directions. Immutable once built.
class HeteroGraph {
   public:
    std::shared_ptr<const Database> db;

    std::vector<std::string> node_type_names;  // = schema table order
    std::vector<int> node_counts;
    std::vector<EdgeTypeInfo> edge_types;
    // edges[et] lists (source index, target index) pairs, source-major order.
    std::vector<std::vector<std::pair<int, int>>> edges;
    // times[type] present iff the table has a time attribute; inner optional
    // per node because timestamp cells may be null.
    std::vector<std::optional<std::vector<std::optional<int64_t>>>> times;

    int node_type_index(const std::string& table_name) const;
    int edge_type_index(const std::string& name) const;

    int total_nodes() const;
    size_t total_edges() const;

    std::optional<int64_t> node_time(NodeId v) const;

    // Incoming adjacency: all u with an edge (u, v) of type et, ascending.
    std::span<const int> in_neighbors(int et, NodeId v) const;

    const Row& node_row(NodeId v) const;

    void check_node(NodeId v) const;

    std::string dump() const;

    // CSR over edges[et] keyed by target index; built once, read-only after.
    std::vector<std::vector<int>> in_offsets;
    std::vector<std::vector<int>> in_sources;
};

// Node and edge types derivable from the schema alone, in schema order.
struct SchemaGraph {
    std::vector<std::string> node_types;
    std::vector<EdgeTypeInfo> edge_types;
};

SchemaGraph schema_graph(const DatabaseSchema& schema);

HeteroGraph build_graph(std::shared_ptr<const Database> db);

}  // namespace relcp
