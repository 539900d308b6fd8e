#include "relcp/graph.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>

#include "relcp/errors.hpp"

namespace relcp {

int HeteroGraph::node_type_index(const std::string& table_name) const {
    for (size_t i = 0; i < node_type_names.size(); ++i)
        if (node_type_names[i] == table_name) return static_cast<int>(i);
    return -1;
}

int HeteroGraph::edge_type_index(const std::string& name) const {
    for (size_t i = 0; i < edge_types.size(); ++i)
        if (edge_types[i].name == name) return static_cast<int>(i);
    return -1;
}

int HeteroGraph::total_nodes() const {
    int n = 0;
    for (int c : node_counts) n += c;
    return n;
}

size_t HeteroGraph::total_edges() const {
    size_t n = 0;
    for (const auto& e : edges) n += e.size();
    return n;
}

void HeteroGraph::check_node(NodeId v) const {
    if (v.type < 0 || v.type >= static_cast<int>(node_counts.size()) || v.index < 0 ||
        v.index >= node_counts[static_cast<size_t>(v.type)])
        throw InvalidNode("node (" + std::to_string(v.type) + ", " + std::to_string(v.index) +
                          ") out of range");
}

std::optional<int64_t> HeteroGraph::node_time(NodeId v) const {
    check_node(v);
    const auto& col = times[static_cast<size_t>(v.type)];
    if (!col) return std::nullopt;
    return (*col)[static_cast<size_t>(v.index)];
}

std::span<const int> HeteroGraph::in_neighbors(int et, NodeId v) const {
    check_node(v);
    if (et < 0 || et >= static_cast<int>(edge_types.size()))
        throw TypeMismatch("edge type index out of range");
    if (edge_types[static_cast<size_t>(et)].target_type != v.type)
        throw TypeMismatch("node type does not match edge target type");
    const auto& offsets = in_offsets[static_cast<size_t>(et)];
    const auto& sources = in_sources[static_cast<size_t>(et)];
    const auto lo = static_cast<size_t>(offsets[static_cast<size_t>(v.index)]);
    const auto hi = static_cast<size_t>(offsets[static_cast<size_t>(v.index) + 1]);
    return {sources.data() + lo, hi - lo};
}

const Row& HeteroGraph::node_row(NodeId v) const {
    check_node(v);
    return db->tables[static_cast<size_t>(v.type)][static_cast<size_t>(v.index)];
}

SchemaGraph schema_graph(const DatabaseSchema& schema) {
    SchemaGraph sg;
    for (const auto& t : schema.tables) sg.node_types.push_back(t.name);
    for (size_t ti = 0; ti < schema.tables.size(); ++ti) {
        const TableSchema& ts = schema.tables[ti];
        for (int fki : ts.foreign_key_indices()) {
            const Attribute& attr = ts.attributes[static_cast<size_t>(fki)];
            const int target = schema.table_index(attr.fk_target);
            EdgeTypeInfo fwd;
            fwd.name = ts.name + "." + attr.name + "->" + attr.fk_target;
            fwd.source_type = static_cast<int>(ti);
            fwd.target_type = target;
            fwd.fk_column = attr.name;
            fwd.dir = EdgeDir::Forward;
            EdgeTypeInfo rev;
            rev.name = attr.fk_target + "<-" + ts.name + "." + attr.name;
            rev.source_type = target;
            rev.target_type = static_cast<int>(ti);
            rev.fk_column = attr.name;
            rev.dir = EdgeDir::Reverse;
            const int fwd_idx = static_cast<int>(sg.edge_types.size());
            fwd.twin = fwd_idx + 1;
            rev.twin = fwd_idx;
            sg.edge_types.push_back(std::move(fwd));
            sg.edge_types.push_back(std::move(rev));
        }
    }
    return sg;
}

HeteroGraph build_graph(std::shared_ptr<const Database> db) {
    const IntegrityReport report = validate_integrity(*db);
    if (!report.clean()) throw IntegrityError("graph build: " + report.describe());

    HeteroGraph g;
    g.db = db;
    const DatabaseSchema& schema = db->schema;
    SchemaGraph sg = schema_graph(schema);
    g.node_type_names = std::move(sg.node_types);
    g.edge_types = std::move(sg.edge_types);
    for (const auto& rows : db->tables) g.node_counts.push_back(static_cast<int>(rows.size()));

    // PK value -> row index per table, for FK resolution.
    std::vector<std::unordered_map<std::string, int>> pk_maps(schema.tables.size());
    for (size_t ti = 0; ti < schema.tables.size(); ++ti) {
        const auto pk = static_cast<size_t>(schema.tables[ti].primary_key_index());
        for (size_t r = 0; r < db->tables[ti].size(); ++r)
            pk_maps[ti].emplace(db->tables[ti][r].values[pk].as_key(), static_cast<int>(r));
    }

    g.edges.resize(g.edge_types.size());
    for (size_t et = 0; et < g.edge_types.size(); ++et) {
        const EdgeTypeInfo& info = g.edge_types[et];
        if (info.dir != EdgeDir::Forward) continue;
        const auto src_t = static_cast<size_t>(info.source_type);
        const TableSchema& ts = schema.tables[src_t];
        const auto fki = static_cast<size_t>(ts.attribute_index(info.fk_column));
        auto& fwd = g.edges[et];
        auto& rev = g.edges[static_cast<size_t>(info.twin)];
        for (size_t r = 0; r < db->tables[src_t].size(); ++r) {
            const Value& v = db->tables[src_t][r].values[fki];
            if (v.is_null()) continue;
            const int target_row = pk_maps[static_cast<size_t>(info.target_type)].at(v.as_key());
            fwd.emplace_back(static_cast<int>(r), target_row);
            rev.emplace_back(target_row, static_cast<int>(r));
        }
        std::sort(rev.begin(), rev.end());
    }

    for (size_t ti = 0; ti < schema.tables.size(); ++ti) {
        const TableSchema& ts = schema.tables[ti];
        if (!ts.time_attribute) {
            g.times.emplace_back(std::nullopt);
            continue;
        }
        const auto ai = static_cast<size_t>(ts.attribute_index(*ts.time_attribute));
        std::vector<std::optional<int64_t>> col;
        col.reserve(db->tables[ti].size());
        for (const auto& row : db->tables[ti]) {
            const Value& v = row.values[ai];
            col.push_back(v.is_null() ? std::optional<int64_t>() : v.as_time());
        }
        g.times.emplace_back(std::move(col));
    }

    g.in_offsets.resize(g.edge_types.size());
    g.in_sources.resize(g.edge_types.size());
    for (size_t et = 0; et < g.edge_types.size(); ++et) {
        const auto n_targets =
            static_cast<size_t>(g.node_counts[static_cast<size_t>(g.edge_types[et].target_type)]);
        auto& offsets = g.in_offsets[et];
        auto& sources = g.in_sources[et];
        offsets.assign(n_targets + 1, 0);
        for (const auto& [s, t] : g.edges[et]) offsets[static_cast<size_t>(t) + 1]++;
        for (size_t i = 1; i < offsets.size(); ++i) offsets[i] += offsets[i - 1];
        sources.resize(g.edges[et].size());
        std::vector<int> cursor(offsets.begin(), offsets.end() - 1);
        for (const auto& [s, t] : g.edges[et])
            sources[static_cast<size_t>(cursor[static_cast<size_t>(t)]++)] = s;
        for (size_t t = 0; t < n_targets; ++t)
            std::sort(sources.begin() + offsets[t], sources.begin() + offsets[t + 1]);
    }
    return g;
}

std::string HeteroGraph::dump() const {
    std::ostringstream out;
    out << "nodes\n";
    for (size_t t = 0; t < node_type_names.size(); ++t)
        out << "  " << node_type_names[t] << " " << node_counts[t] << "\n";
    out << "edges\n";
    for (size_t et = 0; et < edge_types.size(); ++et) {
        out << "  " << edge_types[et].name << " " << edges[et].size() << "\n";
        for (const auto& [s, t] : edges[et]) out << "    " << s << " " << t << "\n";
    }
    out << "times\n";
    for (size_t t = 0; t < node_type_names.size(); ++t) {
        if (!times[t]) continue;
        out << "  " << node_type_names[t];
        for (const auto& v : *times[t]) {
            out << " ";
            if (v)
                out << *v;
            else
                out << "_";
        }
        out << "\n";
    }
    return out.str();
}

}  // namespace relcp
