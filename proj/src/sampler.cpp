#include "relcp/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "relcp/errors.hpp"
#include "relcp/rng.hpp"

namespace relcp {

int Subgraph::total_nodes() const {
    int n = 0;
    for (const auto& v : nodes) n += static_cast<int>(v.size());
    return n;
}

size_t Subgraph::total_edges() const {
    size_t n = 0;
    for (const auto& e : local_edges) n += e.size();
    return n;
}

int Subgraph::local_of(NodeId v) const {
    const auto& map = to_local[static_cast<size_t>(v.type)];
    const auto it = map.find(v.index);
    return it == map.end() ? -1 : it->second;
}

NodeId Subgraph::global_of(int type, int local) const {
    return {type, nodes[static_cast<size_t>(type)][static_cast<size_t>(local)]};
}

std::string Subgraph::summary() const {
    std::ostringstream out;
    out << "nodes\n";
    for (size_t t = 0; t < nodes.size(); ++t)
        out << "  " << parent->node_type_names[t] << " " << nodes[t].size() << "\n";
    out << "edges\n";
    for (size_t et = 0; et < local_edges.size(); ++et)
        out << "  " << parent->edge_types[et].name << " " << local_edges[et].size() << "\n";
    out << "seeds " << seeds.size() << "\n";
    return out.str();
}

namespace {

// Fill local_edges with the induced closure: for every included target node,
// keep the incoming parent edges whose source is also included.
void close_subgraph(Subgraph& sub, const HeteroGraph& g) {
    sub.local_edges.assign(g.edge_types.size(), {});
    for (size_t et = 0; et < g.edge_types.size(); ++et) {
        const int tgt_type = g.edge_types[et].target_type;
        const int src_type = g.edge_types[et].source_type;
        const auto& src_map = sub.to_local[static_cast<size_t>(src_type)];
        auto& out = sub.local_edges[et];
        const auto& tgt_nodes = sub.nodes[static_cast<size_t>(tgt_type)];
        for (size_t tl = 0; tl < tgt_nodes.size(); ++tl) {
            for (int u : g.in_neighbors(static_cast<int>(et), {tgt_type, tgt_nodes[tl]})) {
                const auto it = src_map.find(u);
                if (it != src_map.end()) out.emplace_back(it->second, static_cast<int>(tl));
            }
        }
    }
}

int add_node(Subgraph& sub, int type, int global, int intro) {
    auto& list = sub.nodes[static_cast<size_t>(type)];
    const int local = static_cast<int>(list.size());
    list.push_back(global);
    sub.to_local[static_cast<size_t>(type)].emplace(global, local);
    sub.intro_seed[static_cast<size_t>(type)].push_back(intro);
    return local;
}

Subgraph empty_subgraph(const HeteroGraph& g) {
    Subgraph sub;
    sub.parent = &g;
    sub.nodes.resize(g.node_counts.size());
    sub.to_local.resize(g.node_counts.size());
    sub.intro_seed.resize(g.node_counts.size());
    return sub;
}

}  // namespace

std::string pick_seed_type(const DatabaseSchema& schema) {
    if (schema.tables.empty()) throw EmptyGraph("schema has no tables");
    size_t best = 0;
    size_t best_fks = schema.tables[0].foreign_key_indices().size();
    for (size_t i = 1; i < schema.tables.size(); ++i) {
        const size_t fks = schema.tables[i].foreign_key_indices().size();
        if (fks > best_fks) {
            best = i;
            best_fks = fks;
        }
    }
    return schema.tables[best].name;
}

Subgraph hg_sample(const HeteroGraph& g, const HgSamplerConfig& cfg) {
    if (cfg.per_type_budget < 1) throw ParseError("per_type_budget must be >= 1");
    if (cfg.iterations < 1) throw ParseError("iterations must be >= 1");
    if (cfg.seed_count < 1) throw ParseError("seed_count must be >= 1");
    if (g.total_nodes() == 0) throw EmptyGraph("cannot sample an empty graph");
    const int seed_type = g.node_type_index(cfg.seed_type);
    if (seed_type < 0) throw UnknownSeedType("no node type named '" + cfg.seed_type + "'");

    Rng rng(cfg.rng_seed);
    Subgraph sub = empty_subgraph(g);
    const size_t n_types = g.node_counts.size();
    std::vector<std::vector<char>> included(n_types);
    for (size_t t = 0; t < n_types; ++t)
        included[t].assign(static_cast<size_t>(g.node_counts[t]), 0);

    // Frontier bookkeeping: per type, candidate -> edge count into subgraph.
    std::vector<std::unordered_map<int, int>> weight(n_types);
    std::vector<NodeId> pending;

    auto admit = [&](int type, int global) {
        add_node(sub, type, global, -1);
        included[static_cast<size_t>(type)][static_cast<size_t>(global)] = 1;
        weight[static_cast<size_t>(type)].erase(global);
        pending.push_back({type, global});
    };

    for (int s : rng.sample_without_replacement(g.node_counts[static_cast<size_t>(seed_type)],
                                                cfg.seed_count))
        admit(seed_type, s);

    for (int round = 0; round < cfg.iterations; ++round) {
        // Fold the previous round's additions into the frontier weights.
        for (const NodeId v : pending) {
            for (size_t et = 0; et < g.edge_types.size(); ++et) {
                if (g.edge_types[et].target_type != v.type) continue;
                const int src_type = g.edge_types[et].source_type;
                if (src_type == seed_type) continue;  // seed type is seeds-only
                for (int u : g.in_neighbors(static_cast<int>(et), v))
                    if (!included[static_cast<size_t>(src_type)][static_cast<size_t>(u)])
                        weight[static_cast<size_t>(src_type)][u] += 1;
            }
        }
        pending.clear();

        for (size_t t = 0; t < n_types; ++t) {
            if (static_cast<int>(t) == seed_type) continue;
            const auto& cand = weight[t];
            if (cand.empty()) continue;
            std::vector<int> indices;
            indices.reserve(cand.size());
            for (const auto& [idx, w] : cand) indices.push_back(idx);
            std::sort(indices.begin(), indices.end());
            // Weighted sampling without replacement: rank by log(u)/w.
            std::vector<std::pair<double, int>> keys;
            keys.reserve(indices.size());
            for (int idx : indices) {
                double u = rng.uniform();
                while (u <= 0.0) u = rng.uniform();
                const double w = static_cast<double>(cand.at(idx) + 1);
                keys.emplace_back(std::log(u) / w, idx);
            }
            const size_t k = std::min<size_t>(static_cast<size_t>(cfg.per_type_budget), keys.size());
            std::partial_sort(keys.begin(), keys.begin() + static_cast<ptrdiff_t>(k), keys.end(),
                              [](const auto& a, const auto& b) {
                                  if (a.first != b.first) return a.first > b.first;
                                  return a.second < b.second;
                              });
            std::vector<int> chosen;
            chosen.reserve(k);
            for (size_t i = 0; i < k; ++i) chosen.push_back(keys[i].second);
            std::sort(chosen.begin(), chosen.end());
            for (int idx : chosen) admit(static_cast<int>(t), idx);
        }
    }

    // Seeds are the first admissions of the seed type.
    const int n_seeds = std::min(cfg.seed_count,
                                 static_cast<int>(sub.nodes[static_cast<size_t>(seed_type)].size()));
    for (int i = 0; i < n_seeds; ++i) sub.seeds.push_back({seed_type, i});

    close_subgraph(sub, g);
    return sub;
}

Subgraph neighbor_sample(const HeteroGraph& g, const std::vector<NodeId>& seeds,
                         const NeighborSamplerConfig& cfg) {
    if (cfg.fanout < 1) throw ParseError("fanout must be >= 1");
    if (cfg.depth < 1) throw ParseError("depth must be >= 1");
    if (seeds.empty()) throw InvalidSeed("no seeds given");
    if (cfg.time_cutoffs && cfg.time_cutoffs->size() != seeds.size())
        throw LengthMismatch("need one time cutoff per seed");
    for (const NodeId s : seeds) {
        if (s.type < 0 || s.type >= static_cast<int>(g.node_counts.size()) || s.index < 0 ||
            s.index >= g.node_counts[static_cast<size_t>(s.type)])
            throw InvalidSeed("seed (" + std::to_string(s.type) + ", " + std::to_string(s.index) +
                              ") out of range");
    }

    Rng rng(cfg.rng_seed);
    Subgraph sub = empty_subgraph(g);
    std::vector<NodeId> frontier;
    for (size_t i = 0; i < seeds.size(); ++i) {
        const NodeId s = seeds[i];
        int local = sub.local_of(s);
        if (local < 0) {
            local = add_node(sub, s.type, s.index, static_cast<int>(i));
            frontier.push_back(s);
        }
        sub.seeds.push_back({s.type, local});
    }

    for (int hop = 0; hop < cfg.depth; ++hop) {
        std::vector<NodeId> next;
        for (const NodeId v : frontier) {
            const int intro = sub.intro_seed[static_cast<size_t>(v.type)]
                                            [static_cast<size_t>(sub.local_of(v))];
            for (size_t et = 0; et < g.edge_types.size(); ++et) {
                if (g.edge_types[et].target_type != v.type) continue;
                const int src_type = g.edge_types[et].source_type;
                const auto pool = g.in_neighbors(static_cast<int>(et), v);
                std::vector<int> admissible;
                admissible.reserve(pool.size());
                for (int u : pool) {
                    if (cfg.time_cutoffs) {
                        const auto tu = g.node_time({src_type, u});
                        if (tu && *tu > (*cfg.time_cutoffs)[static_cast<size_t>(intro)]) continue;
                    }
                    admissible.push_back(u);
                }
                std::vector<int> picked;
                if (static_cast<int>(admissible.size()) > cfg.fanout) {
                    for (int j : rng.sample_without_replacement(
                             static_cast<int>(admissible.size()), cfg.fanout))
                        picked.push_back(admissible[static_cast<size_t>(j)]);
                } else {
                    picked = admissible;
                }
                for (int u : picked) {
                    if (sub.local_of({src_type, u}) >= 0) continue;
                    add_node(sub, src_type, u, intro);
                    next.push_back({src_type, u});
                }
            }
        }
        frontier = std::move(next);
    }

    close_subgraph(sub, g);
    return sub;
}

Subgraph full_subgraph(const HeteroGraph& g) {
    Subgraph sub = empty_subgraph(g);
    for (size_t t = 0; t < g.node_counts.size(); ++t)
        for (int i = 0; i < g.node_counts[t]; ++i) add_node(sub, static_cast<int>(t), i, -1);
    close_subgraph(sub, g);
    return sub;
}

}  // namespace relcp
