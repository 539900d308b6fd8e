#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "relcp/graph.hpp"

namespace relcp {

struct SubgraphSeed {
    int type = 0;
    int local = 0;
};

// A node-induced subgraph: every parent edge between included nodes is
// present. Node order is insertion order (seeds first), which fixes the
// local indexing for everything downstream.
struct Subgraph {
    const HeteroGraph* parent = nullptr;
    std::vector<std::vector<int>> nodes;  // per type: global row indices
    std::vector<std::unordered_map<int, int>> to_local;
    std::vector<std::vector<std::pair<int, int>>> local_edges;  // per edge type
    std::vector<SubgraphSeed> seeds;
    // Seed (index into `seeds`) whose expansion first introduced each node;
    // -1 where no seed applies (hg_sample, full_subgraph).
    std::vector<std::vector<int>> intro_seed;

    int node_count(int type) const { return static_cast<int>(nodes[static_cast<size_t>(type)].size()); }
    int total_nodes() const;
    size_t total_edges() const;
    // Local index of a parent node, -1 when not included.
    int local_of(NodeId v) const;
    NodeId global_of(int type, int local) const;
    std::string summary() const;
};

struct HgSamplerConfig {
    int per_type_budget = 64;
    int iterations = 3;
    std::string seed_type;
    int seed_count = 64;
    uint64_t rng_seed = 0;
};

struct NeighborSamplerConfig {
    int fanout = 128;
    int depth = 2;
    // When set, one cutoff per seed; expansion from a seed only admits nodes
    // whose time is absent or <= that seed's cutoff.
    std::optional<std::vector<int64_t>> time_cutoffs;
    uint64_t rng_seed = 0;
};

// Table with the most FK columns; ties go to schema order.
std::string pick_seed_type(const DatabaseSchema& schema);

// Type-balanced sampling: uniform seeds from the seed type, then a fixed
// number of rounds in which every other type admits up to per_type_budget new
// nodes, drawn without replacement from the frontier with weights
// (edges into the current subgraph + 1).
Subgraph hg_sample(const HeteroGraph& g, const HgSamplerConfig& cfg);

// Breadth-first expansion for `depth` hops, at most `fanout` neighbors per
// node per edge type, uniformly without replacement.
Subgraph neighbor_sample(const HeteroGraph& g, const std::vector<NodeId>& seeds,
                         const NeighborSamplerConfig& cfg);

// The whole graph as a Subgraph (local index = global index).
Subgraph full_subgraph(const HeteroGraph& g);

}  // namespace relcp
