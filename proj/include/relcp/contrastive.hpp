#pragma once

#include <cstdint>
#include <vector>

#include "relcp/autodiff.hpp"
#include "relcp/database.hpp"
#include "relcp/rng.hpp"
#include "relcp/sampler.hpp"

namespace relcp {

struct CorruptionConfig {
    double p = 0.2;
    uint64_t rng_seed = 0;
};

struct NegativeConfig {
    int n_max = 256;
};

// Empirical marginals for one table, aligned with value_attribute_indices.
struct TableMarginals {
    std::vector<ColumnMarginal> by_value_attr;
};

TableMarginals table_marginals(const Database& db, const std::string& table_name);

struct CorruptionResult {
    std::vector<Row> rows;
    int64_t cells_considered = 0;
    int64_t cells_selected = 0;
};

// Each non-key cell is independently selected with probability p and replaced
// by a uniform draw from its column marginal. Replacements are never Null;
// selection may resample the original value. Key cells pass through verbatim.
CorruptionResult corrupt_rows(const std::vector<const Row*>& rows, const TableSchema& table,
                              const TableMarginals& marginals, const CorruptionConfig& cfg);
CorruptionResult corrupt_rows(const std::vector<Row>& rows, const TableSchema& table,
                              const TableMarginals& marginals, const CorruptionConfig& cfg);

// Copies of every subgraph node's row, corrupted per type with streams
// derived from rng_seed. Shaped for BackboneModel::forward_rows.
std::vector<std::vector<Row>> corrupt_subgraph_rows(
    const Subgraph& sub, const std::vector<TableMarginals>& marginals_per_table,
    const CorruptionConfig& cfg);

// Similarity matrices: one per node type for the row and context levels, one
// per Forward edge type for the link level (Reverse slots stay null).
struct ContrastiveParams {
    std::vector<Parameter*> w_row;
    std::vector<Parameter*> w_ctx;
    std::vector<Parameter*> w_link;
};

ContrastiveParams build_contrastive_params(const DatabaseSchema& schema, int hidden_dim,
                                           ParamStore& store, uint64_t init_seed);

// mu(K) = ln(K + 1): scale equalizer across anchors with different negative counts.
double norm_factor(int n_neg);

struct RowAnchor {
    int type = 0;
    int local = 0;
    std::vector<int> negs;
};
struct LinkAnchor {
    int et = 0;
    int edge = 0;
    std::vector<int> negs;
};
struct CtxAnchor {
    int type = 0;
    int local = 0;
    std::vector<int> negs;
};

struct LossPlan {
    std::vector<RowAnchor> rows;
    std::vector<LinkAnchor> links;
    std::vector<CtxAnchor> contexts;
    // True when no anchor carries a negative, i.e. the loss is constant zero.
    bool all_empty() const;
};

// Eligible negative pools, in ascending local order.
std::vector<int> eligible_row_negatives(const Subgraph& sub, int type, int local);
std::vector<int> eligible_link_negatives(const Subgraph& sub, int et, int edge_index);
std::vector<int> eligible_context_negatives(const Subgraph& sub, int type, int local);

// Per-local flag: node has at least one in-neighbor via a Forward edge type
// inside the subgraph, so its context embedding exists.
std::vector<char> context_defined_mask(const Subgraph& sub, int type);

// Uniform draw without replacement, capped at n_max.
std::vector<int> sample_negatives(const std::vector<int>& eligible, int n_max, Rng& rng);

// One anchor per node (row level), per Forward edge (link level), and per
// context-defined node (context level), each with drawn negatives.
LossPlan draw_loss_plan(const Subgraph& sub, const NegativeConfig& cfg, Rng& rng);

// c_v = mean over Forward in-neighbors u of h_u @ w_ctx[type(u)]. Rows for
// nodes with no such neighbors are zero and must be guarded by the mask.
std::vector<Var> context_embeddings(Tape& t, const Subgraph& sub, const std::vector<Var>& h,
                                    const std::vector<Parameter*>& w_ctx);

// InfoNCE pieces. negs hold subgraph-local indices; the positive is the
// anchor itself (row, context) or the edge source (link).
Var row_loss(Tape& t, const Subgraph& sub, int type, int local, const std::vector<int>& negs,
             const std::vector<Var>& h, const std::vector<Var>& h_cor, Parameter& w_row);
Var link_loss(Tape& t, const Subgraph& sub, int et, int edge_index,
              const std::vector<int>& negs, const std::vector<Var>& h, Parameter& w_link);
Var context_loss(Tape& t, const Subgraph& sub, int type, int local,
                 const std::vector<int>& negs, const std::vector<Var>& h,
                 const std::vector<Var>& ctx);

// Sum of the three per-level averages of loss / mu(K); anchors without
// negatives drop out of both numerator and denominator.
Var combined_loss(Tape& t, const Subgraph& sub, const std::vector<Var>& h,
                  const std::vector<Var>& h_cor, const ContrastiveParams& params,
                  const LossPlan& plan);
Var combined_loss(Tape& t, const Subgraph& sub, const std::vector<Var>& h,
                  const std::vector<Var>& h_cor, const ContrastiveParams& params,
                  const NegativeConfig& cfg, Rng& rng);

}  // namespace relcp
