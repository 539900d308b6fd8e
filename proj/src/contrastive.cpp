#include "relcp/contrastive.hpp"

#include <algorithm>
#include <cmath>

#include "relcp/checkpoint.hpp"
#include "relcp/errors.hpp"

namespace relcp {

namespace {

void check_local(const Subgraph& sub, int type, int local, const char* what) {
    if (type < 0 || static_cast<size_t>(type) >= sub.nodes.size())
        throw TypeMismatch(std::string(what) + ": node type out of range");
    if (local < 0 || local >= sub.node_count(type))
        throw TypeMismatch(std::string(what) + ": local index out of range");
}

bool linked_in_parent(const HeteroGraph& g, int et, int src_global, NodeId target) {
    const auto nbrs = g.in_neighbors(et, target);
    return std::binary_search(nbrs.begin(), nbrs.end(), src_global);
}

// logits over [positive, negatives] scored against h_type[local]
Var nce_anchor_loss(Tape& t, Var h_type, int local, Var scores, std::vector<int> cands) {
    const Var hv = t.slice_rows(h_type, local, 1);
    const Var cand_rows = t.embedding_lookup(scores, std::move(cands));
    const Var logits = t.matmul_nt(hv, cand_rows);
    return t.sub(t.logsumexp_rows(logits), t.slice_cols(logits, 0, 1));
}

std::vector<int> with_positive_first(int positive, const std::vector<int>& negs) {
    std::vector<int> cands;
    cands.reserve(negs.size() + 1);
    cands.push_back(positive);
    cands.insert(cands.end(), negs.begin(), negs.end());
    return cands;
}

Var average_terms(Tape& t, const std::vector<Var>& terms) {
    return t.mean_all(t.concat_rows(terms));
}

}  // namespace

TableMarginals table_marginals(const Database& db, const std::string& table_name) {
    const TableSchema& table = db.schema.table(table_name);
    TableMarginals out;
    for (const int ai : table.value_attribute_indices())
        out.by_value_attr.push_back(
            column_marginal(db, table_name, table.attributes[static_cast<size_t>(ai)].name));
    return out;
}

CorruptionResult corrupt_rows(const std::vector<const Row*>& rows, const TableSchema& table,
                              const TableMarginals& marginals, const CorruptionConfig& cfg) {
    if (cfg.p < 0.0 || cfg.p > 1.0)
        throw ParseError("corruption probability must lie in [0, 1]");
    const auto value_idx = table.value_attribute_indices();
    if (marginals.by_value_attr.size() != value_idx.size())
        throw ParseError("marginals do not align with the table's non-key columns");
    if (cfg.p > 0.0 && !rows.empty()) {
        for (size_t j = 0; j < value_idx.size(); ++j)
            if (marginals.by_value_attr[j].observed_values.empty())
                throw EmptyMarginal("column " + table.name + "." +
                                    table.attributes[static_cast<size_t>(value_idx[j])].name +
                                    " has no observed values to corrupt from");
    }

    Rng rng(cfg.rng_seed);
    CorruptionResult result;
    result.rows.reserve(rows.size());
    for (const Row* r : rows) {
        Row out = *r;
        for (size_t j = 0; j < value_idx.size(); ++j) {
            ++result.cells_considered;
            if (rng.uniform() < cfg.p) {
                ++result.cells_selected;
                const auto& pool = marginals.by_value_attr[j].observed_values;
                out.values[static_cast<size_t>(value_idx[j])] =
                    pool[rng.bounded(pool.size())];
            }
        }
        result.rows.push_back(std::move(out));
    }
    return result;
}

CorruptionResult corrupt_rows(const std::vector<Row>& rows, const TableSchema& table,
                              const TableMarginals& marginals, const CorruptionConfig& cfg) {
    std::vector<const Row*> ptrs;
    ptrs.reserve(rows.size());
    for (const Row& r : rows) ptrs.push_back(&r);
    return corrupt_rows(ptrs, table, marginals, cfg);
}

std::vector<std::vector<Row>> corrupt_subgraph_rows(
    const Subgraph& sub, const std::vector<TableMarginals>& marginals_per_table,
    const CorruptionConfig& cfg) {
    if (!sub.parent) throw EmptyGraph("subgraph has no parent graph");
    const Database& db = *sub.parent->db;
    if (marginals_per_table.size() != db.schema.tables.size())
        throw ParseError("need marginals for every table");
    std::vector<std::vector<Row>> out(sub.nodes.size());
    for (size_t k = 0; k < sub.nodes.size(); ++k) {
        std::vector<const Row*> ptrs;
        ptrs.reserve(sub.nodes[k].size());
        for (const int idx : sub.nodes[k]) ptrs.push_back(&db.tables[k][static_cast<size_t>(idx)]);
        CorruptionConfig per = cfg;
        per.rng_seed = derive_seed(cfg.rng_seed, static_cast<uint64_t>(k));
        out[k] = corrupt_rows(ptrs, db.schema.tables[k], marginals_per_table[k], per).rows;
    }
    return out;
}

ContrastiveParams build_contrastive_params(const DatabaseSchema& schema, int hidden_dim,
                                           ParamStore& store, uint64_t init_seed) {
    ContrastiveParams params;
    auto create = [&](const std::string& name) {
        store.get_or_create(name, hidden_dim, hidden_dim, [&] {
            Rng rng(derive_seed(init_seed, fnv1a(name)));
            return near_identity(hidden_dim, rng, 0.01);
        });
        return store.find(name);
    };
    for (const TableSchema& table : schema.tables) {
        params.w_row.push_back(create("ctr.row." + table.name));
        params.w_ctx.push_back(create("ctr.ctx." + table.name));
    }
    for (const EdgeTypeInfo& et : schema_graph(schema).edge_types)
        params.w_link.push_back(et.dir == EdgeDir::Forward ? create("ctr.link." + et.name)
                                                           : nullptr);
    return params;
}

double norm_factor(int n_neg) {
    if (n_neg < 0) throw ParseError("negative count cannot be negative");
    return std::log(static_cast<double>(n_neg) + 1.0);
}

bool LossPlan::all_empty() const {
    for (const auto& a : rows)
        if (!a.negs.empty()) return false;
    for (const auto& a : links)
        if (!a.negs.empty()) return false;
    for (const auto& a : contexts)
        if (!a.negs.empty()) return false;
    return true;
}

std::vector<int> eligible_row_negatives(const Subgraph& sub, int type, int local) {
    check_local(sub, type, local, "row anchor");
    std::vector<int> out;
    out.reserve(static_cast<size_t>(sub.node_count(type)));
    for (int u = 0; u < sub.node_count(type); ++u)
        if (u != local) out.push_back(u);
    return out;
}

std::vector<int> eligible_link_negatives(const Subgraph& sub, int et, int edge_index) {
    const HeteroGraph& g = *sub.parent;
    if (et < 0 || static_cast<size_t>(et) >= g.edge_types.size())
        throw TypeMismatch("edge type out of range");
    const EdgeTypeInfo& info = g.edge_types[static_cast<size_t>(et)];
    if (info.dir != EdgeDir::Forward)
        throw TypeMismatch("link anchors live on Forward edge types");
    const auto& edges = sub.local_edges[static_cast<size_t>(et)];
    if (edge_index < 0 || static_cast<size_t>(edge_index) >= edges.size())
        throw TypeMismatch("edge index out of range");
    const auto [u, v] = edges[static_cast<size_t>(edge_index)];
    const NodeId v_global = sub.global_of(info.target_type, v);
    std::vector<int> out;
    for (int w = 0; w < sub.node_count(info.source_type); ++w) {
        if (w == u) continue;
        const int w_global = sub.nodes[static_cast<size_t>(info.source_type)][static_cast<size_t>(w)];
        if (!linked_in_parent(g, et, w_global, v_global)) out.push_back(w);
    }
    return out;
}

std::vector<char> context_defined_mask(const Subgraph& sub, int type) {
    const HeteroGraph& g = *sub.parent;
    std::vector<char> defined(static_cast<size_t>(sub.node_count(type)), 0);
    for (size_t et = 0; et < g.edge_types.size(); ++et) {
        if (g.edge_types[et].dir != EdgeDir::Forward) continue;
        if (g.edge_types[et].target_type != type) continue;
        for (const auto& [src, tgt] : sub.local_edges[et]) {
            (void)src;
            defined[static_cast<size_t>(tgt)] = 1;
        }
    }
    return defined;
}

std::vector<int> eligible_context_negatives(const Subgraph& sub, int type, int local) {
    check_local(sub, type, local, "context anchor");
    const std::vector<char> defined = context_defined_mask(sub, type);
    std::vector<int> out;
    for (int u = 0; u < sub.node_count(type); ++u)
        if (u != local && defined[static_cast<size_t>(u)]) out.push_back(u);
    return out;
}

std::vector<int> sample_negatives(const std::vector<int>& eligible, int n_max, Rng& rng) {
    if (n_max < 1) throw ParseError("n_max must be at least 1");
    const size_t k = std::min<size_t>(static_cast<size_t>(n_max), eligible.size());
    const auto picks = rng.sample_without_replacement(eligible.size(), k);
    std::vector<int> out;
    out.reserve(picks.size());
    for (const auto i : picks) out.push_back(eligible[static_cast<size_t>(i)]);
    return out;
}

LossPlan draw_loss_plan(const Subgraph& sub, const NegativeConfig& cfg, Rng& rng) {
    if (!sub.parent) throw EmptyGraph("subgraph has no parent graph");
    const HeteroGraph& g = *sub.parent;
    LossPlan plan;
    for (int type = 0; type < static_cast<int>(sub.nodes.size()); ++type) {
        for (int v = 0; v < sub.node_count(type); ++v) {
            RowAnchor a;
            a.type = type;
            a.local = v;
            a.negs = sample_negatives(eligible_row_negatives(sub, type, v), cfg.n_max, rng);
            plan.rows.push_back(std::move(a));
        }
    }
    for (int et = 0; et < static_cast<int>(g.edge_types.size()); ++et) {
        if (g.edge_types[static_cast<size_t>(et)].dir != EdgeDir::Forward) continue;
        const auto& edges = sub.local_edges[static_cast<size_t>(et)];
        for (int e = 0; e < static_cast<int>(edges.size()); ++e) {
            LinkAnchor a;
            a.et = et;
            a.edge = e;
            a.negs = sample_negatives(eligible_link_negatives(sub, et, e), cfg.n_max, rng);
            plan.links.push_back(std::move(a));
        }
    }
    for (int type = 0; type < static_cast<int>(sub.nodes.size()); ++type) {
        const std::vector<char> defined = context_defined_mask(sub, type);
        for (int v = 0; v < sub.node_count(type); ++v) {
            if (!defined[static_cast<size_t>(v)]) continue;
            CtxAnchor a;
            a.type = type;
            a.local = v;
            a.negs =
                sample_negatives(eligible_context_negatives(sub, type, v), cfg.n_max, rng);
            plan.contexts.push_back(std::move(a));
        }
    }
    return plan;
}

std::vector<Var> context_embeddings(Tape& t, const Subgraph& sub, const std::vector<Var>& h,
                                    const std::vector<Parameter*>& w_ctx) {
    const HeteroGraph& g = *sub.parent;
    const size_t n_types = sub.nodes.size();
    if (h.size() != n_types || w_ctx.size() != n_types)
        throw ShapeMismatch("context embeddings need per-type embeddings and matrices");
    const int d = w_ctx.empty() ? 0 : w_ctx[0]->tensor.cols;

    std::vector<Var> transformed(n_types);
    for (size_t k = 0; k < n_types; ++k) transformed[k] = t.matmul(h[k], t.leaf(*w_ctx[k]));

    std::vector<Var> sums(n_types);
    std::vector<std::vector<double>> counts(n_types);
    for (size_t k = 0; k < n_types; ++k) {
        sums[k] = t.input(Tensor(sub.node_count(static_cast<int>(k)), d));
        counts[k].assign(static_cast<size_t>(sub.node_count(static_cast<int>(k))), 0.0);
    }
    for (size_t et = 0; et < g.edge_types.size(); ++et) {
        if (g.edge_types[et].dir != EdgeDir::Forward) continue;
        const auto& edges = sub.local_edges[et];
        if (edges.empty()) continue;
        const auto src_type = static_cast<size_t>(g.edge_types[et].source_type);
        const auto tgt_type = static_cast<size_t>(g.edge_types[et].target_type);
        std::vector<int> src_ids, tgt_ids;
        src_ids.reserve(edges.size());
        tgt_ids.reserve(edges.size());
        for (const auto& [s, v] : edges) {
            src_ids.push_back(s);
            tgt_ids.push_back(v);
            counts[tgt_type][static_cast<size_t>(v)] += 1.0;
        }
        const Var gathered = t.embedding_lookup(transformed[src_type], std::move(src_ids));
        sums[tgt_type] = t.add(sums[tgt_type],
                               t.scatter_sum_rows(gathered, std::move(tgt_ids),
                                                  sub.node_count(static_cast<int>(tgt_type))));
    }
    for (size_t k = 0; k < n_types; ++k) {
        std::vector<double> inv(counts[k].size());
        for (size_t i = 0; i < inv.size(); ++i)
            inv[i] = counts[k][i] > 0.0 ? 1.0 / counts[k][i] : 0.0;
        sums[k] = t.scale_rows(sums[k], std::move(inv));
    }
    return sums;
}

Var row_loss(Tape& t, const Subgraph& sub, int type, int local, const std::vector<int>& negs,
             const std::vector<Var>& h, const std::vector<Var>& h_cor, Parameter& w_row) {
    check_local(sub, type, local, "row anchor");
    for (const int u : negs) {
        check_local(sub, type, u, "row negative");
        if (u == local) throw TypeMismatch("row negative equals the anchor");
    }
    if (negs.empty()) return t.input(Tensor::scalar(0.0));
    const Var scores = t.matmul(h_cor[static_cast<size_t>(type)], t.leaf(w_row));
    return nce_anchor_loss(t, h[static_cast<size_t>(type)], local, scores,
                           with_positive_first(local, negs));
}

Var link_loss(Tape& t, const Subgraph& sub, int et, int edge_index,
              const std::vector<int>& negs, const std::vector<Var>& h, Parameter& w_link) {
    const HeteroGraph& g = *sub.parent;
    if (et < 0 || static_cast<size_t>(et) >= g.edge_types.size())
        throw TypeMismatch("edge type out of range");
    const EdgeTypeInfo& info = g.edge_types[static_cast<size_t>(et)];
    if (info.dir != EdgeDir::Forward)
        throw TypeMismatch("link anchors live on Forward edge types");
    const auto& edges = sub.local_edges[static_cast<size_t>(et)];
    if (edge_index < 0 || static_cast<size_t>(edge_index) >= edges.size())
        throw TypeMismatch("edge index out of range");
    const auto [u, v] = edges[static_cast<size_t>(edge_index)];
    const NodeId v_global = sub.global_of(info.target_type, v);
    for (const int w : negs) {
        check_local(sub, info.source_type, w, "link negative");
        if (w == u) throw TypeMismatch("link negative equals the edge source");
        const int w_global =
            sub.nodes[static_cast<size_t>(info.source_type)][static_cast<size_t>(w)];
        if (linked_in_parent(g, et, w_global, v_global))
            throw NegativeIsLinked("link negative is connected to the target");
    }
    if (negs.empty()) return t.input(Tensor::scalar(0.0));
    const Var scores = t.matmul(h[static_cast<size_t>(info.source_type)], t.leaf(w_link));
    return nce_anchor_loss(t, h[static_cast<size_t>(info.target_type)], v, scores,
                           with_positive_first(u, negs));
}

Var context_loss(Tape& t, const Subgraph& sub, int type, int local,
                 const std::vector<int>& negs, const std::vector<Var>& h,
                 const std::vector<Var>& ctx) {
    check_local(sub, type, local, "context anchor");
    const std::vector<char> defined = context_defined_mask(sub, type);
    if (!defined[static_cast<size_t>(local)])
        throw UndefinedContext("context anchor has no Forward in-neighbors");
    for (const int u : negs) {
        check_local(sub, type, u, "context negative");
        if (u == local) throw TypeMismatch("context negative equals the anchor");
        if (!defined[static_cast<size_t>(u)])
            throw UndefinedContext("context negative has no Forward in-neighbors");
    }
    if (negs.empty()) return t.input(Tensor::scalar(0.0));
    return nce_anchor_loss(t, h[static_cast<size_t>(type)], local,
                           ctx[static_cast<size_t>(type)], with_positive_first(local, negs));
}

Var combined_loss(Tape& t, const Subgraph& sub, const std::vector<Var>& h,
                  const std::vector<Var>& h_cor, const ContrastiveParams& params,
                  const LossPlan& plan) {
    if (!sub.parent) throw EmptyGraph("subgraph has no parent graph");
    if (sub.total_nodes() == 0) throw EmptySubgraph("cannot score an empty subgraph");
    const HeteroGraph& g = *sub.parent;
    const size_t n_types = sub.nodes.size();

    // per-type score tables, shared across anchors of the level
    std::vector<Var> row_scores(n_types);
    for (size_t k = 0; k < n_types; ++k)
        row_scores[k] = t.matmul(h_cor[k], t.leaf(*params.w_row[k]));
    std::vector<Var> link_scores(g.edge_types.size(), -1);
    for (size_t et = 0; et < g.edge_types.size(); ++et) {
        if (g.edge_types[et].dir != EdgeDir::Forward) continue;
        const auto src = static_cast<size_t>(g.edge_types[et].source_type);
        link_scores[et] = t.matmul(h[src], t.leaf(*params.w_link[et]));
    }
    const std::vector<Var> ctx = context_embeddings(t, sub, h, params.w_ctx);

    std::vector<Var> row_terms, link_terms, ctx_terms;
    for (const RowAnchor& a : plan.rows) {
        if (a.negs.empty()) continue;
        check_local(sub, a.type, a.local, "row anchor");
        for (const int u : a.negs) {
            check_local(sub, a.type, u, "row negative");
            if (u == a.local) throw TypeMismatch("row negative equals the anchor");
        }
        const Var l = nce_anchor_loss(t, h[static_cast<size_t>(a.type)], a.local,
                                      row_scores[static_cast<size_t>(a.type)],
                                      with_positive_first(a.local, a.negs));
        row_terms.push_back(t.scale(l, 1.0 / norm_factor(static_cast<int>(a.negs.size()))));
    }
    for (const LinkAnchor& a : plan.links) {
        if (a.negs.empty()) continue;
        const EdgeTypeInfo& info = g.edge_types[static_cast<size_t>(a.et)];
        const auto& edges = sub.local_edges[static_cast<size_t>(a.et)];
        if (a.edge < 0 || static_cast<size_t>(a.edge) >= edges.size())
            throw TypeMismatch("edge index out of range");
        const auto [u, v] = edges[static_cast<size_t>(a.edge)];
        const NodeId v_global = sub.global_of(info.target_type, v);
        for (const int w : a.negs) {
            check_local(sub, info.source_type, w, "link negative");
            if (w == u) throw TypeMismatch("link negative equals the edge source");
            const int w_global =
                sub.nodes[static_cast<size_t>(info.source_type)][static_cast<size_t>(w)];
            if (linked_in_parent(g, a.et, w_global, v_global))
                throw NegativeIsLinked("link negative is connected to the target");
        }
        const Var l = nce_anchor_loss(t, h[static_cast<size_t>(info.target_type)], v,
                                      link_scores[static_cast<size_t>(a.et)],
                                      with_positive_first(u, a.negs));
        link_terms.push_back(t.scale(l, 1.0 / norm_factor(static_cast<int>(a.negs.size()))));
    }
    std::vector<std::vector<char>> defined_by_type(n_types);
    for (size_t k = 0; k < n_types; ++k)
        defined_by_type[k] = context_defined_mask(sub, static_cast<int>(k));
    for (const CtxAnchor& a : plan.contexts) {
        if (a.negs.empty()) continue;
        check_local(sub, a.type, a.local, "context anchor");
        const std::vector<char>& defined = defined_by_type[static_cast<size_t>(a.type)];
        if (!defined[static_cast<size_t>(a.local)])
            throw UndefinedContext("context anchor has no Forward in-neighbors");
        for (const int u : a.negs) {
            check_local(sub, a.type, u, "context negative");
            if (u == a.local) throw TypeMismatch("context negative equals the anchor");
            if (!defined[static_cast<size_t>(u)])
                throw UndefinedContext("context negative has no Forward in-neighbors");
        }
        const Var l = nce_anchor_loss(t, h[static_cast<size_t>(a.type)], a.local,
                                      ctx[static_cast<size_t>(a.type)],
                                      with_positive_first(a.local, a.negs));
        ctx_terms.push_back(t.scale(l, 1.0 / norm_factor(static_cast<int>(a.negs.size()))));
    }

    Var total = t.input(Tensor::scalar(0.0));
    if (!row_terms.empty()) total = t.add(total, average_terms(t, row_terms));
    if (!link_terms.empty()) total = t.add(total, average_terms(t, link_terms));
    if (!ctx_terms.empty()) total = t.add(total, average_terms(t, ctx_terms));
    return total;
}

Var combined_loss(Tape& t, const Subgraph& sub, const std::vector<Var>& h,
                  const std::vector<Var>& h_cor, const ContrastiveParams& params,
                  const NegativeConfig& cfg, Rng& rng) {
    return combined_loss(t, sub, h, h_cor, params, draw_loss_plan(sub, cfg, rng));
}

}  // namespace relcp
