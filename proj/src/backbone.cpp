#include "relcp/backbone.hpp"

#include "relcp/checkpoint.hpp"
#include "relcp/errors.hpp"
#include "relcp/rng.hpp"

namespace relcp {

namespace {

void create_glorot(ParamStore& store, const std::string& name, int rows, int cols,
                   uint64_t init_seed) {
    store.get_or_create(name, rows, cols, [&] {
        Rng rng(derive_seed(init_seed, fnv1a(name)));
        return glorot_uniform(rows, cols, rng);
    });
}

Parameter& create_const(ParamStore& store, const std::string& name, int rows, int cols,
                        double fill, bool trainable = true) {
    Parameter& p = store.get_or_create(name, rows, cols,
                                       [&] { return Tensor::full(rows, cols, fill); });
    p.trainable = trainable;
    return p;
}

}  // namespace

const char* aggregation_name(Aggregation a) {
    return a == Aggregation::Sum ? "sum" : "mean";
}

const char* table_encoder_name(TableEncoderKind k) {
    return k == TableEncoderKind::LinearConcat ? "linear" : "resnet";
}

void BackboneConfig::validate() const {
    if (hidden_dim <= 0) throw ParseError("hidden_dim must be positive");
    if (num_layers < 1) throw ParseError("num_layers must be at least 1");
    if (resnet_blocks < 0) throw ParseError("resnet_blocks must be non-negative");
    if (encoder.attr_dim <= 0) throw ParseError("attr_dim must be positive");
    if (encoder.text_buckets <= 0) throw ParseError("text_buckets must be positive");
}

nlohmann::json BackboneConfig::to_json() const {
    return {{"hidden_dim", hidden_dim},
            {"num_layers", num_layers},
            {"aggregation", aggregation_name(aggregation)},
            {"table_encoder", table_encoder_name(table_encoder)},
            {"resnet_blocks", resnet_blocks},
            {"attr_dim", encoder.attr_dim},
            {"text_buckets", encoder.text_buckets}};
}

BackboneConfig BackboneConfig::from_json(const nlohmann::json& j) {
    BackboneConfig cfg;
    try {
        if (j.contains("hidden_dim")) cfg.hidden_dim = j.at("hidden_dim").get<int>();
        if (j.contains("num_layers")) cfg.num_layers = j.at("num_layers").get<int>();
        if (j.contains("aggregation")) {
            const auto s = j.at("aggregation").get<std::string>();
            if (s == "sum")
                cfg.aggregation = Aggregation::Sum;
            else if (s == "mean")
                cfg.aggregation = Aggregation::Mean;
            else
                throw ParseError("unknown aggregation '" + s + "'");
        }
        if (j.contains("table_encoder")) {
            const auto s = j.at("table_encoder").get<std::string>();
            if (s == "linear")
                cfg.table_encoder = TableEncoderKind::LinearConcat;
            else if (s == "resnet")
                cfg.table_encoder = TableEncoderKind::TabularResNet;
            else
                throw ParseError("unknown table encoder '" + s + "'");
        }
        if (j.contains("resnet_blocks")) cfg.resnet_blocks = j.at("resnet_blocks").get<int>();
        if (j.contains("attr_dim")) cfg.encoder.attr_dim = j.at("attr_dim").get<int>();
        if (j.contains("text_buckets"))
            cfg.encoder.text_buckets = j.at("text_buckets").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("backbone config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

Var table_linear(Tape& t, Var attr_matrix, Parameter& w, Parameter& b) {
    return t.add_rowvec(t.matmul(attr_matrix, t.leaf(w)), t.leaf(b));
}

Var table_resnet(Tape& t, Var attr_matrix, Parameter& stem_w, Parameter& stem_b,
                 const std::vector<ResnetBlockParams>& blocks, bool training) {
    Var h = table_linear(t, attr_matrix, stem_w, stem_b);
    for (const ResnetBlockParams& blk : blocks) {
        const Var branch = t.relu(t.batch_norm_1d(h, *blk.gamma, *blk.beta, *blk.running_mean,
                                                  *blk.running_var, training));
        h = t.add(h, t.add_rowvec(t.matmul(branch, t.leaf(*blk.w)), t.leaf(*blk.b)));
    }
    return h;
}

std::vector<Var> sage_layer(Tape& t, const Subgraph& sub, const std::vector<Var>& h,
                            const std::vector<Parameter*>& msg_w,
                            const std::vector<Parameter*>& upd_w, Aggregation agg) {
    if (!sub.parent) throw EmptyGraph("subgraph has no parent graph");
    const HeteroGraph& g = *sub.parent;
    const size_t n_types = g.node_type_names.size();
    if (h.size() != n_types || upd_w.size() != n_types)
        throw ShapeMismatch("sage_layer needs one embedding and one update matrix per type");
    if (msg_w.size() != g.edge_types.size())
        throw ShapeMismatch("sage_layer needs one message matrix per edge type");
    const int d = h.empty() ? 0 : t.value(h[0]).cols;
    for (size_t k = 0; k < n_types; ++k) {
        const Tensor& hk = t.value(h[k]);
        if (hk.rows != sub.node_count(static_cast<int>(k)) || hk.cols != d)
            throw ShapeMismatch("embedding block " + std::to_string(k) + " is " + shape_str(hk));
    }

    // aggregate incoming messages across every edge type
    std::vector<Var> agg_sum(n_types);
    std::vector<std::vector<double>> counts(n_types);
    for (size_t k = 0; k < n_types; ++k) {
        agg_sum[k] = t.input(Tensor(sub.node_count(static_cast<int>(k)), d));
        counts[k].assign(static_cast<size_t>(sub.node_count(static_cast<int>(k))), 0.0);
    }
    for (size_t et = 0; et < g.edge_types.size(); ++et) {
        const auto& edges = sub.local_edges[et];
        if (edges.empty()) continue;
        const int src_type = g.edge_types[et].source_type;
        const int tgt_type = g.edge_types[et].target_type;
        std::vector<int> src_ids, tgt_ids;
        src_ids.reserve(edges.size());
        tgt_ids.reserve(edges.size());
        for (const auto& [s, tt] : edges) {
            src_ids.push_back(s);
            tgt_ids.push_back(tt);
            counts[static_cast<size_t>(tgt_type)][static_cast<size_t>(tt)] += 1.0;
        }
        const Var gathered = t.embedding_lookup(h[static_cast<size_t>(src_type)], std::move(src_ids));
        const Var msgs = t.matmul(gathered, t.leaf(*msg_w[et]));
        const Var scattered = t.scatter_sum_rows(msgs, std::move(tgt_ids),
                                                 sub.node_count(tgt_type));
        agg_sum[static_cast<size_t>(tgt_type)] =
            t.add(agg_sum[static_cast<size_t>(tgt_type)], scattered);
    }

    std::vector<Var> out(n_types);
    for (size_t k = 0; k < n_types; ++k) {
        Var m = agg_sum[k];
        if (agg == Aggregation::Mean) {
            std::vector<double> inv(counts[k].size());
            for (size_t i = 0; i < inv.size(); ++i)
                inv[i] = counts[k][i] > 0.0 ? 1.0 / counts[k][i] : 0.0;
            m = t.scale_rows(m, std::move(inv));
        }
        out[k] = t.relu(t.matmul(t.concat_cols(h[k], m), t.leaf(*upd_w[k])));
    }
    return out;
}

BackboneModel::BackboneModel(BackboneConfig cfg) : cfg_(cfg), encoders_(cfg.encoder) {
    cfg_.validate();
}

const DatabaseSchema& BackboneModel::schema() const {
    if (!built_) throw UnfittedEncoder("backbone has not been built");
    return schema_;
}

void BackboneModel::build(const DatabaseSchema& schema, uint64_t init_seed) {
    if (!encoders_.fitted()) throw UnfittedEncoder("fit or restore encoders before build");
    schema_ = schema;
    edge_types_ = schema_graph(schema).edge_types;
    encoders_.build_params(schema, store_, init_seed);

    const int hd = cfg_.hidden_dim;
    table_params_.clear();
    for (const TableSchema& table : schema.tables) {
        TableParams tp;
        const int width = encoders_.feature_width(table);
        const std::string base = "tbl." + table.name;
        create_glorot(store_, base + ".w", width, hd, init_seed);
        tp.stem_w = store_.find(base + ".w");
        tp.stem_b = &create_const(store_, base + ".b", 1, hd, 0.0);
        if (cfg_.table_encoder == TableEncoderKind::TabularResNet) {
            for (int j = 0; j < cfg_.resnet_blocks; ++j) {
                ResnetBlockParams blk;
                const std::string bb = base + ".blk" + std::to_string(j);
                create_glorot(store_, bb + ".w", hd, hd, init_seed);
                blk.w = store_.find(bb + ".w");
                blk.b = &create_const(store_, bb + ".b", 1, hd, 0.0);
                blk.gamma = &create_const(store_, bb + ".gamma", 1, hd, 1.0);
                blk.beta = &create_const(store_, bb + ".beta", 1, hd, 0.0);
                blk.running_mean =
                    &create_const(store_, bb + ".running_mean", 1, hd, 0.0, false);
                blk.running_var =
                    &create_const(store_, bb + ".running_var", 1, hd, 1.0, false);
                tp.blocks.push_back(blk);
            }
        }
        table_params_.push_back(tp);
    }

    msg_w_.assign(static_cast<size_t>(cfg_.num_layers), {});
    upd_w_.assign(static_cast<size_t>(cfg_.num_layers), {});
    for (int l = 0; l < cfg_.num_layers; ++l) {
        const std::string lp = "sage.l" + std::to_string(l);
        for (const EdgeTypeInfo& et : edge_types_) {
            const std::string name = lp + ".msg." + et.name;
            create_glorot(store_, name, hd, hd, init_seed);
            msg_w_[static_cast<size_t>(l)].push_back(store_.find(name));
        }
        for (const TableSchema& table : schema.tables) {
            const std::string name = lp + ".upd." + table.name;
            create_glorot(store_, name, 2 * hd, hd, init_seed);
            upd_w_[static_cast<size_t>(l)].push_back(store_.find(name));
        }
    }
    built_ = true;
}

std::vector<Var> BackboneModel::forward(Tape& t, const Subgraph& sub, bool training) {
    if (!sub.parent) throw EmptyGraph("subgraph has no parent graph");
    const Database& db = *sub.parent->db;
    std::vector<std::vector<const Row*>> rows(sub.nodes.size());
    for (size_t k = 0; k < sub.nodes.size(); ++k) {
        rows[k].reserve(sub.nodes[k].size());
        for (const int idx : sub.nodes[k])
            rows[k].push_back(&db.tables[k][static_cast<size_t>(idx)]);
    }
    return forward_impl(t, sub, rows, training);
}

std::vector<Var> BackboneModel::forward_rows(Tape& t, const Subgraph& sub,
                                             const std::vector<std::vector<Row>>& rows_per_type,
                                             bool training) {
    if (rows_per_type.size() != sub.nodes.size())
        throw ShapeMismatch("need one row list per node type");
    std::vector<std::vector<const Row*>> rows(sub.nodes.size());
    for (size_t k = 0; k < sub.nodes.size(); ++k) {
        if (rows_per_type[k].size() != sub.nodes[k].size())
            throw ShapeMismatch("row list for type " + std::to_string(k) +
                                " does not match the subgraph");
        rows[k].reserve(rows_per_type[k].size());
        for (const Row& r : rows_per_type[k]) rows[k].push_back(&r);
    }
    return forward_impl(t, sub, rows, training);
}

std::vector<Var> BackboneModel::forward_impl(Tape& t, const Subgraph& sub,
                                             const std::vector<std::vector<const Row*>>& rows,
                                             bool training) {
    if (!built_) throw UnfittedEncoder("backbone has not been built");
    const HeteroGraph& g = *sub.parent;
    if (g.edge_types.size() != edge_types_.size() ||
        g.node_type_names.size() != schema_.tables.size())
        throw VersionMismatch("subgraph comes from a different schema");

    std::vector<Var> h(schema_.tables.size());
    for (size_t k = 0; k < schema_.tables.size(); ++k) {
        const Var x = encoders_.encode_table(t, rows[k], schema_.tables[k], store_);
        const TableParams& tp = table_params_[k];
        if (cfg_.table_encoder == TableEncoderKind::LinearConcat)
            h[k] = table_linear(t, x, *tp.stem_w, *tp.stem_b);
        else
            h[k] = table_resnet(t, x, *tp.stem_w, *tp.stem_b, tp.blocks, training);
    }
    for (int l = 0; l < cfg_.num_layers; ++l)
        h = sage_layer(t, sub, h, msg_w_[static_cast<size_t>(l)],
                       upd_w_[static_cast<size_t>(l)], cfg_.aggregation);
    return h;
}

}  // namespace relcp
