#include "relcp/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <unordered_map>

#include "relcp/csv.hpp"
#include "relcp/database.hpp"
#include "relcp/errors.hpp"

namespace relcp {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

struct Snapshot {
    std::vector<Tensor> tensors;
    int step = 0;
};

Snapshot take_snapshot(const ParamStore& store, int step) {
    Snapshot s;
    s.step = step;
    s.tensors.reserve(store.size());
    for (const auto& p : store.all()) s.tensors.push_back(p->tensor);
    return s;
}

void restore_snapshot(ParamStore& store, const Snapshot& s) {
    const auto& params = store.all();
    if (params.size() != s.tensors.size())
        throw VersionMismatch("snapshot does not match the parameter set");
    for (size_t i = 0; i < params.size(); ++i) params[i]->tensor = s.tensors[i];
}

Checkpoint checkpoint_from_snapshot(const ParamStore& store, const Snapshot& s,
                                    nlohmann::json manifest) {
    Checkpoint ck;
    ck.manifest = std::move(manifest);
    const auto& params = store.all();
    for (size_t i = 0; i < params.size(); ++i)
        ck.entries.emplace_back(params[i]->name, s.tensors[i]);
    return ck;
}

struct HeadParams {
    Parameter* w1 = nullptr;
    Parameter* b1 = nullptr;
    Parameter* gamma = nullptr;
    Parameter* beta = nullptr;
    Parameter* running_mean = nullptr;
    Parameter* running_var = nullptr;
    Parameter* w2 = nullptr;
    Parameter* b2 = nullptr;
};

HeadParams build_head(ParamStore& store, int hidden_dim, int head_hidden, uint64_t init_seed) {
    HeadParams hp;
    auto glorot = [&](const std::string& name, int r, int c) {
        store.get_or_create(name, r, c, [&] {
            Rng rng(derive_seed(init_seed, fnv1a(name)));
            return glorot_uniform(r, c, rng);
        });
        return store.find(name);
    };
    auto constant = [&](const std::string& name, int c, double fill, bool trainable) {
        Parameter& p =
            store.get_or_create(name, 1, c, [&] { return Tensor::full(1, c, fill); });
        p.trainable = trainable;
        return &p;
    };
    hp.w1 = glorot("head.l1.w", hidden_dim, head_hidden);
    hp.b1 = constant("head.l1.b", head_hidden, 0.0, true);
    hp.gamma = constant("head.bn.gamma", head_hidden, 1.0, true);
    hp.beta = constant("head.bn.beta", head_hidden, 0.0, true);
    hp.running_mean = constant("head.bn.running_mean", head_hidden, 0.0, false);
    hp.running_var = constant("head.bn.running_var", head_hidden, 1.0, false);
    hp.w2 = glorot("head.l2.w", head_hidden, 1);
    hp.b2 = constant("head.l2.b", 1, 0.0, true);
    return hp;
}

Var head_forward(Tape& t, Var h, const HeadParams& hp, bool training) {
    Var z = t.add_rowvec(t.matmul(h, t.leaf(*hp.w1)), t.leaf(*hp.b1));
    z = t.relu(t.batch_norm_1d(z, *hp.gamma, *hp.beta, *hp.running_mean, *hp.running_var,
                               training));
    return t.add_rowvec(t.matmul(z, t.leaf(*hp.w2)), t.leaf(*hp.b2));
}

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Task rows resolved to graph nodes, plus label normalization.
struct TaskRuntime {
    const TaskTable* task = nullptr;
    const HeteroGraph* graph = nullptr;
    int entity_type = 0;
    std::vector<int> node_of_row;
    double label_mean = 0.0;
    double label_std = 1.0;
};

TaskRuntime bind_task(const TaskTable& task, const HeteroGraph& graph, const Database& db) {
    TaskRuntime rt;
    rt.task = &task;
    rt.graph = &graph;
    rt.entity_type = db.schema.table_index(task.entity_table);
    const TableSchema& table = db.schema.tables[static_cast<size_t>(rt.entity_type)];
    const int pk = table.primary_key_index();
    std::unordered_map<std::string, int> by_key;
    const auto& rows = db.tables[static_cast<size_t>(rt.entity_type)];
    for (size_t i = 0; i < rows.size(); ++i)
        by_key.emplace(rows[i].values[static_cast<size_t>(pk)].as_key(),
                       static_cast<int>(i));
    rt.node_of_row.reserve(task.rows.size());
    for (const TaskRow& r : task.rows) {
        const auto it = by_key.find(r.entity_key.as_key());
        if (it == by_key.end())
            throw IntegrityError("task " + task.name + " references unknown " +
                                 task.entity_table + " key '" + r.entity_key.as_key() + "'");
        rt.node_of_row.push_back(it->second);
    }
    if (task.label_kind == LabelKind::Regression) {
        double sum = 0.0, sum2 = 0.0;
        int64_t n = 0;
        for (const TaskRow& r : task.rows) {
            if (r.split != Split::Train) continue;
            sum += r.label;
            sum2 += r.label * r.label;
            ++n;
        }
        if (n > 0) {
            rt.label_mean = sum / static_cast<double>(n);
            const double var = sum2 / static_cast<double>(n) - rt.label_mean * rt.label_mean;
            rt.label_std = var > 1e-24 ? std::sqrt(var) : 1.0;
        }
    }
    return rt;
}

// Rows grouped by prediction timestamp, each group sampled with a uniform
// cutoff so no group ever sees nodes past its own time.
struct BatchPrediction {
    Var preds = -1;                // grouped order, n x 1
    std::vector<int> grouped_rows;  // task row ids in the same order
};

BatchPrediction predict_batch(Tape& t, const TaskRuntime& rt, BackboneModel& model,
                              const HeadParams& head, const NeighborSamplerConfig& base,
                              uint64_t seed, const std::vector<int>& row_ids,
                              bool backbone_training, bool head_training) {
    std::vector<int> no_cutoff;
    std::map<int64_t, std::vector<int>> by_cutoff;
    for (const int rid : row_ids) {
        const auto& ts = rt.task->rows[static_cast<size_t>(rid)].timestamp;
        if (ts.has_value())
            by_cutoff[*ts].push_back(rid);
        else
            no_cutoff.push_back(rid);
    }

    BatchPrediction out;
    std::vector<Var> parts;
    uint64_t group = 0;
    auto run_group = [&](const std::vector<int>& rids, std::optional<int64_t> cutoff) {
        NeighborSamplerConfig nc = base;
        nc.rng_seed = derive_seed(seed, group++);
        std::vector<NodeId> seeds;
        seeds.reserve(rids.size());
        for (const int rid : rids)
            seeds.push_back(NodeId{rt.entity_type, rt.node_of_row[static_cast<size_t>(rid)]});
        if (cutoff.has_value())
            nc.time_cutoffs = std::vector<int64_t>(seeds.size(), *cutoff);
        else
            nc.time_cutoffs.reset();
        const Subgraph sub = neighbor_sample(*rt.graph, seeds, nc);
        const std::vector<Var> h = model.forward(t, sub, backbone_training);
        std::vector<int> locals;
        locals.reserve(rids.size());
        for (const NodeId& s : seeds) {
            const int local = sub.local_of(s);
            if (local < 0) throw InvalidSeed("task entity missing from its own subgraph");
            locals.push_back(local);
        }
        const Var gathered =
            t.embedding_lookup(h[static_cast<size_t>(rt.entity_type)], std::move(locals));
        parts.push_back(head_forward(t, gathered, head, head_training));
        out.grouped_rows.insert(out.grouped_rows.end(), rids.begin(), rids.end());
    };

    if (!no_cutoff.empty()) run_group(no_cutoff, std::nullopt);
    for (const auto& [cutoff, rids] : by_cutoff) run_group(rids, cutoff);
    if (parts.empty()) throw EmptyInput("empty prediction batch");
    out.preds = parts.size() == 1 ? parts[0] : t.concat_rows(parts);
    return out;
}

// Scores a whole split in eval mode; returns auc or mae in original units.
double score_split(const TaskRuntime& rt, BackboneModel& model, const HeadParams& head,
                   const NeighborSamplerConfig& sampler_cfg, uint64_t seed, Split split,
                   int batch_size, int* examples_out = nullptr) {
    const std::vector<int> ids = rt.task->rows_in(split);
    if (ids.empty()) throw EmptyInput(std::string("no rows in the ") + split_name(split) +
                                      " split of task " + rt.task->name);
    std::vector<double> scores;
    std::vector<int> bin_labels;
    std::vector<double> preds, targets;
    for (size_t start = 0; start < ids.size(); start += static_cast<size_t>(batch_size)) {
        const std::vector<int> batch(
            ids.begin() + static_cast<std::ptrdiff_t>(start),
            ids.begin() + static_cast<std::ptrdiff_t>(
                              std::min(ids.size(), start + static_cast<size_t>(batch_size))));
        Tape t;
        const BatchPrediction bp =
            predict_batch(t, rt, model, head, sampler_cfg,
                          derive_seed(seed, static_cast<uint64_t>(start)), batch, false, false);
        const Tensor& logits = t.value(bp.preds);
        for (size_t i = 0; i < bp.grouped_rows.size(); ++i) {
            const TaskRow& row = rt.task->rows[static_cast<size_t>(bp.grouped_rows[i])];
            const double raw = logits.at(static_cast<int>(i), 0);
            if (rt.task->label_kind == LabelKind::Binary) {
                scores.push_back(stable_sigmoid(raw));
                bin_labels.push_back(static_cast<int>(row.label));
            } else {
                preds.push_back(raw * rt.label_std + rt.label_mean);
                targets.push_back(row.label);
            }
        }
    }
    if (examples_out) *examples_out = static_cast<int>(ids.size());
    return rt.task->label_kind == LabelKind::Binary ? auc_roc(scores, bin_labels)
                                                    : mae(preds, targets);
}

nlohmann::json base_manifest(const char* kind, const BackboneConfig& bb,
                             const AttributeEncoders& enc, const DatabaseSchema& schema) {
    nlohmann::json m;
    m["kind"] = kind;
    m["backbone"] = bb.to_json();
    m["encoders"] = enc.to_json();
    m["schema_hash"] = schema_fingerprint(schema);
    return m;
}

void check_backbone_compat(const Checkpoint& ck, const BackboneConfig& bb,
                           const DatabaseSchema& schema) {
    if (!ck.manifest.contains("backbone") || !ck.manifest.contains("encoders") ||
        !ck.manifest.contains("schema_hash"))
        throw VersionMismatch("checkpoint manifest is missing model sections");
    if (ck.manifest.at("backbone") != bb.to_json())
        throw VersionMismatch("checkpoint was produced by a different backbone configuration");
    if (ck.manifest.at("schema_hash").get<std::string>() != schema_fingerprint(schema))
        throw VersionMismatch("checkpoint was produced against a different schema");
}

}  // namespace

const char* label_kind_name(LabelKind k) {
    return k == LabelKind::Binary ? "binary" : "regression";
}

const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        default: return "test";
    }
}

const char* regime_name(Regime r) {
    switch (r) {
        case Regime::Baseline: return "baseline";
        case Regime::FrozenPretrained: return "frozen";
        default: return "finetune";
    }
}

LabelKind label_kind_from_name(const std::string& s) {
    if (s == "binary") return LabelKind::Binary;
    if (s == "regression") return LabelKind::Regression;
    throw ParseError("unknown label kind '" + s + "'");
}

Regime regime_from_name(const std::string& s) {
    if (s == "baseline") return Regime::Baseline;
    if (s == "frozen") return Regime::FrozenPretrained;
    if (s == "finetune") return Regime::PretrainedFinetuned;
    throw ParseError("unknown regime '" + s + "'");
}

std::vector<int> TaskTable::rows_in(Split s) const {
    std::vector<int> out;
    for (size_t i = 0; i < rows.size(); ++i)
        if (rows[i].split == s) out.push_back(static_cast<int>(i));
    return out;
}

TaskTable load_task_table(const std::string& csv_path, std::string task_name,
                          std::string entity_table, LabelKind kind, const Database& db) {
    const std::vector<std::vector<std::string>> cells = read_csv(csv_path);
    if (cells.empty()) throw ParseError(csv_path + " has no header row");
    const std::vector<std::string>& header = cells[0];
    int key_col = -1, label_col = -1, time_col = -1, split_col = -1;
    for (size_t c = 0; c < header.size(); ++c) {
        if (header[c] == "entity_key")
            key_col = static_cast<int>(c);
        else if (header[c] == "label")
            label_col = static_cast<int>(c);
        else if (header[c] == "timestamp")
            time_col = static_cast<int>(c);
        else if (header[c] == "split")
            split_col = static_cast<int>(c);
        else
            throw UnknownColumn(csv_path + " has unexpected column '" + header[c] + "'");
    }
    if (key_col < 0 || label_col < 0)
        throw ParseError(csv_path + " needs entity_key and label columns");

    TaskTable task;
    task.name = std::move(task_name);
    task.entity_table = std::move(entity_table);
    task.label_kind = kind;
    for (size_t r = 1; r < cells.size(); ++r) {
        const auto& line = cells[r];
        if (line.size() != header.size())
            throw ParseError(csv_path + " row " + std::to_string(r) + " has " +
                             std::to_string(line.size()) + " fields, expected " +
                             std::to_string(header.size()));
        const std::string where = csv_path + " row " + std::to_string(r);
        TaskRow row;
        row.entity_key = Value::key(line[static_cast<size_t>(key_col)]);
        const Value label = parse_cell(line[static_cast<size_t>(label_col)],
                                       Attribute{"label", SemanticType::Numerical, false, ""},
                                       where);
        if (label.is_null()) throw ParseError(where + " has an empty label");
        row.label = label.as_number();
        if (kind == LabelKind::Binary && row.label != 0.0 && row.label != 1.0)
            throw ParseError(where + " has non-binary label " +
                             line[static_cast<size_t>(label_col)]);
        if (time_col >= 0 && !line[static_cast<size_t>(time_col)].empty())
            row.timestamp = parse_timestamp(line[static_cast<size_t>(time_col)], where);
        if (split_col >= 0) {
            const std::string& s = line[static_cast<size_t>(split_col)];
            if (s == "train" || s.empty())
                row.split = Split::Train;
            else if (s == "val")
                row.split = Split::Val;
            else if (s == "test")
                row.split = Split::Test;
            else
                throw ParseError(where + " has unknown split '" + s + "'");
        }
        task.rows.push_back(std::move(row));
    }

    // keys must resolve against the entity table
    const int ti = db.schema.table_index(task.entity_table);
    const int pk = db.schema.tables[static_cast<size_t>(ti)].primary_key_index();
    std::unordered_map<std::string, bool> keys;
    for (const Row& row : db.tables[static_cast<size_t>(ti)])
        keys.emplace(row.values[static_cast<size_t>(pk)].as_key(), true);
    for (const TaskRow& row : task.rows)
        if (!keys.count(row.entity_key.as_key()))
            throw IntegrityError("task " + task.name + " references unknown " +
                                 task.entity_table + " key '" + row.entity_key.as_key() +
                                 "'");
    return task;
}

void write_task_table(const TaskTable& task, const std::string& csv_path) {
    std::vector<std::vector<std::string>> cells;
    cells.push_back({"entity_key", "label", "timestamp", "split"});
    for (const TaskRow& row : task.rows) {
        std::vector<std::string> line(4);
        line[0] = row.entity_key.as_key();
        line[1] = format_cell(Value::number(row.label));
        line[2] = row.timestamp ? format_cell(Value::time(*row.timestamp)) : "";
        line[3] = split_name(row.split);
        cells.push_back(std::move(line));
    }
    write_csv(csv_path, cells);
}

void PretrainConfig::validate() const {
    if (lr <= 0) throw ParseError("learning rate must be positive");
    if (max_steps < 1) throw ParseError("max_steps must be at least 1");
    if (val_every < 1) throw ParseError("val_every must be at least 1");
    if (patience < 1) throw ParseError("patience must be at least 1");
    if (val_samples < 1) throw ParseError("val_samples must be at least 1");
    if (corruption.p < 0 || corruption.p > 1)
        throw ParseError("corruption probability must lie in [0, 1]");
    if (negatives.n_max < 1) throw ParseError("n_max must be at least 1");
    if (time_limit_seconds < 0) throw ParseError("time limit cannot be negative");
}

void FinetuneConfig::validate() const {
    if (lr <= 0) throw ParseError("learning rate must be positive");
    if (max_steps < 1) throw ParseError("max_steps must be at least 1");
    if (val_every < 1) throw ParseError("val_every must be at least 1");
    if (patience < 1) throw ParseError("patience must be at least 1");
    if (batch_size < 1) throw ParseError("batch_size must be at least 1");
    if (head_hidden < 1) throw ParseError("head_hidden must be at least 1");
    if (time_limit_seconds < 0) throw ParseError("time limit cannot be negative");
}

nlohmann::json MetricsRecord::to_json() const {
    return {{"step", step},
            {"split", split},
            {"metric", metric},
            {"value", value},
            {"wall_ms", wall_ms}};
}

void write_metrics_jsonl(const std::vector<MetricsRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    for (const MetricsRecord& r : records) out << r.to_json().dump() << "\n";
    if (!out) throw IoError("short write to " + path);
}

std::string schema_fingerprint(const DatabaseSchema& schema) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a(schema_to_json(schema))));
    return std::string(buf);
}

PretrainOutcome pretrain(std::shared_ptr<const Database> db, const BackboneConfig& bb_cfg,
                         const PretrainConfig& cfg) {
    bb_cfg.validate();
    cfg.validate();
    const auto t0 = Clock::now();
    const HeteroGraph graph = build_graph(db);

    BackboneModel model(bb_cfg);
    model.encoders().fit(*db);
    const uint64_t init_seed = derive_seed(cfg.seed, 0xA11);
    const uint64_t train_master = derive_seed(cfg.seed, 0x7A1);
    const uint64_t val_master = derive_seed(cfg.seed, 0x7A2);
    model.build(db->schema, init_seed);
    const ContrastiveParams ctr =
        build_contrastive_params(db->schema, bb_cfg.hidden_dim, model.params(), init_seed);

    std::vector<TableMarginals> margs;
    margs.reserve(db->schema.tables.size());
    for (const TableSchema& table : db->schema.tables)
        margs.push_back(table_marginals(*db, table.name));

    HgSamplerConfig samp = cfg.sampler;
    if (samp.seed_type.empty()) samp.seed_type = pick_seed_type(db->schema);

    AdamConfig acfg;
    acfg.lr = cfg.lr;
    Adam opt(acfg);

    PretrainOutcome out;
    auto record = [&](int step, const char* split, const char* metric, double value) {
        out.metrics.push_back({step, split, metric, value, ms_since(t0)});
    };

    auto validation_loss = [&](int round) {
        double acc = 0.0;
        for (int j = 0; j < cfg.val_samples; ++j) {
            const uint64_t vs =
                derive_seed(val_master, static_cast<uint64_t>(round) * 1000003u +
                                            static_cast<uint64_t>(j));
            HgSamplerConfig sc = samp;
            sc.rng_seed = derive_seed(vs, 0);
            const Subgraph sub = hg_sample(graph, sc);
            CorruptionConfig cc = cfg.corruption;
            cc.rng_seed = derive_seed(vs, 1);
            const auto corrupted = corrupt_subgraph_rows(sub, margs, cc);
            Tape t;
            const auto h = model.forward(t, sub, false);
            const auto hc = model.forward_rows(t, sub, corrupted, false);
            Rng nrng(derive_seed(vs, 2));
            const Var loss =
                combined_loss(t, sub, h, hc, ctr, cfg.negatives, nrng);
            acc += t.value(loss).scalar_value();
        }
        return acc / static_cast<double>(cfg.val_samples);
    };

    out.initial_val_loss = validation_loss(0);
    out.best_val_loss = out.initial_val_loss;
    out.best_step = 0;
    record(0, "val", "loss", out.initial_val_loss);
    Snapshot best = take_snapshot(model.params(), 0);

    int rounds_since_best = 0;
    int round = 1;
    for (int step = 1; step <= cfg.max_steps; ++step) {
        const uint64_t ss = derive_seed(train_master, static_cast<uint64_t>(step));
        HgSamplerConfig sc = samp;
        sc.rng_seed = derive_seed(ss, 0);
        const Subgraph sub = hg_sample(graph, sc);
        CorruptionConfig cc = cfg.corruption;
        cc.rng_seed = derive_seed(ss, 1);
        const auto corrupted = corrupt_subgraph_rows(sub, margs, cc);

        Tape t;
        const auto h = model.forward(t, sub, true);
        const auto hc = model.forward_rows(t, sub, corrupted, true);
        Rng nrng(derive_seed(ss, 2));
        const LossPlan plan = draw_loss_plan(sub, cfg.negatives, nrng);
        const Var loss = combined_loss(t, sub, h, hc, ctr, plan);
        record(step, "train", "loss", t.value(loss).scalar_value());
        if (!plan.all_empty()) {
            const GradMap grads = t.backward(loss, model.params());
            opt.step(model.params(), grads);
        }
        out.steps_run = step;

        if (cfg.time_limit_seconds > 0 &&
            ms_since(t0) > cfg.time_limit_seconds * 1000.0) {
            out.time_limit_hit = true;
            break;
        }
        if (step % cfg.val_every == 0) {
            const double v = validation_loss(round++);
            record(step, "val", "loss", v);
            if (v < out.best_val_loss) {
                out.best_val_loss = v;
                out.best_step = step;
                best = take_snapshot(model.params(), step);
                rounds_since_best = 0;
            } else if (++rounds_since_best >= cfg.patience) {
                break;
            }
        }
    }

    nlohmann::json manifest = base_manifest("pretrain", bb_cfg, model.encoders(), db->schema);
    manifest["seed"] = cfg.seed;
    manifest["best_step"] = out.best_step;
    manifest["corruption_p"] = cfg.corruption.p;
    manifest["n_max"] = cfg.negatives.n_max;
    manifest["time_limit_hit"] = out.time_limit_hit;
    out.checkpoint = checkpoint_from_snapshot(model.params(), best, std::move(manifest));
    return out;
}

FinetuneOutcome finetune(std::shared_ptr<const Database> db, const TaskTable& task,
                         const std::optional<Checkpoint>& init, const BackboneConfig& bb_cfg,
                         const FinetuneConfig& cfg) {
    bb_cfg.validate();
    cfg.validate();
    if (cfg.regime == Regime::Baseline && init.has_value())
        throw RegimeMismatch("the baseline regime starts from scratch; drop the checkpoint");
    if (cfg.regime != Regime::Baseline && !init.has_value())
        throw RegimeMismatch(std::string("the ") + regime_name(cfg.regime) +
                             " regime needs a pretrained checkpoint");

    const auto t0 = Clock::now();
    const HeteroGraph graph = build_graph(db);

    BackboneModel model(bb_cfg);
    const uint64_t init_seed = derive_seed(cfg.seed, 0xF17);
    if (init.has_value()) {
        check_backbone_compat(*init, bb_cfg, db->schema);
        model.encoders() = AttributeEncoders::from_json(init->manifest.at("encoders"));
        model.build(db->schema, init_seed);
        for (const auto& p : model.params().all()) {
            const Tensor* t = init->find(p->name);
            if (!t)
                throw VersionMismatch("checkpoint is missing parameter '" + p->name + "'");
            if (!t->same_shape(p->tensor))
                throw VersionMismatch("checkpoint parameter '" + p->name +
                                      "' has shape " + shape_str(*t));
            p->tensor = *t;
        }
    } else {
        model.encoders().fit(*db);
        model.build(db->schema, init_seed);
    }
    const HeadParams head =
        build_head(model.params(), bb_cfg.hidden_dim, cfg.head_hidden, init_seed);
    if (cfg.regime == Regime::FrozenPretrained) {
        for (const auto& p : model.params().all())
            if (p->name.rfind("head.", 0) != 0) p->trainable = false;
    }
    const bool backbone_training = cfg.regime != Regime::FrozenPretrained;

    TaskRuntime rt = bind_task(task, graph, *db);
    const std::vector<int> train_ids = rt.task->rows_in(Split::Train);
    if (train_ids.empty()) throw EmptyInput("task has no training rows");
    const std::vector<int> val_ids = rt.task->rows_in(Split::Val);
    const bool maximize = task.label_kind == LabelKind::Binary;
    const char* metric_name = maximize ? "auc" : "mae";

    AdamConfig acfg;
    acfg.lr = cfg.lr;
    Adam opt(acfg);

    const uint64_t train_master = derive_seed(cfg.seed, 0x77A);
    const uint64_t val_master = derive_seed(cfg.seed, 0x77B);

    FinetuneOutcome out;
    auto record = [&](int step, const char* split, const char* metric, double value) {
        out.metrics.push_back({step, split, metric, value, ms_since(t0)});
    };

    auto validate_now = [&](int round) {
        return score_split(rt, model, head, cfg.sampler,
                           derive_seed(val_master, static_cast<uint64_t>(round)), Split::Val,
                           cfg.batch_size);
    };

    Snapshot best = take_snapshot(model.params(), 0);
    int rounds_since_best = 0;
    int round = 0;
    if (!val_ids.empty()) {
        out.validated = true;
        out.best_val_metric = validate_now(round++);
        record(0, "val", metric_name, out.best_val_metric);
    }

    for (int step = 1; step <= cfg.max_steps; ++step) {
        const uint64_t ss = derive_seed(train_master, static_cast<uint64_t>(step));
        Rng brng(derive_seed(ss, 9));
        const auto picks = brng.sample_without_replacement(
            train_ids.size(),
            std::min<size_t>(train_ids.size(), static_cast<size_t>(cfg.batch_size)));
        std::vector<int> batch;
        batch.reserve(picks.size());
        for (const auto i : picks) batch.push_back(train_ids[static_cast<size_t>(i)]);

        Tape t;
        const BatchPrediction bp = predict_batch(t, rt, model, head, cfg.sampler,
                                                 derive_seed(ss, 1), batch,
                                                 backbone_training, true);
        Var loss;
        if (task.label_kind == LabelKind::Binary) {
            std::vector<double> targets;
            targets.reserve(bp.grouped_rows.size());
            for (const int rid : bp.grouped_rows)
                targets.push_back(rt.task->rows[static_cast<size_t>(rid)].label);
            loss = t.sigmoid_cross_entropy(bp.preds, std::move(targets));
        } else {
            Tensor target(static_cast<int>(bp.grouped_rows.size()), 1);
            for (size_t i = 0; i < bp.grouped_rows.size(); ++i)
                target.at(static_cast<int>(i), 0) =
                    (rt.task->rows[static_cast<size_t>(bp.grouped_rows[i])].label -
                     rt.label_mean) /
                    rt.label_std;
            loss = t.mse(bp.preds, t.input(std::move(target)));
        }
        record(step, "train", "loss", t.value(loss).scalar_value());
        const GradMap grads = t.backward(loss, model.params());
        opt.step(model.params(), grads);
        out.steps_run = step;

        if (cfg.time_limit_seconds > 0 &&
            ms_since(t0) > cfg.time_limit_seconds * 1000.0) {
            out.time_limit_hit = true;
            break;
        }
        if (out.validated && step % cfg.val_every == 0) {
            const double v = validate_now(round++);
            record(step, "val", metric_name, v);
            const bool improved = maximize ? v > out.best_val_metric : v < out.best_val_metric;
            if (improved) {
                out.best_val_metric = v;
                out.best_step = step;
                best = take_snapshot(model.params(), step);
                rounds_since_best = 0;
            } else if (++rounds_since_best >= cfg.patience) {
                break;
            }
        }
    }

    if (out.validated)
        restore_snapshot(model.params(), best);
    else
        best = take_snapshot(model.params(), out.steps_run);

    nlohmann::json manifest =
        base_manifest("finetune", bb_cfg, model.encoders(), db->schema);
    manifest["seed"] = cfg.seed;
    manifest["regime"] = regime_name(cfg.regime);
    manifest["head_hidden"] = cfg.head_hidden;
    manifest["best_step"] = out.best_step;
    manifest["task"] = {{"name", task.name},
                        {"entity_table", task.entity_table},
                        {"label_kind", label_kind_name(task.label_kind)}};
    manifest["label_mean"] = rt.label_mean;
    manifest["label_std"] = rt.label_std;
    manifest["fanout"] = cfg.sampler.fanout;
    manifest["depth"] = cfg.sampler.depth;
    out.checkpoint = checkpoint_from_snapshot(model.params(), best, std::move(manifest));
    return out;
}

EvalResult evaluate_checkpoint(std::shared_ptr<const Database> db, const Checkpoint& ck,
                               const TaskTable& task, Split split) {
    if (!ck.manifest.contains("kind") ||
        ck.manifest.at("kind").get<std::string>() != "finetune")
        throw VersionMismatch("evaluation needs a fine-tuned checkpoint");
    const BackboneConfig bb = BackboneConfig::from_json(ck.manifest.at("backbone"));
    check_backbone_compat(ck, bb, db->schema);
    const auto& tj = ck.manifest.at("task");
    if (tj.at("entity_table").get<std::string>() != task.entity_table ||
        tj.at("label_kind").get<std::string>() != label_kind_name(task.label_kind))
        throw VersionMismatch("checkpoint was fine-tuned for a different task shape");

    const HeteroGraph graph = build_graph(db);
    BackboneModel model(bb);
    model.encoders() = AttributeEncoders::from_json(ck.manifest.at("encoders"));
    model.build(db->schema, 0);
    const HeadParams head = build_head(model.params(), bb.hidden_dim,
                                       ck.manifest.at("head_hidden").get<int>(), 0);
    load_into_store(ck, model.params());

    TaskRuntime rt = bind_task(task, graph, *db);
    rt.label_mean = ck.manifest.at("label_mean").get<double>();
    rt.label_std = ck.manifest.at("label_std").get<double>();

    NeighborSamplerConfig nc;
    if (ck.manifest.contains("fanout")) nc.fanout = ck.manifest.at("fanout").get<int>();
    if (ck.manifest.contains("depth")) nc.depth = ck.manifest.at("depth").get<int>();

    EvalResult res;
    res.metric = task.label_kind == LabelKind::Binary ? "auc" : "mae";
    res.value = score_split(rt, model, head, nc, 0xE7A1, split, 256, &res.examples);
    return res;
}

}  // namespace relcp
