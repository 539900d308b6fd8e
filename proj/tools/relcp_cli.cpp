// Command-line front end: dataset generation, validation, pretraining,
// fine-tuning, evaluation, and sampler inspection.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "relcp/datagen.hpp"
#include "relcp/training.hpp"

namespace {

using namespace relcp;

std::shared_ptr<Database> load_data_dir(const std::string& dir) {
    const DatabaseSchema schema = load_schema(dir + "/schema.json");
    return std::make_shared<Database>(load_database(schema, dir));
}

TaskTable load_task_by_name(const std::string& dir, const std::string& name,
                            const Database& db) {
    const DatasetManifest manifest = read_dataset_manifest(dir);
    for (const TaskRef& ref : manifest.tasks)
        if (ref.name == name)
            return load_task_table(dir + "/" + ref.file, ref.name, ref.entity_table,
                                   ref.label_kind, db);
    throw ParseError("dataset has no task named '" + name + "'");
}

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    try {
        nlohmann::json j;
        in >> j;
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << j.dump(2) << "\n";
}

std::string file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    const std::string bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a(bytes.data(), bytes.size())));
    return buf;
}

nlohmann::json pretrain_config_json(const PretrainConfig& cfg) {
    return {{"lr", cfg.lr},
            {"max_steps", cfg.max_steps},
            {"val_every", cfg.val_every},
            {"patience", cfg.patience},
            {"val_samples", cfg.val_samples},
            {"corruption_p", cfg.corruption.p},
            {"n_max", cfg.negatives.n_max},
            {"per_type_budget", cfg.sampler.per_type_budget},
            {"iterations", cfg.sampler.iterations},
            {"seed_count", cfg.sampler.seed_count},
            {"seed_type", cfg.sampler.seed_type},
            {"time_limit_seconds", cfg.time_limit_seconds}};
}

nlohmann::json finetune_config_json(const FinetuneConfig& cfg) {
    return {{"lr", cfg.lr},
            {"max_steps", cfg.max_steps},
            {"val_every", cfg.val_every},
            {"patience", cfg.patience},
            {"batch_size", cfg.batch_size},
            {"head_hidden", cfg.head_hidden},
            {"fanout", cfg.sampler.fanout},
            {"depth", cfg.sampler.depth},
            {"regime", regime_name(cfg.regime)},
            {"time_limit_seconds", cfg.time_limit_seconds}};
}

struct CommonTrainArgs {
    std::string data_dir;
    std::string out_path;
    std::string config_path;
    std::string metrics_path;
    uint64_t seed = 0;
    int max_steps = -1;  // -1 keeps the config default
};

nlohmann::json maybe_config(const std::string& path) {
    return path.empty() ? nlohmann::json::object() : read_json_file(path);
}

BackboneConfig backbone_from(const nlohmann::json& cfg) {
    return cfg.contains("backbone") ? BackboneConfig::from_json(cfg.at("backbone"))
                                    : BackboneConfig{};
}

int run_validate(const std::string& data_dir) {
    const auto db = load_data_dir(data_dir);
    const IntegrityReport report = validate_integrity(*db);
    nlohmann::json out;
    out["tables"] = nlohmann::json::object();
    for (size_t i = 0; i < db->schema.tables.size(); ++i)
        out["tables"][db->schema.tables[i].name] = db->tables[i].size();
    out["clean"] = report.clean();
    out["duplicate_pks"] = report.duplicate_pks.size();
    out["dangling_fks"] = report.dangling_fks.size();
    std::cout << out.dump(2) << "\n";
    if (!report.clean()) {
        std::cerr << report.describe() << "\n";
        return 2;
    }
    return 0;
}

int run_gen_synth(const SynthConfig& cfg, const std::string& out_dir) {
    const SynthDataset ds = gen_synth(cfg);
    write_synth_dataset(ds, out_dir);
    nlohmann::json out;
    out["dir"] = out_dir;
    out["users"] = ds.db->tables[0].size();
    out["items"] = ds.db->tables[1].size();
    out["events"] = ds.db->tables[2].size();
    out["task_rows"] = ds.engagement.rows.size();
    out["suggested_pretrain_cutoff"] = ds.suggested_pretrain_cutoff;
    std::cout << out.dump(2) << "\n";
    return 0;
}

int run_pretrain(const CommonTrainArgs& args, const std::string& cutoff_text) {
    auto db = load_data_dir(args.data_dir);
    if (!cutoff_text.empty()) {
        int64_t cutoff = 0;
        if (cutoff_text == "auto") {
            const DatasetManifest m = read_dataset_manifest(args.data_dir);
            cutoff = m.suggested_pretrain_cutoff;
        } else {
            cutoff = parse_timestamp(cutoff_text, "--cutoff");
        }
        db = std::make_shared<Database>(temporal_prune(*db, cutoff));
    }

    const nlohmann::json cfg_json = maybe_config(args.config_path);
    const BackboneConfig bb = backbone_from(cfg_json);
    PretrainConfig cfg;
    if (cfg_json.contains("pretrain")) {
        const auto& p = cfg_json.at("pretrain");
        if (p.contains("lr")) cfg.lr = p.at("lr").get<double>();
        if (p.contains("max_steps")) cfg.max_steps = p.at("max_steps").get<int>();
        if (p.contains("val_every")) cfg.val_every = p.at("val_every").get<int>();
        if (p.contains("patience")) cfg.patience = p.at("patience").get<int>();
        if (p.contains("val_samples")) cfg.val_samples = p.at("val_samples").get<int>();
        if (p.contains("corruption_p")) cfg.corruption.p = p.at("corruption_p").get<double>();
        if (p.contains("n_max")) cfg.negatives.n_max = p.at("n_max").get<int>();
        if (p.contains("per_type_budget"))
            cfg.sampler.per_type_budget = p.at("per_type_budget").get<int>();
        if (p.contains("iterations")) cfg.sampler.iterations = p.at("iterations").get<int>();
        if (p.contains("seed_count")) cfg.sampler.seed_count = p.at("seed_count").get<int>();
        if (p.contains("seed_type"))
            cfg.sampler.seed_type = p.at("seed_type").get<std::string>();
        if (p.contains("time_limit_seconds"))
            cfg.time_limit_seconds = p.at("time_limit_seconds").get<double>();
    }
    cfg.seed = args.seed;
    if (args.max_steps > 0) cfg.max_steps = args.max_steps;

    const PretrainOutcome out = pretrain(db, bb, cfg);
    save_checkpoint(out.checkpoint, args.out_path);
    if (!args.metrics_path.empty()) write_metrics_jsonl(out.metrics, args.metrics_path);

    nlohmann::json summary;
    summary["command"] = "pretrain";
    summary["data"] = args.data_dir;
    summary["seed"] = cfg.seed;
    summary["cutoff"] = cutoff_text;
    summary["backbone"] = bb.to_json();
    summary["config"] = pretrain_config_json(cfg);
    summary["checkpoint"] = args.out_path;
    summary["checkpoint_hash"] = file_hash(args.out_path);
    summary["checkpoint_format"] = kCheckpointFormatVersion;
    summary["steps_run"] = out.steps_run;
    summary["best_step"] = out.best_step;
    summary["initial_val_loss"] = out.initial_val_loss;
    summary["best_val_loss"] = out.best_val_loss;
    summary["time_limit_hit"] = out.time_limit_hit;
    write_json_file(args.out_path + ".run.json", summary);
    std::cout << summary.dump(2) << "\n";
    return 0;
}

int run_finetune(const CommonTrainArgs& args, const std::string& task_name,
                 const std::string& regime_text, const std::string& init_path) {
    const auto db = load_data_dir(args.data_dir);
    const TaskTable task = load_task_by_name(args.data_dir, task_name, *db);

    const nlohmann::json cfg_json = maybe_config(args.config_path);
    BackboneConfig bb = backbone_from(cfg_json);
    FinetuneConfig cfg;
    cfg.regime = regime_from_name(regime_text);
    if (cfg_json.contains("finetune")) {
        const auto& f = cfg_json.at("finetune");
        if (f.contains("lr")) cfg.lr = f.at("lr").get<double>();
        if (f.contains("max_steps")) cfg.max_steps = f.at("max_steps").get<int>();
        if (f.contains("val_every")) cfg.val_every = f.at("val_every").get<int>();
        if (f.contains("patience")) cfg.patience = f.at("patience").get<int>();
        if (f.contains("batch_size")) cfg.batch_size = f.at("batch_size").get<int>();
        if (f.contains("head_hidden")) cfg.head_hidden = f.at("head_hidden").get<int>();
        if (f.contains("fanout")) cfg.sampler.fanout = f.at("fanout").get<int>();
        if (f.contains("depth")) cfg.sampler.depth = f.at("depth").get<int>();
        if (f.contains("time_limit_seconds"))
            cfg.time_limit_seconds = f.at("time_limit_seconds").get<double>();
    }
    cfg.seed = args.seed;
    if (args.max_steps > 0) cfg.max_steps = args.max_steps;

    std::optional<Checkpoint> init;
    if (!init_path.empty()) {
        init = load_checkpoint(init_path);
        // the checkpoint's own backbone settings win unless overridden
        if (!cfg_json.contains("backbone") && init->manifest.contains("backbone"))
            bb = BackboneConfig::from_json(init->manifest.at("backbone"));
    }

    const FinetuneOutcome out = finetune(db, task, init, bb, cfg);
    save_checkpoint(out.checkpoint, args.out_path);
    if (!args.metrics_path.empty()) write_metrics_jsonl(out.metrics, args.metrics_path);

    nlohmann::json summary;
    summary["command"] = "finetune";
    summary["data"] = args.data_dir;
    summary["seed"] = cfg.seed;
    summary["task"] = task.name;
    summary["regime"] = regime_text;
    summary["init_checkpoint"] = init_path;
    if (!init_path.empty()) summary["init_checkpoint_hash"] = file_hash(init_path);
    summary["backbone"] = bb.to_json();
    summary["config"] = finetune_config_json(cfg);
    summary["checkpoint"] = args.out_path;
    summary["checkpoint_hash"] = file_hash(args.out_path);
    summary["checkpoint_format"] = kCheckpointFormatVersion;
    summary["steps_run"] = out.steps_run;
    summary["best_step"] = out.best_step;
    if (out.validated) summary["best_val_metric"] = out.best_val_metric;
    summary["time_limit_hit"] = out.time_limit_hit;
    write_json_file(args.out_path + ".run.json", summary);
    std::cout << summary.dump(2) << "\n";
    return 0;
}

int run_evaluate(const std::string& data_dir, const std::string& task_name,
                 const std::string& ck_path, const std::string& split_text) {
    const auto db = load_data_dir(data_dir);
    const TaskTable task = load_task_by_name(data_dir, task_name, *db);
    const Checkpoint ck = load_checkpoint(ck_path);
    Split split;
    if (split_text == "train")
        split = Split::Train;
    else if (split_text == "val")
        split = Split::Val;
    else if (split_text == "test")
        split = Split::Test;
    else
        throw ParseError("unknown split '" + split_text + "'");
    const EvalResult res = evaluate_checkpoint(db, ck, task, split);
    nlohmann::json out;
    out["task"] = task.name;
    out["split"] = split_text;
    out["metric"] = res.metric;
    out["value"] = res.value;
    out["examples"] = res.examples;
    std::cout << out.dump(2) << "\n";
    return 0;
}

int run_inspect_sample(const std::string& data_dir, uint64_t seed, int budget,
                       int iterations) {
    const auto db = load_data_dir(data_dir);
    const HeteroGraph graph = build_graph(db);
    HgSamplerConfig cfg;
    cfg.per_type_budget = budget;
    cfg.iterations = iterations;
    cfg.seed_type = pick_seed_type(db->schema);
    cfg.rng_seed = seed;
    const Subgraph sub = hg_sample(graph, cfg);
    std::cout << sub.summary() << "\n";
    return 0;
}

int dispatch(const std::function<int()>& body) {
    try {
        return body();
    } catch (const RegimeMismatch& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const SchemaError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const IntegrityError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const UnknownColumn& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const CorruptPayload& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const VersionMismatch& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"relational contrastive pretraining toolkit"};
    app.require_subcommand(1);

    // accepted for interface compatibility; execution is single-threaded
    if (const char* threads = std::getenv("RELCP_THREADS")) (void)threads;

    std::string data_dir, out_path, config_path, metrics_path;
    uint64_t seed = 0;

    auto* validate = app.add_subcommand("validate", "check schema and referential integrity");
    validate->add_option("--data", data_dir, "dataset directory")->required();

    SynthConfig synth;
    std::string synth_out;
    auto* gen = app.add_subcommand("gen-synth", "generate a synthetic dataset");
    gen->add_option("--out", synth_out, "output directory")->required();
    gen->add_option("--users", synth.n_users, "user count");
    gen->add_option("--items", synth.n_items, "item count");
    gen->add_option("--events", synth.n_events, "event count");
    gen->add_option("--signal", synth.signal, "label signal strength in [0,1]");
    gen->add_option("--seed", synth.seed, "generator seed");

    CommonTrainArgs pre_args;
    std::string cutoff_text;
    auto* pre = app.add_subcommand("pretrain", "contrastive pretraining");
    pre->add_option("--data", pre_args.data_dir, "dataset directory")->required();
    pre->add_option("--out", pre_args.out_path, "checkpoint output path")->required();
    pre->add_option("--config", pre_args.config_path, "JSON config file");
    pre->add_option("--metrics", pre_args.metrics_path, "metrics JSONL output path");
    pre->add_option("--seed", pre_args.seed, "training seed");
    pre->add_option("--max-steps", pre_args.max_steps, "step cap, overrides config");
    pre->add_option("--cutoff", cutoff_text,
                    "drop rows newer than this time first ('auto' uses the dataset hint)");

    CommonTrainArgs ft_args;
    std::string task_name, regime_text = "baseline", init_path;
    auto* ft = app.add_subcommand("finetune", "train a task head");
    ft->add_option("--data", ft_args.data_dir, "dataset directory")->required();
    ft->add_option("--task", task_name, "task name from dataset.json")->required();
    ft->add_option("--out", ft_args.out_path, "checkpoint output path")->required();
    ft->add_option("--regime", regime_text, "baseline | frozen | finetune")
        ->check(CLI::IsMember({"baseline", "frozen", "finetune"}));
    ft->add_option("--checkpoint", init_path, "pretrained checkpoint to start from");
    ft->add_option("--config", ft_args.config_path, "JSON config file");
    ft->add_option("--metrics", ft_args.metrics_path, "metrics JSONL output path");
    ft->add_option("--seed", ft_args.seed, "training seed");
    ft->add_option("--max-steps", ft_args.max_steps, "step cap, overrides config");

    std::string eval_task, eval_ck, eval_split = "test";
    auto* ev = app.add_subcommand("evaluate", "score a fine-tuned checkpoint");
    ev->add_option("--data", data_dir, "dataset directory")->required();
    ev->add_option("--task", eval_task, "task name from dataset.json")->required();
    ev->add_option("--checkpoint", eval_ck, "fine-tuned checkpoint")->required();
    ev->add_option("--split", eval_split, "train | val | test");

    int budget = 64, iterations = 3;
    auto* ins = app.add_subcommand("inspect-sample", "print one sampled subgraph");
    ins->add_option("--data", data_dir, "dataset directory")->required();
    ins->add_option("--seed", seed, "sampler seed");
    ins->add_option("--budget", budget, "per-type node budget");
    ins->add_option("--iterations", iterations, "expansion rounds");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // help exits 0; every other parse problem is a usage error
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (validate->parsed()) return dispatch([&] { return run_validate(data_dir); });
    if (gen->parsed()) return dispatch([&] { return run_gen_synth(synth, synth_out); });
    if (pre->parsed()) return dispatch([&] { return run_pretrain(pre_args, cutoff_text); });
    if (ft->parsed())
        return dispatch([&] { return run_finetune(ft_args, task_name, regime_text, init_path); });
    if (ev->parsed())
        return dispatch([&] { return run_evaluate(data_dir, eval_task, eval_ck, eval_split); });
    if (ins->parsed())
        return dispatch([&] { return run_inspect_sample(data_dir, seed, budget, iterations); });
    return 1;
}
