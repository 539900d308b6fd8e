#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "relcp/backbone.hpp"
#include "relcp/checkpoint.hpp"
#include "relcp/contrastive.hpp"
#include "relcp/metrics.hpp"

namespace relcp {

enum class LabelKind { Binary, Regression };
enum class Split { Train, Val, Test };
enum class Regime { Baseline, FrozenPretrained, PretrainedFinetuned };

const char* label_kind_name(LabelKind k);
const char* split_name(Split s);
const char* regime_name(Regime r);
LabelKind label_kind_from_name(const std::string& s);
Regime regime_from_name(const std::string& s);

struct TaskRow {
    Value entity_key;
    double label = 0.0;
    std::optional<int64_t> timestamp;
    Split split = Split::Train;
};

// Entity-level prediction targets: each row names a PK of entity_table, a
// label, and optionally the time the prediction is made at.
struct TaskTable {
    std::string name;
    std::string entity_table;
    std::string entity_fk_column = "entity_key";
    LabelKind label_kind = LabelKind::Binary;
    std::vector<TaskRow> rows;

    std::vector<int> rows_in(Split s) const;
};

// CSV with header entity_key,label[,timestamp,split]. Keys must resolve to
// PKs of entity_table; Binary labels must be 0 or 1.
TaskTable load_task_table(const std::string& csv_path, std::string task_name,
                          std::string entity_table, LabelKind kind, const Database& db);
void write_task_table(const TaskTable& task, const std::string& csv_path);

struct PretrainConfig {
    double lr = 1e-3;
    int max_steps = 2000;
    int val_every = 50;
    int patience = 10;
    int val_samples = 50;
    HgSamplerConfig sampler;
    CorruptionConfig corruption;
    NegativeConfig negatives;
    double time_limit_seconds = 0.0;  // 0 disables the limit
    uint64_t seed = 0;

    void validate() const;
};

struct FinetuneConfig {
    double lr = 1e-4;
    int max_steps = 2000;
    int val_every = 100;
    int patience = 5;
    int batch_size = 512;
    NeighborSamplerConfig sampler;
    Regime regime = Regime::Baseline;
    int head_hidden = 128;
    double time_limit_seconds = 0.0;
    uint64_t seed = 0;

    void validate() const;
};

struct MetricsRecord {
    int step = 0;
    std::string split;
    std::string metric;
    double value = 0.0;
    double wall_ms = 0.0;

    nlohmann::json to_json() const;
};

void write_metrics_jsonl(const std::vector<MetricsRecord>& records, const std::string& path);

struct PretrainOutcome {
    Checkpoint checkpoint;  // best-validation parameters
    std::vector<MetricsRecord> metrics;
    int best_step = 0;
    double initial_val_loss = 0.0;
    double best_val_loss = 0.0;
    int steps_run = 0;
    bool time_limit_hit = false;
};

// hg_sample -> clean and corrupted forward -> combined loss -> Adam, with
// periodic validation on freshly sampled subgraphs and a patience-based stop.
PretrainOutcome pretrain(std::shared_ptr<const Database> db, const BackboneConfig& bb_cfg,
                         const PretrainConfig& cfg);

struct FinetuneOutcome {
    Checkpoint checkpoint;  // backbone + head at the best validation round
    std::vector<MetricsRecord> metrics;
    int best_step = 0;
    double best_val_metric = 0.0;
    bool validated = false;
    int steps_run = 0;
    bool time_limit_hit = false;
};

// Per step: a train batch, per-cutoff neighbor sampling seeded at the rows'
// entities, forward through backbone and head, CE or MSE. The regime decides
// initialization and which parameters stay trainable.
FinetuneOutcome finetune(std::shared_ptr<const Database> db, const TaskTable& task,
                         const std::optional<Checkpoint>& init, const BackboneConfig& bb_cfg,
                         const FinetuneConfig& cfg);

struct EvalResult {
    std::string metric;  // "auc" or "mae"
    double value = 0.0;
    int examples = 0;
};

// Rebuilds the fine-tuned model from its checkpoint and scores one split.
EvalResult evaluate_checkpoint(std::shared_ptr<const Database> db, const Checkpoint& ck,
                               const TaskTable& task, Split split);

std::string schema_fingerprint(const DatabaseSchema& schema);

}  // namespace relcp
