#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "relcp/training.hpp"

namespace relcp {

// Synthetic three-table store: users place events on items. A hidden binary
// group per user drives event amounts, channel preference, and both task
// labels, so entity embeddings that summarize a user's events carry signal.
struct SynthConfig {
    int n_users = 250;
    int n_items = 120;
    int n_events = 2200;
    // 1 = noiseless labels; lower values flip binary labels with probability
    // (1 - signal) / 2 and add (1 - signal)-scaled noise to spend targets.
    double signal = 0.9;
    uint64_t seed = 0;
};

struct SynthDataset {
    std::shared_ptr<Database> db;
    TaskTable engagement;  // binary, entity = users
    TaskTable spend;       // regression, entity = users
    int64_t suggested_pretrain_cutoff = 0;
    std::vector<int> user_group;  // hidden generator state, for tests
};

SynthDataset gen_synth(const SynthConfig& cfg);

// schema.json, one CSV per table, task_<name>.csv, and dataset.json listing
// the pieces.
void write_synth_dataset(const SynthDataset& ds, const std::string& dir);

struct TaskRef {
    std::string name;
    std::string file;  // relative to the dataset directory
    std::string entity_table;
    LabelKind label_kind = LabelKind::Binary;
};

struct DatasetManifest {
    std::string schema_file;
    std::vector<TaskRef> tasks;
    int64_t suggested_pretrain_cutoff = 0;
};

DatasetManifest read_dataset_manifest(const std::string& dir);

}  // namespace relcp
