#include "relcp/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "relcp/errors.hpp"
#include "relcp/rng.hpp"

namespace relcp {

namespace {

constexpr int64_t kTsBase = 1609459200;   // 2021-01-01T00:00:00
constexpr int64_t kTsRange = 31536000;    // one year of seconds

DatabaseSchema synth_schema() {
    DatabaseSchema s;
    TableSchema users;
    users.name = "users";
    users.attributes = {
        {"user_id", SemanticType::PrimaryKey, false, ""},
        {"age", SemanticType::Numerical, false, ""},
        {"country", SemanticType::Categorical, false, ""},
        {"interests", SemanticType::MultiCategorical, true, ""},
        {"bio", SemanticType::Text, true, ""},
    };
    TableSchema items;
    items.name = "items";
    items.attributes = {
        {"item_id", SemanticType::PrimaryKey, false, ""},
        {"category", SemanticType::Categorical, false, ""},
        {"price", SemanticType::Numerical, false, ""},
    };
    TableSchema events;
    events.name = "events";
    events.attributes = {
        {"event_id", SemanticType::PrimaryKey, false, ""},
        {"user_id", SemanticType::ForeignKey, false, "users"},
        {"item_id", SemanticType::ForeignKey, true, "items"},
        {"amount", SemanticType::Numerical, false, ""},
        {"channel", SemanticType::Categorical, true, ""},
        {"ts", SemanticType::Timestamp, false, ""},
    };
    events.time_attribute = "ts";
    s.tables = {users, items, events};
    s.validate();
    return s;
}

double round_to(double x, double unit) { return std::round(x / unit) * unit; }

const std::vector<std::string>& group_interest_pool(int g) {
    static const std::vector<std::string> pool0 = {"sports", "travel", "food", "hiking"};
    static const std::vector<std::string> pool1 = {"tech", "music", "books", "gaming"};
    return g == 0 ? pool0 : pool1;
}

const std::vector<std::string>& group_bio_words(int g) {
    static const std::vector<std::string> w0 = {"weekend", "trail",  "recipe", "outdoors",
                                                "match",   "stadium", "market", "camping"};
    static const std::vector<std::string> w1 = {"gadget", "concert", "novel",  "startup",
                                                "guitar", "console", "review", "keyboard"};
    return g == 0 ? w0 : w1;
}

std::string make_bio(int g, Rng& rng) {
    const auto& own = group_bio_words(g);
    const auto& other = group_bio_words(1 - g);
    const int n = 3 + static_cast<int>(rng.bounded(4));
    std::string out;
    for (int i = 0; i < n; ++i) {
        const auto& pool = rng.uniform() < 0.75 ? own : other;
        if (i) out += ' ';
        out += pool[rng.bounded(pool.size())];
    }
    return out;
}

}  // namespace

SynthDataset gen_synth(const SynthConfig& cfg) {
    if (cfg.n_users < 1 || cfg.n_items < 1 || cfg.n_events < 1)
        throw ParseError("synthetic table sizes must be positive");
    if (cfg.signal < 0.0 || cfg.signal > 1.0)
        throw ParseError("signal must lie in [0, 1]");

    SynthDataset ds;
    ds.db = std::make_shared<Database>();
    ds.db->schema = synth_schema();
    ds.db->tables.resize(3);

    static const std::vector<std::string> countries0 = {"us", "uk", "de", "fr"};
    static const std::vector<std::string> countries1 = {"de", "fr", "jp", "br"};
    static const std::vector<std::string> item_cats = {"electronics", "clothing", "grocery",
                                                       "toys",        "sports",   "media"};
    static const std::vector<std::string> channels = {"web", "app", "store"};

    // users
    Rng urng(derive_seed(cfg.seed, 1));
    ds.user_group.resize(static_cast<size_t>(cfg.n_users));
    auto& users = ds.db->tables[0];
    for (int i = 0; i < cfg.n_users; ++i) {
        const int g = urng.uniform() < 0.5 ? 0 : 1;
        ds.user_group[static_cast<size_t>(i)] = g;
        Row r;
        r.values.push_back(Value::key("u" + std::to_string(i + 1)));
        const double age =
            std::clamp(30.0 + 10.0 * g + urng.gaussian() * 5.0, 18.0, 80.0);
        r.values.push_back(Value::number(std::round(age)));
        const auto& cs = g == 0 ? countries0 : countries1;
        r.values.push_back(Value::category(cs[urng.bounded(cs.size())]));
        if (urng.uniform() < 0.15) {
            r.values.push_back(Value::null());
        } else {
            const int k = 1 + static_cast<int>(urng.bounded(3));
            std::vector<std::string> toks;
            for (int j = 0; j < k; ++j) {
                const auto& pool = urng.uniform() < 0.7 ? group_interest_pool(g)
                                                        : group_interest_pool(1 - g);
                toks.push_back(pool[urng.bounded(pool.size())]);
            }
            r.values.push_back(Value::multi_category(std::move(toks)));
        }
        if (urng.uniform() < 0.2)
            r.values.push_back(Value::null());
        else
            r.values.push_back(Value::text(make_bio(g, urng)));
        users.push_back(std::move(r));
    }

    // items
    Rng irng(derive_seed(cfg.seed, 2));
    auto& items = ds.db->tables[1];
    for (int i = 0; i < cfg.n_items; ++i) {
        Row r;
        r.values.push_back(Value::key("i" + std::to_string(i + 1)));
        r.values.push_back(Value::category(item_cats[irng.bounded(item_cats.size())]));
        r.values.push_back(Value::number(round_to(std::exp(3.0 + irng.gaussian() * 0.5), 0.01)));
        items.push_back(std::move(r));
    }

    // events
    Rng erng(derive_seed(cfg.seed, 3));
    auto& events = ds.db->tables[2];
    std::vector<int64_t> event_ts;
    std::vector<std::vector<std::pair<int64_t, double>>> user_events(
        static_cast<size_t>(cfg.n_users));
    for (int i = 0; i < cfg.n_events; ++i) {
        Row r;
        r.values.push_back(Value::key("e" + std::to_string(i + 1)));
        const int u = static_cast<int>(erng.bounded(static_cast<uint64_t>(cfg.n_users)));
        const int g = ds.user_group[static_cast<size_t>(u)];
        r.values.push_back(Value::key("u" + std::to_string(u + 1)));
        if (erng.uniform() < 0.05)
            r.values.push_back(Value::null());
        else
            r.values.push_back(Value::key(
                "i" + std::to_string(erng.bounded(static_cast<uint64_t>(cfg.n_items)) + 1)));
        const double amount = round_to(10.0 * g + erng.gaussian(), 1e-6);
        r.values.push_back(Value::number(amount));
        if (erng.uniform() < 0.1) {
            r.values.push_back(Value::null());
        } else {
            // group 0 leans web, group 1 leans store
            const double roll = erng.uniform();
            const size_t c = g == 0 ? (roll < 0.6 ? 0 : roll < 0.9 ? 1 : 2)
                                    : (roll < 0.1 ? 0 : roll < 0.4 ? 1 : 2);
            r.values.push_back(Value::category(channels[c]));
        }
        const int64_t ts = kTsBase + static_cast<int64_t>(erng.bounded(kTsRange));
        r.values.push_back(Value::time(ts));
        event_ts.push_back(ts);
        user_events[static_cast<size_t>(u)].push_back({ts, amount});
        events.push_back(std::move(r));
    }

    // task rows at per-user cutoffs drawn from event-time quantiles
    std::sort(event_ts.begin(), event_ts.end());
    auto quantile = [&](double q) {
        const size_t i = static_cast<size_t>(
            q * static_cast<double>(event_ts.size() - 1) + 0.5);
        return event_ts[std::min(i, event_ts.size() - 1)];
    };
    const std::vector<int64_t> cutoffs = {quantile(0.6), quantile(0.8), quantile(1.0)};
    ds.suggested_pretrain_cutoff = cutoffs[0];

    Rng trng(derive_seed(cfg.seed, 4));
    ds.engagement.name = "engagement";
    ds.engagement.entity_table = "users";
    ds.engagement.label_kind = LabelKind::Binary;
    ds.spend.name = "spend";
    ds.spend.entity_table = "users";
    ds.spend.label_kind = LabelKind::Regression;

    std::vector<int> eligible;
    std::vector<int64_t> user_cutoff(static_cast<size_t>(cfg.n_users));
    std::vector<double> user_mean(static_cast<size_t>(cfg.n_users));
    for (int u = 0; u < cfg.n_users; ++u) {
        const int64_t cut = cutoffs[trng.bounded(cutoffs.size())];
        double sum = 0.0;
        int n = 0;
        for (const auto& [ts, amount] : user_events[static_cast<size_t>(u)]) {
            if (ts <= cut) {
                sum += amount;
                ++n;
            }
        }
        if (n == 0) continue;  // target undefined before the first event
        user_cutoff[static_cast<size_t>(u)] = cut;
        user_mean[static_cast<size_t>(u)] = sum / n;
        eligible.push_back(u);
    }

    Rng srng(derive_seed(cfg.seed, 5));
    std::vector<int> order = eligible;
    srng.shuffle(order);
    std::vector<Split> split_of(static_cast<size_t>(cfg.n_users), Split::Train);
    const size_t n_train = order.size() * 7 / 10;
    const size_t n_val = order.size() * 15 / 100;
    for (size_t i = 0; i < order.size(); ++i)
        split_of[static_cast<size_t>(order[i])] =
            i < n_train ? Split::Train : i < n_train + n_val ? Split::Val : Split::Test;

    const double flip_p = (1.0 - cfg.signal) / 2.0;
    for (const int u : eligible) {
        const int g = ds.user_group[static_cast<size_t>(u)];
        const bool flip = trng.uniform() < flip_p;
        TaskRow er;
        er.entity_key = Value::key("u" + std::to_string(u + 1));
        er.label = static_cast<double>(flip ? 1 - g : g);
        er.timestamp = user_cutoff[static_cast<size_t>(u)];
        er.split = split_of[static_cast<size_t>(u)];
        ds.engagement.rows.push_back(er);

        TaskRow sr = er;
        sr.label = round_to(
            user_mean[static_cast<size_t>(u)] + (1.0 - cfg.signal) * trng.gaussian(), 1e-6);
        ds.spend.rows.push_back(sr);
    }

    const IntegrityReport report = validate_integrity(*ds.db);
    if (!report.clean()) throw IntegrityError(report.describe());
    return ds;
}

void write_synth_dataset(const SynthDataset& ds, const std::string& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir + "/schema.json", std::ios::trunc);
        if (!out) throw IoError("cannot write " + dir + "/schema.json");
        out << schema_to_json(ds.db->schema) << "\n";
    }
    write_database_csv(*ds.db, dir);
    write_task_table(ds.engagement, dir + "/task_engagement.csv");
    write_task_table(ds.spend, dir + "/task_spend.csv");

    nlohmann::json manifest;
    manifest["schema_file"] = "schema.json";
    manifest["tables"] = nlohmann::json::array();
    for (const TableSchema& t : ds.db->schema.tables)
        manifest["tables"].push_back(t.name + ".csv");
    manifest["tasks"] = nlohmann::json::array();
    for (const TaskTable* task : {&ds.engagement, &ds.spend})
        manifest["tasks"].push_back({{"name", task->name},
                                     {"file", "task_" + task->name + ".csv"},
                                     {"entity_table", task->entity_table},
                                     {"label_kind", label_kind_name(task->label_kind)}});
    manifest["suggested_pretrain_cutoff"] = ds.suggested_pretrain_cutoff;
    std::ofstream out(dir + "/dataset.json", std::ios::trunc);
    if (!out) throw IoError("cannot write " + dir + "/dataset.json");
    out << manifest.dump(2) << "\n";
}

DatasetManifest read_dataset_manifest(const std::string& dir) {
    std::ifstream in(dir + "/dataset.json");
    if (!in) throw IoError("cannot open " + dir + "/dataset.json");
    nlohmann::json j;
    try {
        in >> j;
        DatasetManifest m;
        m.schema_file = j.at("schema_file").get<std::string>();
        for (const auto& t : j.at("tasks")) {
            TaskRef ref;
            ref.name = t.at("name").get<std::string>();
            ref.file = t.at("file").get<std::string>();
            ref.entity_table = t.at("entity_table").get<std::string>();
            ref.label_kind = label_kind_from_name(t.at("label_kind").get<std::string>());
            m.tasks.push_back(std::move(ref));
        }
        if (j.contains("suggested_pretrain_cutoff"))
            m.suggested_pretrain_cutoff = j.at("suggested_pretrain_cutoff").get<int64_t>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(dir + "/dataset.json: " + e.what());
    }
}

}  // namespace relcp
