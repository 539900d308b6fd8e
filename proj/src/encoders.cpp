#include "relcp/encoders.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <unordered_map>

#include "relcp/checkpoint.hpp"
#include "relcp/errors.hpp"
#include "relcp/rng.hpp"

namespace relcp {

namespace {

constexpr double kTau = 6.283185307179586476925286766559;

std::string param_base(const std::string& table, const std::string& attr) {
    return "enc." + table + "." + attr;
}

void create_glorot(ParamStore& store, const std::string& name, int rows, int cols,
                   uint64_t init_seed) {
    store.get_or_create(name, rows, cols, [&] {
        Rng rng(derive_seed(init_seed, fnv1a(name)));
        return glorot_uniform(rows, cols, rng);
    });
}

}  // namespace

std::vector<std::string> tokenize_text(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (const char ch : s) {
        const auto u = static_cast<unsigned char>(ch);
        if (std::isalnum(u)) {
            cur.push_back(static_cast<char>(std::tolower(u)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

std::array<double, 5> timestamp_features(int64_t epoch_seconds, double mean, double stdev) {
    using namespace std::chrono;
    const int64_t epoch_days = epoch_seconds >= 0 ? epoch_seconds / 86400
                                                  : (epoch_seconds - 86399) / 86400;
    const int dow = static_cast<int>(((epoch_days % 7) + 7 + 4) % 7);  // day 0 was a Thursday
    const sys_days day{days{static_cast<days::rep>(epoch_days)}};
    const year_month_day ymd(day);
    const sys_days year_start{ymd.year() / January / 1};
    const double doy = static_cast<double>((day - year_start).count());
    const double z = (static_cast<double>(epoch_seconds) - mean) / stdev;
    return {std::sin(kTau * dow / 7.0), std::cos(kTau * dow / 7.0),
            std::sin(kTau * doy / 365.25), std::cos(kTau * doy / 365.25), z};
}

void AttributeEncoders::fit(const Database& db) {
    stats_.clear();
    for (size_t ti = 0; ti < db.schema.tables.size(); ++ti) {
        const TableSchema& table = db.schema.tables[ti];
        const std::vector<Row>& rows = db.tables[ti];
        auto& per_attr = stats_[table.name];
        for (const int ai : table.value_attribute_indices()) {
            const Attribute& attr = table.attributes[static_cast<size_t>(ai)];
            AttributeStats st;
            switch (attr.stype) {
                case SemanticType::Numerical:
                case SemanticType::Timestamp: {
                    double sum = 0.0, sum2 = 0.0;
                    int64_t n = 0;
                    for (const Row& row : rows) {
                        const Value& v = row.values[static_cast<size_t>(ai)];
                        if (v.is_null()) continue;
                        const double x = attr.stype == SemanticType::Numerical
                                             ? v.as_number()
                                             : static_cast<double>(v.as_time());
                        sum += x;
                        sum2 += x * x;
                        ++n;
                    }
                    if (n > 0) {
                        st.mean = sum / static_cast<double>(n);
                        const double var = sum2 / static_cast<double>(n) - st.mean * st.mean;
                        st.stdev = var > 1e-24 ? std::sqrt(var) : 1.0;
                    }
                    break;
                }
                case SemanticType::Categorical: {
                    std::unordered_map<std::string, bool> seen;
                    for (const Row& row : rows) {
                        const Value& v = row.values[static_cast<size_t>(ai)];
                        if (v.is_null()) continue;
                        if (seen.emplace(v.as_category(), true).second)
                            st.vocab.push_back(v.as_category());
                    }
                    break;
                }
                case SemanticType::MultiCategorical: {
                    std::unordered_map<std::string, bool> seen;
                    for (const Row& row : rows) {
                        const Value& v = row.values[static_cast<size_t>(ai)];
                        if (v.is_null()) continue;
                        for (const std::string& tok : v.as_multi_category())
                            if (seen.emplace(tok, true).second) st.vocab.push_back(tok);
                    }
                    break;
                }
                case SemanticType::Text:
                    break;  // hashing needs no fitted state
                default:
                    break;
            }
            per_attr.emplace(attr.name, std::move(st));
        }
    }
    fitted_ = true;
}

int AttributeEncoders::feature_width(const TableSchema& table) const {
    return static_cast<int>(table.value_attribute_indices().size()) * cfg_.attr_dim;
}

const AttributeStats& AttributeEncoders::stats(const std::string& table,
                                               const std::string& attr) const {
    if (!fitted_) throw UnfittedEncoder("encoders have not been fitted");
    const auto t = stats_.find(table);
    if (t == stats_.end()) throw UnknownColumn("no fitted state for table " + table);
    const auto a = t->second.find(attr);
    if (a == t->second.end())
        throw UnknownColumn("no fitted state for " + table + "." + attr);
    return a->second;
}

void AttributeEncoders::build_params(const DatabaseSchema& schema, ParamStore& store,
                                     uint64_t init_seed) const {
    if (!fitted_) throw UnfittedEncoder("encoders have not been fitted");
    const int d = cfg_.attr_dim;
    for (const TableSchema& table : schema.tables) {
        for (const int ai : table.value_attribute_indices()) {
            const Attribute& attr = table.attributes[static_cast<size_t>(ai)];
            const std::string base = param_base(table.name, attr.name);
            switch (attr.stype) {
                case SemanticType::Numerical:
                    create_glorot(store, base + ".proj", 1, d, init_seed);
                    break;
                case SemanticType::Timestamp:
                    create_glorot(store, base + ".proj", 5, d, init_seed);
                    break;
                case SemanticType::Categorical:
                case SemanticType::MultiCategorical: {
                    const int vocab =
                        static_cast<int>(stats(table.name, attr.name).vocab.size());
                    create_glorot(store, base + ".emb", vocab + 1, d, init_seed);
                    break;
                }
                case SemanticType::Text:
                    create_glorot(store, base + ".emb", cfg_.text_buckets, d, init_seed);
                    break;
                default:
                    break;
            }
            store.get_or_create(base + ".null", 1, d, [&] { return Tensor::zeros(1, d); });
        }
    }
}

Var AttributeEncoders::encode_table(Tape& t, const std::vector<const Row*>& rows,
                                    const TableSchema& table, ParamStore& store) const {
    if (!fitted_) throw UnfittedEncoder("encoders have not been fitted");
    const int n = static_cast<int>(rows.size());
    const int d = cfg_.attr_dim;

    std::vector<Var> blocks;
    for (const int ai : table.value_attribute_indices()) {
        const Attribute& attr = table.attributes[static_cast<size_t>(ai)];
        const std::string base = param_base(table.name, attr.name);
        const AttributeStats& st = stats(table.name, attr.name);

        std::vector<double> absent(static_cast<size_t>(n), 0.0);
        Var present_block;
        switch (attr.stype) {
            case SemanticType::Numerical: {
                std::vector<double> z(static_cast<size_t>(n), 0.0);
                for (int i = 0; i < n; ++i) {
                    const Value& v = rows[static_cast<size_t>(i)]->values[static_cast<size_t>(ai)];
                    if (v.is_null())
                        absent[static_cast<size_t>(i)] = 1.0;
                    else
                        z[static_cast<size_t>(i)] = (v.as_number() - st.mean) / st.stdev;
                }
                const Var proj = t.leaf(store.at(base + ".proj"));
                present_block = t.scale_rows(t.repeat_row(proj, n), std::move(z));
                break;
            }
            case SemanticType::Timestamp: {
                Tensor feats(n, 5);
                for (int i = 0; i < n; ++i) {
                    const Value& v = rows[static_cast<size_t>(i)]->values[static_cast<size_t>(ai)];
                    if (v.is_null()) {
                        absent[static_cast<size_t>(i)] = 1.0;
                        continue;
                    }
                    const auto f = timestamp_features(v.as_time(), st.mean, st.stdev);
                    for (int c = 0; c < 5; ++c) feats.at(i, c) = f[static_cast<size_t>(c)];
                }
                present_block = t.matmul(t.input(std::move(feats)),
                                         t.leaf(store.at(base + ".proj")));
                break;
            }
            case SemanticType::Categorical: {
                const AttributeStats& vs = st;
                std::unordered_map<std::string, int> index;
                for (size_t k = 0; k < vs.vocab.size(); ++k)
                    index.emplace(vs.vocab[k], static_cast<int>(k));
                const int oov = static_cast<int>(vs.vocab.size());
                std::vector<int> ids(static_cast<size_t>(n), 0);
                std::vector<double> present(static_cast<size_t>(n), 1.0);
                for (int i = 0; i < n; ++i) {
                    const Value& v = rows[static_cast<size_t>(i)]->values[static_cast<size_t>(ai)];
                    if (v.is_null()) {
                        absent[static_cast<size_t>(i)] = 1.0;
                        present[static_cast<size_t>(i)] = 0.0;
                        continue;
                    }
                    const auto it = index.find(v.as_category());
                    ids[static_cast<size_t>(i)] = it == index.end() ? oov : it->second;
                }
                const Var picked =
                    t.embedding_lookup(t.leaf(store.at(base + ".emb")), std::move(ids));
                present_block = t.scale_rows(picked, std::move(present));
                break;
            }
            case SemanticType::MultiCategorical: {
                std::unordered_map<std::string, int> index;
                for (size_t k = 0; k < st.vocab.size(); ++k)
                    index.emplace(st.vocab[k], static_cast<int>(k));
                const int oov = static_cast<int>(st.vocab.size());
                std::vector<std::vector<int>> bags(static_cast<size_t>(n));
                for (int i = 0; i < n; ++i) {
                    const Value& v = rows[static_cast<size_t>(i)]->values[static_cast<size_t>(ai)];
                    if (v.is_null()) {
                        absent[static_cast<size_t>(i)] = 1.0;
                        continue;
                    }
                    for (const std::string& tok : v.as_multi_category()) {
                        const auto it = index.find(tok);
                        bags[static_cast<size_t>(i)].push_back(
                            it == index.end() ? oov : it->second);
                    }
                }
                present_block = t.bag_rows(t.leaf(store.at(base + ".emb")), std::move(bags),
                                           /*mean=*/false);
                break;
            }
            case SemanticType::Text: {
                std::vector<std::vector<int>> bags(static_cast<size_t>(n));
                for (int i = 0; i < n; ++i) {
                    const Value& v = rows[static_cast<size_t>(i)]->values[static_cast<size_t>(ai)];
                    if (v.is_null()) {
                        absent[static_cast<size_t>(i)] = 1.0;
                        continue;
                    }
                    for (const std::string& tok : tokenize_text(v.as_text()))
                        bags[static_cast<size_t>(i)].push_back(static_cast<int>(
                            fnv1a(tok) % static_cast<uint64_t>(cfg_.text_buckets)));
                }
                present_block = t.bag_rows(t.leaf(store.at(base + ".emb")), std::move(bags),
                                           /*mean=*/true);
                break;
            }
            default:
                throw UnfittedEncoder("key column " + attr.name + " cannot be encoded");
        }

        const Var nulls =
            t.scale_rows(t.repeat_row(t.leaf(store.at(base + ".null")), n), std::move(absent));
        blocks.push_back(t.add(present_block, nulls));
    }

    if (blocks.empty()) return t.input(Tensor(n, 0));
    Var out = blocks[0];
    for (size_t i = 1; i < blocks.size(); ++i) out = t.concat_cols(out, blocks[i]);
    (void)d;
    return out;
}

nlohmann::json AttributeEncoders::to_json() const {
    nlohmann::json j;
    j["attr_dim"] = cfg_.attr_dim;
    j["text_buckets"] = cfg_.text_buckets;
    nlohmann::json tables = nlohmann::json::object();
    for (const auto& [tname, attrs] : stats_) {
        nlohmann::json per = nlohmann::json::object();
        for (const auto& [aname, st] : attrs) {
            per[aname] = {{"mean", st.mean}, {"stdev", st.stdev}, {"vocab", st.vocab}};
        }
        tables[tname] = std::move(per);
    }
    j["tables"] = std::move(tables);
    return j;
}

AttributeEncoders AttributeEncoders::from_json(const nlohmann::json& j) {
    AttributeEncoders enc;
    try {
        enc.cfg_.attr_dim = j.at("attr_dim").get<int>();
        enc.cfg_.text_buckets = j.at("text_buckets").get<int>();
        for (const auto& [tname, attrs] : j.at("tables").items()) {
            auto& per = enc.stats_[tname];
            for (const auto& [aname, stj] : attrs.items()) {
                AttributeStats st;
                st.mean = stj.at("mean").get<double>();
                st.stdev = stj.at("stdev").get<double>();
                st.vocab = stj.at("vocab").get<std::vector<std::string>>();
                per.emplace(aname, std::move(st));
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw CorruptPayload(std::string("encoder state: ") + e.what());
    }
    enc.fitted_ = true;
    return enc;
}

}  // namespace relcp
