#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "relcp/autodiff.hpp"
#include "relcp/database.hpp"
#include "relcp/schema.hpp"

namespace relcp {

struct EncoderConfig {
    int attr_dim = 32;
    int text_buckets = 2048;
};

// Fitted, non-learned state for one attribute: standardization moments for
// numeric and timestamp columns, vocabulary for (multi-)categorical ones.
struct AttributeStats {
    double mean = 0.0;
    double stdev = 1.0;
    std::vector<std::string> vocab;
};

// Turns raw rows into differentiable per-attribute feature blocks. Key
// columns carry identity only and are excluded. Null cells fall back to a
// learned per-attribute replacement vector. Unseen categories share one
// out-of-vocabulary slot at the end of the embedding table.
class AttributeEncoders {
  public:
    AttributeEncoders() = default;
    explicit AttributeEncoders(EncoderConfig cfg) : cfg_(cfg) {}

    void fit(const Database& db);
    bool fitted() const { return fitted_; }
    const EncoderConfig& config() const { return cfg_; }

    // Feature block width for one table: (#non-key attributes) x attr_dim.
    int feature_width(const TableSchema& table) const;

    // Registers every encoder parameter in schema order. Initialization is
    // derived from (init_seed, parameter name), so creation order is moot.
    void build_params(const DatabaseSchema& schema, ParamStore& store,
                      uint64_t init_seed) const;

    // n x feature_width(table) matrix, one attr_dim block per non-key column.
    Var encode_table(Tape& t, const std::vector<const Row*>& rows,
                     const TableSchema& table, ParamStore& store) const;

    const AttributeStats& stats(const std::string& table, const std::string& attr) const;

    nlohmann::json to_json() const;
    static AttributeEncoders from_json(const nlohmann::json& j);

  private:
    EncoderConfig cfg_;
    bool fitted_ = false;
    std::map<std::string, std::map<std::string, AttributeStats>> stats_;
};

// Lowercased alphanumeric runs; everything else separates tokens.
std::vector<std::string> tokenize_text(const std::string& s);

// Cyclical day-of-week and day-of-year features plus a standardized linear
// term: [sin dow, cos dow, sin doy, cos doy, z].
std::array<double, 5> timestamp_features(int64_t epoch_seconds, double mean, double stdev);

}  // namespace relcp
