#pragma once

#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "relcp/autodiff.hpp"
#include "relcp/encoders.hpp"
#include "relcp/sampler.hpp"

namespace relcp {

enum class Aggregation { Sum, Mean };
enum class TableEncoderKind { LinearConcat, TabularResNet };

struct BackboneConfig {
    int hidden_dim = 128;
    int num_layers = 2;
    Aggregation aggregation = Aggregation::Mean;
    TableEncoderKind table_encoder = TableEncoderKind::LinearConcat;
    int resnet_blocks = 2;
    EncoderConfig encoder;

    void validate() const;  // throws ParseError
    nlohmann::json to_json() const;
    static BackboneConfig from_json(const nlohmann::json& j);
};

// h = attr_matrix @ w + b over the concatenated attribute blocks.
Var table_linear(Tape& t, Var attr_matrix, Parameter& w, Parameter& b);

struct ResnetBlockParams {
    Parameter* w = nullptr;
    Parameter* b = nullptr;
    Parameter* gamma = nullptr;
    Parameter* beta = nullptr;
    Parameter* running_mean = nullptr;
    Parameter* running_var = nullptr;
};

// Stem linear to hidden_dim, then blocks of y = x + relu(bn(x)) @ w + b.
Var table_resnet(Tape& t, Var attr_matrix, Parameter& stem_w, Parameter& stem_b,
                 const std::vector<ResnetBlockParams>& blocks, bool training);

// One heterogeneous message-passing round over the subgraph. msg_w holds one
// matrix per parent edge type, upd_w one per node type. Nodes without
// incoming messages aggregate to zero.
std::vector<Var> sage_layer(Tape& t, const Subgraph& sub, const std::vector<Var>& h,
                            const std::vector<Parameter*>& msg_w,
                            const std::vector<Parameter*>& upd_w, Aggregation agg);

// Encoders, per-table reduction, and num_layers message-passing rounds.
class BackboneModel {
  public:
    explicit BackboneModel(BackboneConfig cfg);

    const BackboneConfig& config() const { return cfg_; }
    AttributeEncoders& encoders() { return encoders_; }
    const AttributeEncoders& encoders() const { return encoders_; }
    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }

    // Registers every parameter for this schema in a fixed order. Encoders
    // must be fitted (or restored) first.
    void build(const DatabaseSchema& schema, uint64_t init_seed);
    bool built() const { return built_; }
    const DatabaseSchema& schema() const;

    // Final-layer embeddings per node type, rows in subgraph-local order.
    std::vector<Var> forward(Tape& t, const Subgraph& sub, bool training);

    // Same, but with substituted rows (the corrupted pass). rows_per_type[k]
    // must align with sub.nodes[k].
    std::vector<Var> forward_rows(Tape& t, const Subgraph& sub,
                                  const std::vector<std::vector<Row>>& rows_per_type,
                                  bool training);

  private:
    std::vector<Var> forward_impl(Tape& t, const Subgraph& sub,
                                  const std::vector<std::vector<const Row*>>& rows,
                                  bool training);

    BackboneConfig cfg_;
    AttributeEncoders encoders_;
    ParamStore store_;
    bool built_ = false;
    DatabaseSchema schema_;
    std::vector<EdgeTypeInfo> edge_types_;

    struct TableParams {
        Parameter* stem_w = nullptr;
        Parameter* stem_b = nullptr;
        std::vector<ResnetBlockParams> blocks;
    };
    std::vector<TableParams> table_params_;
    std::vector<std::vector<Parameter*>> msg_w_;  // [layer][edge type]
    std::vector<std::vector<Parameter*>> upd_w_;  // [layer][node type]
};

const char* aggregation_name(Aggregation a);
const char* table_encoder_name(TableEncoderKind k);

}  // namespace relcp
