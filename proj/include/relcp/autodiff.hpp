#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "relcp/rng.hpp"
#include "relcp/tensor.hpp"

namespace relcp {

struct Parameter {
    std::string name;
    Tensor tensor;
    bool trainable = true;
};

// Named parameters in creation order. Creation order is part of the model's
// identity: checkpoints and optimizer states key off these names.
class ParamStore {
   public:
    Parameter& get_or_create(const std::string& name, int rows, int cols,
                             const std::function<Tensor()>& init);
    Parameter* find(const std::string& name);
    const Parameter* find(const std::string& name) const;
    Parameter& at(const std::string& name);

    const std::vector<std::unique_ptr<Parameter>>& all() const { return params_; }
    size_t size() const { return params_.size(); }

    // Freeze or unfreeze every parameter whose name starts with prefix.
    void set_trainable(const std::string& prefix, bool trainable);

   private:
    std::vector<std::unique_ptr<Parameter>> params_;
    std::unordered_map<std::string, size_t> index_;
};

using GradMap = std::unordered_map<std::string, Tensor>;

using Var = int;  // node index on the tape

// Reverse-mode tape over 2-D float64 tensors. One tape per training step.
class Tape {
   public:
    // leaves
    Var input(Tensor value);
    Var leaf(Parameter& p);

    // arithmetic
    Var matmul(Var a, Var b);
    Var matmul_nt(Var a, Var b);  // A * B^T
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var add_rowvec(Var a, Var bias);  // bias (1xN) added to every row
    Var scale(Var a, double c);
    // row i multiplied by factors[i] (constants; no gradient into factors)
    Var scale_rows(Var a, std::vector<double> factors);

    // shape
    Var concat_cols(Var a, Var b);
    Var concat_rows(const std::vector<Var>& parts);
    Var slice_rows(Var a, int start, int count);
    Var slice_cols(Var a, int start, int count);
    Var repeat_row(Var row, int times);

    // gathers / scatters
    Var embedding_lookup(Var table, std::vector<int> ids);
    Var scatter_sum_rows(Var src, std::vector<int> dst_index, int n_out);
    // bag i = sum (or mean) of table rows listed in bags[i]; empty bag -> zeros
    Var bag_rows(Var table, std::vector<std::vector<int>> bags, bool mean);

    // reductions (per row, giving Mx1) and full reductions (1x1)
    Var sum_rows(Var a);
    Var mean_rows(Var a);
    Var logsumexp_rows(Var a);
    Var sum_all(Var a);
    Var mean_all(Var a);

    // nonlinearities
    Var relu(Var a);
    Var sigmoid(Var a);

    // batch norm over columns; running stats are non-trainable parameters
    // updated in place when training=true (biased variance, momentum 0.1)
    Var batch_norm_1d(Var x, Parameter& gamma, Parameter& beta, Parameter& running_mean,
                      Parameter& running_var, bool training, double momentum = 0.1,
                      double eps = 1e-5);

    // losses (mean over rows)
    Var softmax_cross_entropy(Var logits, std::vector<int> labels);
    Var sigmoid_cross_entropy(Var logits, std::vector<double> targets);
    Var mse(Var pred, Var target);

    const Tensor& value(Var v) const { return nodes_[static_cast<size_t>(v)].value; }

    // Reverse pass from a scalar output. Every parameter in `store` gets an
    // entry; parameters absent from the tape get zero gradients.
    GradMap backward(Var output, const ParamStore& store);

    size_t node_count() const { return nodes_.size(); }

   private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool needs_grad = false;
        bool grad_alloc = false;
        // called with (tape, own id); reads own grad, accumulates into inputs
        std::function<void(Tape&, Var)> back;
        Parameter* bound = nullptr;
    };

    Var push(Tensor value, bool needs_grad, std::function<void(Tape&, Var)> back);
    Node& node(Var v) { return nodes_[static_cast<size_t>(v)]; }
    const Node& node(Var v) const { return nodes_[static_cast<size_t>(v)]; }
    void accum(Var v, const Tensor& g);
    void accum_at(Var v, int r, int c, double g);
    bool any_needs(std::initializer_list<Var> vs);

    std::vector<Node> nodes_;
    std::unordered_map<Parameter*, Var> bound_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Standard Adam with bias correction; moments keyed by parameter name, so
// state survives tape rebuilds and checkpoint round-trips.
class Adam {
   public:
    explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

    void step(ParamStore& store, const GradMap& grads);

    int64_t steps_taken() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

   private:
    AdamConfig cfg_;
    int64_t t_ = 0;
    std::unordered_map<std::string, std::pair<Tensor, Tensor>> moments_;
};

// initializers
Tensor glorot_uniform(int rows, int cols, Rng& rng);
Tensor near_identity(int n, Rng& rng, double noise = 0.01);

// Max over sampled coordinates of
// |analytic - central difference| / max(1, |analytic|).
double grad_check(const std::function<Var(Tape&)>& f, ParamStore& store, double eps = 1e-5,
                  int coords_per_param = 6, uint64_t seed = 0);

}  // namespace relcp
