#include "relcp/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace relcp {

namespace {

Tensor matmul_values(const Tensor& a, const Tensor& b) {
    Tensor out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.data.data() + static_cast<size_t>(i) * a.cols;
        double* orow = out.data.data() + static_cast<size_t>(i) * b.cols;
        for (int k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = b.data.data() + static_cast<size_t>(k) * b.cols;
            for (int j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

// A^T * B
Tensor matmul_tn_values(const Tensor& a, const Tensor& b) {
    Tensor out(a.cols, b.cols);
    for (int k = 0; k < a.rows; ++k) {
        const double* arow = a.data.data() + static_cast<size_t>(k) * a.cols;
        const double* brow = b.data.data() + static_cast<size_t>(k) * b.cols;
        for (int i = 0; i < a.cols; ++i) {
            const double aki = arow[i];
            if (aki == 0.0) continue;
            double* orow = out.data.data() + static_cast<size_t>(i) * b.cols;
            for (int j = 0; j < b.cols; ++j) orow[j] += aki * brow[j];
        }
    }
    return out;
}

// A * B^T
Tensor matmul_nt_values(const Tensor& a, const Tensor& b) {
    Tensor out(a.rows, b.rows);
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.data.data() + static_cast<size_t>(i) * a.cols;
        double* orow = out.data.data() + static_cast<size_t>(i) * b.rows;
        for (int j = 0; j < b.rows; ++j) {
            const double* brow = b.data.data() + static_cast<size_t>(j) * b.cols;
            double acc = 0.0;
            for (int k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
            orow[j] = acc;
        }
    }
    return out;
}

}  // namespace

Parameter& ParamStore::get_or_create(const std::string& name, int rows, int cols,
                                     const std::function<Tensor()>& init) {
    const auto it = index_.find(name);
    if (it != index_.end()) {
        Parameter& p = *params_[it->second];
        if (p.tensor.rows != rows || p.tensor.cols != cols)
            throw ShapeMismatch("parameter '" + name + "' exists with shape " +
                                shape_str(p.tensor) + ", requested (" + std::to_string(rows) +
                                "x" + std::to_string(cols) + ")");
        return p;
    }
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->tensor = init();
    if (p->tensor.rows != rows || p->tensor.cols != cols)
        throw ShapeMismatch("initializer for '" + name + "' produced " + shape_str(p->tensor));
    index_.emplace(name, params_.size());
    params_.push_back(std::move(p));
    return *params_.back();
}

Parameter* ParamStore::find(const std::string& name) {
    const auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
}

const Parameter* ParamStore::find(const std::string& name) const {
    const auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
}

Parameter& ParamStore::at(const std::string& name) {
    Parameter* p = find(name);
    if (!p) throw ShapeMismatch("no parameter named '" + name + "'");
    return *p;
}

void ParamStore::set_trainable(const std::string& prefix, bool trainable) {
    for (auto& p : params_)
        if (p->name.rfind(prefix, 0) == 0) p->trainable = trainable;
}

Var Tape::push(Tensor value, bool needs_grad, std::function<void(Tape&, Var)> back) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<Var>(nodes_.size() - 1);
}

void Tape::accum(Var v, const Tensor& g) {
    Node& n = node(v);
    if (!n.needs_grad) return;
    if (!n.grad_alloc) {
        n.grad = Tensor::zeros(n.value.rows, n.value.cols);
        n.grad_alloc = true;
    }
    if (!n.grad.same_shape(g)) throw ShapeMismatch("gradient shape mismatch");
    for (size_t i = 0; i < g.size(); ++i) n.grad.data[i] += g.data[i];
}

void Tape::accum_at(Var v, int r, int c, double g) {
    Node& n = node(v);
    if (!n.needs_grad) return;
    if (!n.grad_alloc) {
        n.grad = Tensor::zeros(n.value.rows, n.value.cols);
        n.grad_alloc = true;
    }
    n.grad.at(r, c) += g;
}

bool Tape::any_needs(std::initializer_list<Var> vs) {
    for (Var v : vs)
        if (node(v).needs_grad) return true;
    return false;
}

Var Tape::input(Tensor value) { return push(std::move(value), false, nullptr); }

Var Tape::leaf(Parameter& p) {
    const auto it = bound_.find(&p);
    if (it != bound_.end()) return it->second;
    const Var v = push(p.tensor, p.trainable, nullptr);
    node(v).bound = &p;
    bound_.emplace(&p, v);
    return v;
}

Var Tape::matmul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.cols != B.rows) throw ShapeMismatch("matmul " + shape_str(A) + " x " + shape_str(B));
    return push(matmul_values(A, B), any_needs({a, b}), [a, b](Tape& t, Var self) {
        const Tensor& g = t.node(self).grad;
        if (t.node(a).needs_grad) t.accum(a, matmul_nt_values(g, t.value(b)));
        if (t.node(b).needs_grad) t.accum(b, matmul_tn_values(t.value(a), g));
    });
}

Var Tape::matmul_nt(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.cols != B.cols)
        throw ShapeMismatch("matmul_nt " + shape_str(A) + " x " + shape_str(B) + "^T");
    return push(matmul_nt_values(A, B), any_needs({a, b}), [a, b](Tape& t, Var self) {
        const Tensor& g = t.node(self).grad;
        if (t.node(a).needs_grad) t.accum(a, matmul_values(g, t.value(b)));
        if (t.node(b).needs_grad) t.accum(b, matmul_tn_values(g, t.value(a)));
    });
}

Var Tape::add(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) throw ShapeMismatch("add " + shape_str(A) + " vs " + shape_str(B));
    Tensor out = A;
    for (size_t i = 0; i < out.size(); ++i) out.data[i] += B.data[i];
    return push(std::move(out), any_needs({a, b}), [a, b](Tape& t, Var self) {
        const Tensor& g = t.node(self).grad;
        t.accum(a, g);
        t.accum(b, g);
    });
}

Var Tape::sub(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) throw ShapeMismatch("sub " + shape_str(A) + " vs " + shape_str(B));
    Tensor out = A;
    for (size_t i = 0; i < out.size(); ++i) out.data[i] -= B.data[i];
    return push(std::move(out), any_needs({a, b}), [a, b](Tape& t, Var self) {
        const Tensor& g = t.node(self).grad;
        t.accum(a, g);
        if (t.node(b).needs_grad) {
            Tensor neg = g;
            for (auto& x : neg.data) x = -x;
            t.accum(b, neg);
        }
    });
}

Var Tape::add_rowvec(Var a, Var bias) {
    const Tensor& A = value(a);
    const Tensor& B = value(bias);
    if (B.rows != 1 || B.cols != A.cols)
        throw ShapeMismatch("add_rowvec " + shape_str(A) + " + " + shape_str(B));
    Tensor out = A;
    for (int r = 0; r < out.rows; ++r)
        for (int c = 0; c < out.cols; ++c) out.at(r, c) += B.at(0, c);
    return push(std::move(out), any_needs({a, bias}), [a, bias](Tape& t, Var self) {
        const Tensor& g = t.node(self).grad;
        t.accum(a, g);
        if (t.node(bias).needs_grad) {
            Tensor gb(1, g.cols);
            for (int r = 0; r < g.rows; ++r)
                for (int c = 0; c < g.cols; ++c) gb.at(0, c) += g.at(r, c);
            t.accum(bias, gb);
        }
    });
}

Var Tape::scale(Var a, double c) {
    Tensor out = value(a);
    for (auto& x : out.data) x *= c;
    return push(std::move(out), any_needs({a}), [a, c](Tape& t, Var self) {
        Tensor g = t.node(self).grad;
        for (auto& x : g.data) x *= c;
        t.accum(a, g);
    });
}

Var Tape::scale_rows(Var a, std::vector<double> factors) {
    const Tensor& A = value(a);
    if (static_cast<int>(factors.size()) != A.rows)
        throw ShapeMismatch("scale_rows needs one factor per row");
    Tensor out = A;
    for (int r = 0; r < out.rows; ++r)
        for (int c = 0; c < out.cols; ++c) out.at(r, c) *= factors[static_cast<size_t>(r)];
    return push(std::move(out), any_needs({a}),
                [a, factors = std::move(factors)](Tape& t, Var self) {
                    Tensor g = t.node(self).grad;
                    for (int r = 0; r < g.rows; ++r)
                        for (int c = 0; c < g.cols; ++c)
                            g.at(r, c) *= factors[static_cast<size_t>(r)];
                    t.accum(a, g);
                });
}

Var Tape::concat_cols(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rows != B.rows)
        throw ShapeMismatch("concat_cols " + shape_str(A) + " | " + shape_str(B));
    Tensor out(A.rows, A.cols + B.cols);
    for (int r = 0; r < A.rows; ++r) {
        for (int c = 0; c < A.cols; ++c) out.at(r, c) = A.at(r, c);
        for (int c = 0; c < B.cols; ++c) out.at(r, A.cols + c) = B.at(r, c);
    }
    const int ac = A.cols, bc = B.cols;
    return push(std::move(out), any_needs({a, b}), [a, b, ac, bc](Tape& t, Var self) {
        const Tensor& g = t.node(self).grad;
        if (t.node(a).needs_grad) {
            Tensor ga(g.rows, ac);
            for (int r = 0; r < g.rows; ++r)
                for (int c = 0; c < ac; ++c) ga.at(r, c) = g.at(r, c);
            t.accum(a, ga);
        }
        if (t.node(b).needs_grad) {
            Tensor gb(g.rows, bc);
            for (int r = 0; r < g.rows; ++r)
                for (int c = 0; c < bc; ++c) gb.at(r, c) = g.at(r, ac + c);
            t.accum(b, gb);
        }
    });
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_rows of nothing");
    const int cols = value(parts[0]).cols;
    int total = 0;
    for (Var p : parts) {
        if (value(p).cols != cols) throw ShapeMismatch("concat_rows column mismatch");
        total += value(p).rows;
    }
    Tensor out(total, cols);
    int at = 0;
    for (Var p : parts) {
        const Tensor& P = value(p);
        std::copy(P.data.begin(), P.data.end(),
                  out.data.begin() + static_cast<size_t>(at) * cols);
        at += P.rows;
    }
    bool needs = false;
    for (Var p : parts) needs = needs || node(p).needs_grad;
    return push(std::move(out), needs, [parts](Tape& t, Var self) {
        const Tensor& g = t.node(self).grad;
        int at = 0;
        for (Var p : parts) {
            const int rows = t.value(p).rows;
            if (t.node(p).needs_grad) {
                Tensor gp(rows, g.cols);
                std::copy(g.data.begin() + static_cast<size_t>(at) * g.cols,
                          g.data.begin() + static_cast<size_t>(at + rows) * g.cols,
                          gp.data.begin());
                t.accum(p, gp);
            }
            at += rows;
        }
    });
}

Var Tape::slice_rows(Var a, int start, int count) {
    const Tensor& A = value(a);
    if (start < 0 || count < 0 || start + count > A.rows)
        throw ShapeMismatch("slice_rows [" + std::to_string(start) + ", +" +
                            std::to_string(count) + ") of " + shape_str(A));
    Tensor out(count, A.cols);
    std::copy(A.data.begin() + static_cast<size_t>(start) * A.cols,
              A.data.begin() + static_cast<size_t>(start + count) * A.cols, out.data.begin());
    return push(std::move(out), any_needs({a}), [a, start](Tape& t, Var self) {
        const Tensor& g = t.node(self).grad;
        for (int r = 0; r < g.rows; ++r)
            for (int c = 0; c < g.cols; ++c) t.accum_at(a, start + r, c, g.at(r, c));
    });
}

Var Tape::slice_cols(Var a, int start, int count) {
    const Tensor& A = value(a);
    if (start < 0 || count < 0 || start + count > A.cols)
        throw ShapeMismatch("slice_cols [" + std::to_string(start) + ", +" +
                            std::to_string(count) + ") of " + shape_str(A));
    Tensor out(A.rows, count);
    for (int r = 0; r < A.rows; ++r)
        for (int c = 0; c < count; ++c) out.at(r, c) = A.at(r, start + c);
    return push(std::move(out), any_needs({a}), [a, start](Tape& t, Var self) {
        const Tensor& g = t.node(self).grad;
        for (int r = 0; r < g.rows; ++r)
            for (int c = 0; c < g.cols; ++c) t.accum_at(a, r, start + c, g.at(r, c));
    });
}

Var Tape::repeat_row(Var row, int times) {
    const Tensor& R = value(row);
    if (R.rows != 1) throw ShapeMismatch("repeat_row needs a 1xN input, got " + shape_str(R));
    if (times < 0) throw ShapeMismatch("repeat_row negative count");
    Tensor out(times, R.cols);
    for (int r = 0; r < times; ++r)
        for (int c = 0; c < R.cols; ++c) out.at(r, c) = R.at(0, c);
    return push(std::move(out), any_needs({row}), [row](Tape& t, Var self) {
        const Tensor& g = t.node(self).grad;
        Tensor gr(1, g.cols);
        for (int r = 0; r < g.rows; ++r)
            for (int c = 0; c < g.cols; ++c) gr.at(0, c) += g.at(r, c);
        t.accum(row, gr);
    });
}

Var Tape::embedding_lookup(Var table, std::vector<int> ids) {
    const Tensor& T = value(table);
    for (int id : ids)
        if (id < 0 || id >= T.rows)
            throw ShapeMismatch("lookup id " + std::to_string(id) + " outside " + shape_str(T));
    Tensor out(static_cast<int>(ids.size()), T.cols);
    for (size_t r = 0; r < ids.size(); ++r)
        for (int c = 0; c < T.cols; ++c)
            out.at(static_cast<int>(r), c) = T.at(ids[r], c);
    return push(std::move(out), any_needs({table}),
                [table, ids = std::move(ids)](Tape& t, Var self) {
                    const Tensor& g = t.node(self).grad;
                    for (size_t r = 0; r < ids.size(); ++r)
                        for (int c = 0; c < g.cols; ++c)
                            t.accum_at(table, ids[r], c, g.at(static_cast<int>(r), c));
                });
}

Var Tape::scatter_sum_rows(Var src, std::vector<int> dst_index, int n_out) {
    const Tensor& S = value(src);
    if (static_cast<int>(dst_index.size()) != S.rows)
        throw ShapeMismatch("scatter_sum_rows needs one destination per source row");
    for (int d : dst_index)
        if (d < 0 || d >= n_out)
            throw ShapeMismatch("scatter destination " + std::to_string(d) + " outside [0, " +
                                std::to_string(n_out) + ")");
    Tensor out(n_out, S.cols);
    for (size_t r = 0; r < dst_index.size(); ++r)
        for (int c = 0; c < S.cols; ++c)
            out.at(dst_index[r], c) += S.at(static_cast<int>(r), c);
    return push(std::move(out), any_needs({src}),
                [src, dst_index = std::move(dst_index)](Tape& t, Var self) {
                    const Tensor& g = t.node(self).grad;
                    const Tensor& S = t.value(src);
                    Tensor gs(S.rows, S.cols);
                    for (size_t r = 0; r < dst_index.size(); ++r)
                        for (int c = 0; c < S.cols; ++c)
                            gs.at(static_cast<int>(r), c) = g.at(dst_index[r], c);
                    t.accum(src, gs);
                });
}

Var Tape::bag_rows(Var table, std::vector<std::vector<int>> bags, bool mean) {
    const Tensor& T = value(table);
    for (const auto& bag : bags)
        for (int id : bag)
            if (id < 0 || id >= T.rows)
                throw ShapeMismatch("bag id " + std::to_string(id) + " outside " + shape_str(T));
    Tensor out(static_cast<int>(bags.size()), T.cols);
    for (size_t r = 0; r < bags.size(); ++r) {
        if (bags[r].empty()) continue;
        for (int id : bags[r])
            for (int c = 0; c < T.cols; ++c) out.at(static_cast<int>(r), c) += T.at(id, c);
        if (mean)
            for (int c = 0; c < T.cols; ++c)
                out.at(static_cast<int>(r), c) /= static_cast<double>(bags[r].size());
    }
    return push(std::move(out), any_needs({table}),
                [table, bags = std::move(bags), mean](Tape& t, Var self) {
                    const Tensor& g = t.node(self).grad;
                    for (size_t r = 0; r < bags.size(); ++r) {
                        if (bags[r].empty()) continue;
                        const double f =
                            mean ? 1.0 / static_cast<double>(bags[r].size()) : 1.0;
                        for (int id : bags[r])
                            for (int c = 0; c < g.cols; ++c)
                                t.accum_at(table, id, c, f * g.at(static_cast<int>(r), c));
                    }
                });
}

Var Tape::sum_rows(Var a) {
    const Tensor& A = value(a);
    Tensor out(A.rows, 1);
    for (int r = 0; r < A.rows; ++r) {
        double acc = 0.0;
        for (int c = 0; c < A.cols; ++c) acc += A.at(r, c);
        out.at(r, 0) = acc;
    }
    return push(std::move(out), any_needs({a}), [a](Tape& t, Var self) {
        const Tensor& g = t.node(self).grad;
        const Tensor& A = t.value(a);
        Tensor ga(A.rows, A.cols);
        for (int r = 0; r < A.rows; ++r)
            for (int c = 0; c < A.cols; ++c) ga.at(r, c) = g.at(r, 0);
        t.accum(a, ga);
    });
}

Var Tape::mean_rows(Var a) {
    const Tensor& A = value(a);
    if (A.cols == 0) throw ShapeMismatch("mean_rows of zero columns");
    return scale(sum_rows(a), 1.0 / A.cols);
}

Var Tape::logsumexp_rows(Var a) {
    const Tensor& A = value(a);
    if (A.cols == 0) throw ShapeMismatch("logsumexp_rows of zero columns");
    Tensor out(A.rows, 1);
    for (int r = 0; r < A.rows; ++r) {
        double mx = A.at(r, 0);
        for (int c = 1; c < A.cols; ++c) mx = std::max(mx, A.at(r, c));
        double acc = 0.0;
        for (int c = 0; c < A.cols; ++c) acc += std::exp(A.at(r, c) - mx);
        out.at(r, 0) = mx + std::log(acc);
    }
    return push(std::move(out), any_needs({a}), [a](Tape& t, Var self) {
        const Tensor& g = t.node(self).grad;
        const Tensor& A = t.value(a);
        const Tensor& L = t.node(self).value;
        Tensor ga(A.rows, A.cols);
        for (int r = 0; r < A.rows; ++r)
            for (int c = 0; c < A.cols; ++c)
                ga.at(r, c) = std::exp(A.at(r, c) - L.at(r, 0)) * g.at(r, 0);
        t.accum(a, ga);
    });
}

Var Tape::sum_all(Var a) {
    const Tensor& A = value(a);
    double acc = 0.0;
    for (double x : A.data) acc += x;
    return push(Tensor::scalar(acc), any_needs({a}), [a](Tape& t, Var self) {
        const double g = t.node(self).grad.data[0];
        const Tensor& A = t.value(a);
        t.accum(a, Tensor::full(A.rows, A.cols, g));
    });
}

Var Tape::mean_all(Var a) {
    const Tensor& A = value(a);
    if (A.size() == 0) throw ShapeMismatch("mean_all of empty tensor");
    return scale(sum_all(a), 1.0 / static_cast<double>(A.size()));
}

Var Tape::relu(Var a) {
    Tensor out = value(a);
    for (auto& x : out.data) x = x > 0.0 ? x : 0.0;
    return push(std::move(out), any_needs({a}), [a](Tape& t, Var self) {
        Tensor g = t.node(self).grad;
        const Tensor& A = t.value(a);
        for (size_t i = 0; i < g.size(); ++i)
            if (A.data[i] <= 0.0) g.data[i] = 0.0;
        t.accum(a, g);
    });
}

Var Tape::sigmoid(Var a) {
    Tensor out = value(a);
    for (auto& x : out.data) {
        if (x >= 0.0) {
            x = 1.0 / (1.0 + std::exp(-x));
        } else {
            const double e = std::exp(x);
            x = e / (1.0 + e);
        }
    }
    return push(std::move(out), any_needs({a}), [a](Tape& t, Var self) {
        Tensor g = t.node(self).grad;
        const Tensor& S = t.node(self).value;
        for (size_t i = 0; i < g.size(); ++i) g.data[i] *= S.data[i] * (1.0 - S.data[i]);
        t.accum(a, g);
    });
}

Var Tape::batch_norm_1d(Var x, Parameter& gamma, Parameter& beta, Parameter& running_mean,
                        Parameter& running_var, bool training, double momentum, double eps) {
    const int n = value(x).cols;
    auto check = [&](const Parameter& p, const char* what) {
        if (p.tensor.rows != 1 || p.tensor.cols != n)
            throw ShapeMismatch(std::string("batch_norm ") + what + " must be (1x" +
                                std::to_string(n) + "), got " + shape_str(p.tensor));
    };
    check(gamma, "gamma");
    check(beta, "beta");
    check(running_mean, "running mean");
    check(running_var, "running variance");
    if (value(x).rows == 0) throw ShapeMismatch("batch_norm of an empty batch");

    // bind the leaves before taking a reference to x: push can reallocate nodes
    const Var gv = leaf(gamma);
    const Var bv = leaf(beta);
    const Tensor& X = value(x);
    const int m = X.rows;

    Tensor mean(1, n), var(1, n);
    if (training) {
        for (int c = 0; c < n; ++c) {
            double acc = 0.0;
            for (int r = 0; r < m; ++r) acc += X.at(r, c);
            mean.at(0, c) = acc / m;
        }
        for (int c = 0; c < n; ++c) {
            double acc = 0.0;
            for (int r = 0; r < m; ++r) {
                const double d = X.at(r, c) - mean.at(0, c);
                acc += d * d;
            }
            var.at(0, c) = acc / m;
        }
        for (int c = 0; c < n; ++c) {
            running_mean.tensor.at(0, c) =
                (1.0 - momentum) * running_mean.tensor.at(0, c) + momentum * mean.at(0, c);
            running_var.tensor.at(0, c) =
                (1.0 - momentum) * running_var.tensor.at(0, c) + momentum * var.at(0, c);
        }
    } else {
        mean = running_mean.tensor;
        var = running_var.tensor;
    }

    Tensor inv_std(1, n);
    for (int c = 0; c < n; ++c) inv_std.at(0, c) = 1.0 / std::sqrt(var.at(0, c) + eps);
    Tensor xhat(m, n);
    for (int r = 0; r < m; ++r)
        for (int c = 0; c < n; ++c)
            xhat.at(r, c) = (X.at(r, c) - mean.at(0, c)) * inv_std.at(0, c);
    Tensor out(m, n);
    for (int r = 0; r < m; ++r)
        for (int c = 0; c < n; ++c)
            out.at(r, c) = gamma.tensor.at(0, c) * xhat.at(r, c) + beta.tensor.at(0, c);

    return push(std::move(out), any_needs({x, gv, bv}),
                [x, gv, bv, xhat = std::move(xhat), inv_std = std::move(inv_std),
                 training](Tape& t, Var self) {
                    const Tensor& g = t.node(self).grad;
                    const int m = g.rows, n = g.cols;
                    const Tensor& G = t.value(gv);
                    if (t.node(gv).needs_grad) {
                        Tensor gg(1, n);
                        for (int r = 0; r < m; ++r)
                            for (int c = 0; c < n; ++c) gg.at(0, c) += g.at(r, c) * xhat.at(r, c);
                        t.accum(gv, gg);
                    }
                    if (t.node(bv).needs_grad) {
                        Tensor gb(1, n);
                        for (int r = 0; r < m; ++r)
                            for (int c = 0; c < n; ++c) gb.at(0, c) += g.at(r, c);
                        t.accum(bv, gb);
                    }
                    if (!t.node(x).needs_grad) return;
                    Tensor gx(m, n);
                    if (training) {
                        // dx = gamma * inv_std * (g - mean(g) - xhat * mean(g*xhat))
                        for (int c = 0; c < n; ++c) {
                            double mg = 0.0, mgx = 0.0;
                            for (int r = 0; r < m; ++r) {
                                mg += g.at(r, c);
                                mgx += g.at(r, c) * xhat.at(r, c);
                            }
                            mg /= m;
                            mgx /= m;
                            const double a = G.at(0, c) * inv_std.at(0, c);
                            for (int r = 0; r < m; ++r)
                                gx.at(r, c) =
                                    a * (g.at(r, c) - mg - xhat.at(r, c) * mgx);
                        }
                    } else {
                        for (int c = 0; c < n; ++c) {
                            const double a = G.at(0, c) * inv_std.at(0, c);
                            for (int r = 0; r < m; ++r) gx.at(r, c) = a * g.at(r, c);
                        }
                    }
                    t.accum(x, gx);
                });
}

Var Tape::softmax_cross_entropy(Var logits, std::vector<int> labels) {
    const Tensor& X = value(logits);
    if (static_cast<int>(labels.size()) != X.rows)
        throw ShapeMismatch("need one label per logit row");
    for (int l : labels)
        if (l < 0 || l >= X.cols)
            throw ShapeMismatch("label " + std::to_string(l) + " outside " + shape_str(X));
    double total = 0.0;
    for (int r = 0; r < X.rows; ++r) {
        double mx = X.at(r, 0);
        for (int c = 1; c < X.cols; ++c) mx = std::max(mx, X.at(r, c));
        double acc = 0.0;
        for (int c = 0; c < X.cols; ++c) acc += std::exp(X.at(r, c) - mx);
        total += mx + std::log(acc) - X.at(r, labels[static_cast<size_t>(r)]);
    }
    const int m = X.rows;
    return push(Tensor::scalar(total / m), any_needs({logits}),
                [logits, labels = std::move(labels), m](Tape& t, Var self) {
                    const double g = t.node(self).grad.data[0];
                    const Tensor& X = t.value(logits);
                    Tensor gx(X.rows, X.cols);
                    for (int r = 0; r < X.rows; ++r) {
                        double mx = X.at(r, 0);
                        for (int c = 1; c < X.cols; ++c) mx = std::max(mx, X.at(r, c));
                        double acc = 0.0;
                        for (int c = 0; c < X.cols; ++c) acc += std::exp(X.at(r, c) - mx);
                        for (int c = 0; c < X.cols; ++c) {
                            const double p = std::exp(X.at(r, c) - mx) / acc;
                            const double onehot =
                                c == labels[static_cast<size_t>(r)] ? 1.0 : 0.0;
                            gx.at(r, c) = g * (p - onehot) / m;
                        }
                    }
                    t.accum(logits, gx);
                });
}

Var Tape::sigmoid_cross_entropy(Var logits, std::vector<double> targets) {
    const Tensor& X = value(logits);
    if (X.cols != 1) throw ShapeMismatch("sigmoid_cross_entropy expects (Mx1) logits");
    if (static_cast<int>(targets.size()) != X.rows)
        throw ShapeMismatch("need one target per logit row");
    double total = 0.0;
    for (int r = 0; r < X.rows; ++r) {
        const double x = X.at(r, 0);
        const double z = targets[static_cast<size_t>(r)];
        total += std::max(x, 0.0) - x * z + std::log1p(std::exp(-std::abs(x)));
    }
    const int m = X.rows;
    return push(Tensor::scalar(total / m), any_needs({logits}),
                [logits, targets = std::move(targets), m](Tape& t, Var self) {
                    const double g = t.node(self).grad.data[0];
                    const Tensor& X = t.value(logits);
                    Tensor gx(X.rows, 1);
                    for (int r = 0; r < X.rows; ++r) {
                        const double x = X.at(r, 0);
                        double s;
                        if (x >= 0.0) {
                            s = 1.0 / (1.0 + std::exp(-x));
                        } else {
                            const double e = std::exp(x);
                            s = e / (1.0 + e);
                        }
                        gx.at(r, 0) = g * (s - targets[static_cast<size_t>(r)]) / m;
                    }
                    t.accum(logits, gx);
                });
}

Var Tape::mse(Var pred, Var target) {
    const Tensor& P = value(pred);
    const Tensor& T = value(target);
    if (!P.same_shape(T)) throw ShapeMismatch("mse " + shape_str(P) + " vs " + shape_str(T));
    if (P.size() == 0) throw ShapeMismatch("mse of empty tensors");
    double total = 0.0;
    for (size_t i = 0; i < P.size(); ++i) {
        const double d = P.data[i] - T.data[i];
        total += d * d;
    }
    const double n = static_cast<double>(P.size());
    return push(Tensor::scalar(total / n), any_needs({pred, target}),
                [pred, target, n](Tape& t, Var self) {
                    const double g = t.node(self).grad.data[0];
                    const Tensor& P = t.value(pred);
                    const Tensor& T = t.value(target);
                    Tensor gp(P.rows, P.cols);
                    for (size_t i = 0; i < P.size(); ++i)
                        gp.data[i] = g * 2.0 * (P.data[i] - T.data[i]) / n;
                    if (t.node(pred).needs_grad) t.accum(pred, gp);
                    if (t.node(target).needs_grad) {
                        for (auto& x : gp.data) x = -x;
                        t.accum(target, gp);
                    }
                });
}

GradMap Tape::backward(Var output, const ParamStore& store) {
    Node& out = node(output);
    if (!out.value.is_scalar())
        throw NotScalar("backward needs a 1x1 output, got " + shape_str(out.value));
    if (!out.needs_grad)
        throw DetachedOutput("output does not depend on any trainable parameter");
    out.grad = Tensor::scalar(1.0);
    out.grad_alloc = true;
    for (Var v = output; v >= 0; --v) {
        Node& n = node(v);
        if (n.grad_alloc && n.back) n.back(*this, v);
    }
    GradMap grads;
    for (const auto& n : nodes_) {
        if (!n.bound) continue;
        if (n.grad_alloc)
            grads.emplace(n.bound->name, n.grad);
        else
            grads.emplace(n.bound->name, Tensor::zeros(n.value.rows, n.value.cols));
    }
    for (const auto& p : store.all())
        if (!grads.count(p->name))
            grads.emplace(p->name, Tensor::zeros(p->tensor.rows, p->tensor.cols));
    return grads;
}

void Adam::step(ParamStore& store, const GradMap& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const auto& up : store.all()) {
        Parameter& p = *up;
        if (!p.trainable) continue;
        const auto git = grads.find(p.name);
        const Tensor* g = git == grads.end() ? nullptr : &git->second;
        if (g && !g->same_shape(p.tensor))
            throw ShapeMismatch("gradient for '" + p.name + "' has shape " + shape_str(*g));
        const auto mit = moments_
                             .try_emplace(p.name,
                                          std::make_pair(
                                              Tensor::zeros(p.tensor.rows, p.tensor.cols),
                                              Tensor::zeros(p.tensor.rows, p.tensor.cols)))
                             .first;
        Tensor& m = mit->second.first;
        Tensor& v = mit->second.second;
        for (size_t i = 0; i < p.tensor.size(); ++i) {
            const double gi = g ? g->data[i] : 0.0;
            m.data[i] = cfg_.beta1 * m.data[i] + (1.0 - cfg_.beta1) * gi;
            v.data[i] = cfg_.beta2 * v.data[i] + (1.0 - cfg_.beta2) * gi * gi;
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            p.tensor.data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

Tensor glorot_uniform(int rows, int cols, Rng& rng) {
    const double a = std::sqrt(6.0 / (rows + cols));
    Tensor t(rows, cols);
    for (auto& x : t.data) x = rng.uniform(-a, a);
    return t;
}

Tensor near_identity(int n, Rng& rng, double noise) {
    Tensor t = Tensor::identity(n);
    for (auto& x : t.data) x += rng.uniform(-noise, noise);
    return t;
}

double grad_check(const std::function<Var(Tape&)>& f, ParamStore& store, double eps,
                  int coords_per_param, uint64_t seed) {
    GradMap analytic;
    {
        Tape tape;
        const Var out = f(tape);
        analytic = tape.backward(out, store);
    }
    auto eval = [&]() {
        Tape tape;
        return tape.value(f(tape)).scalar_value();
    };
    Rng rng(seed);
    double worst = 0.0;
    for (const auto& up : store.all()) {
        Parameter& p = *up;
        if (!p.trainable) continue;
        const Tensor& g = analytic.at(p.name);
        const int n = static_cast<int>(p.tensor.size());
        for (int ci : rng.sample_without_replacement(n, std::min(coords_per_param, n))) {
            const double orig = p.tensor.data[static_cast<size_t>(ci)];
            p.tensor.data[static_cast<size_t>(ci)] = orig + eps;
            const double fp = eval();
            p.tensor.data[static_cast<size_t>(ci)] = orig - eps;
            const double fm = eval();
            p.tensor.data[static_cast<size_t>(ci)] = orig;
            const double fd = (fp - fm) / (2.0 * eps);
            const double a = g.data[static_cast<size_t>(ci)];
            worst = std::max(worst, std::abs(a - fd) / std::max(1.0, std::abs(a)));
        }
    }
    return worst;
}

}  // namespace relcp
