#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

#include "relcp/errors.hpp"

namespace relcp {

// Dense 2-D row-major float64 matrix. Vectors are 1xN or Nx1, scalars 1x1.
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * static_cast<size_t>(c), 0.0) {}

    static Tensor zeros(int r, int c) { return Tensor(r, c); }

    static Tensor full(int r, int c, double v) {
        Tensor t(r, c);
        for (auto& x : t.data) x = v;
        return t;
    }

    static Tensor identity(int n) {
        Tensor t(n, n);
        for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
        return t;
    }

    static Tensor scalar(double v) {
        Tensor t(1, 1);
        t.data[0] = v;
        return t;
    }

    static Tensor from(std::initializer_list<std::initializer_list<double>> rows_in) {
        Tensor t(static_cast<int>(rows_in.size()),
                 rows_in.size() ? static_cast<int>(rows_in.begin()->size()) : 0);
        int r = 0;
        for (const auto& row : rows_in) {
            if (static_cast<int>(row.size()) != t.cols)
                throw ShapeMismatch("ragged initializer");
            int c = 0;
            for (double v : row) t.at(r, c++) = v;
            ++r;
        }
        return t;
    }

    double& at(int r, int c) {
        return data[static_cast<size_t>(r) * static_cast<size_t>(cols) + static_cast<size_t>(c)];
    }
    double at(int r, int c) const {
        return data[static_cast<size_t>(r) * static_cast<size_t>(cols) + static_cast<size_t>(c)];
    }

    size_t size() const { return data.size(); }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
    bool is_scalar() const { return rows == 1 && cols == 1; }
    double scalar_value() const {
        if (!is_scalar()) throw NotScalar("tensor is not 1x1");
        return data[0];
    }
};

inline std::string shape_str(const Tensor& t) {
    return "(" + std::to_string(t.rows) + "x" + std::to_string(t.cols) + ")";
}

}  // namespace relcp
