#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "metareg/error.hpp"

namespace metareg {

// Dense row-major matrix of doubles. Deliberately minimal: the kernels in
// this project walk raw rows, so all we need is contiguous storage.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<const double> row(std::size_t r) const {
        return {data.data() + r * cols, cols};
    }
    std::span<double> row(std::size_t r) {
        return {data.data() + r * cols, cols};
    }

    bool operator==(const Matrix&) const = default;
};

inline Matrix take_rows(const Matrix& m, std::span<const std::size_t> idx) {
    Matrix out(idx.size(), m.cols);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= m.rows) throw Error("take_rows: row index out of range");
        for (std::size_t j = 0; j < m.cols; ++j) out(i, j) = m(idx[i], j);
    }
    return out;
}

inline Matrix column_matrix(std::span<const double> values) {
    Matrix out(values.size(), 1);
    for (std::size_t i = 0; i < values.size(); ++i) out(i, 0) = values[i];
    return out;
}

}  // namespace metareg
