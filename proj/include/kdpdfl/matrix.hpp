#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace kdpdfl {

// Dense row-major matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    bool empty() const { return rows == 0 || cols == 0; }

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

// Copies the listed rows of `source` into a new matrix, in the given order.
Matrix gather_rows(const Matrix& source, std::span<const std::size_t> indices);

}  // namespace kdpdfl
