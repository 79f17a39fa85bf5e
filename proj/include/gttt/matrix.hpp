#pragma once

#include <cstddef>
#include <vector>

namespace gttt {

// Dense row-major matrix of doubles. Only the handful of kernels the models
// need live here.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    bool same_shape(const Matrix& other) const {
        return rows == other.rows && cols == other.cols;
    }
};

// c = a * b
Matrix matmul(const Matrix& a, const Matrix& b);

// c = a^T * b, without materializing the transpose
Matrix transpose_matmul(const Matrix& a, const Matrix& b);

// c = a * b^T, without materializing the transpose
Matrix matmul_transpose(const Matrix& a, const Matrix& b);

}  // namespace gttt
