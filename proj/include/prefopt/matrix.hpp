#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace prefopt {

// Dense row-major matrix. Used for per-position logits (rows = response
// positions, cols = vocabulary) and their gradients.
template <typename Real>
struct MatrixT {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<Real> data;

    MatrixT() = default;
    MatrixT(std::size_t r, std::size_t c, Real fill = Real(0))
        : rows(r), cols(c), data(r * c, fill) {}

    Real& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    const Real& at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::span<Real> row(std::size_t i) { return {data.data() + i * cols, cols}; }
    std::span<const Real> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

    bool same_shape(const MatrixT& other) const {
        return rows == other.rows && cols == other.cols;
    }
};

using Matrix = MatrixT<double>;

} // namespace prefopt
