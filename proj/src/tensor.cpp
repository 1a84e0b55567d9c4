#include "dap/tensor.hpp"

#include <cmath>

#include "dap/errors.hpp"

namespace dap {

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : shape_{rows, cols}, data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : shape_{rows, cols}, data_(std::move(data)) {
    if (data_.size() != rows * cols) {
        throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_string(shape_));
    }
}

Tensor Tensor::row(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor(1, n, std::move(values));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("ragged initializer for tensor");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor(r, c, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

double Tensor::item() const {
    if (data_.size() != 1) {
        throw DimensionError("item() on non-scalar tensor of shape " + shape_string(shape_));
    }
    return data_[0];
}

Tensor Tensor::transpose() const {
    Tensor t(shape_[1], shape_[0]);
    for (std::size_t r = 0; r < shape_[0]; ++r)
        for (std::size_t c = 0; c < shape_[1]; ++c) t(c, r) = (*this)(r, c);
    return t;
}

bool Tensor::all_finite() const noexcept {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor Tensor::gather_rows(std::span<const std::size_t> indices) const {
    Tensor out(indices.size(), shape_[1]);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= shape_[0]) throw DimensionError("gather_rows index out of range");
        const auto src = row_span(indices[i]);
        std::copy(src.begin(), src.end(), out.data_.begin() + i * shape_[1]);
    }
    return out;
}

std::string shape_string(const Tensor::Shape& s) {
    return "[" + std::to_string(s[0]) + "x" + std::to_string(s[1]) + "]";
}

}  // namespace dap
