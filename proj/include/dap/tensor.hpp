#pragma once

#include <array>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace dap {

// Dense row-major float64 matrix. Every tensor in the library is rank 2; a
// scalar is 1x1 and a vector is 1xn.
class Tensor {
public:
    using Shape = std::array<std::size_t, 2>;

    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
    Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor(1, 1, v); }
    static Tensor row(std::vector<double> values);
    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor identity(std::size_t n);

    std::size_t rows() const noexcept { return shape_[0]; }
    std::size_t cols() const noexcept { return shape_[1]; }
    Shape shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }
    bool is_scalar() const noexcept { return data_.size() == 1; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // Value of a 1x1 tensor.
    double item() const;

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::span<const double> row_span(std::size_t r) const {
        return std::span<const double>(data_).subspan(r * shape_[1], shape_[1]);
    }

    Tensor transpose() const;
    bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
    bool all_finite() const noexcept;

    // Rows selected by index, in the given order.
    Tensor gather_rows(std::span<const std::size_t> indices) const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_{0, 0};
    std::vector<double> data_;
};

std::string shape_string(const Tensor::Shape& s);

}  // namespace dap
