#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qslm/error.hpp"

namespace qslm {

/// Shaped, row-major array of 32-bit floats. Parameters and public model
/// outputs are Tensors; this is also the unit of quantization.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(element_count(shape_), 0.0f) {}

    Tensor(std::vector<std::size_t> shape, std::vector<float> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (element_count(shape_) != data_.size()) {
            throw InputError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape product " + std::to_string(element_count(shape_)));
        }
    }

    static std::size_t element_count(const std::vector<std::size_t>& shape) {
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    }

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }

    std::span<float> values() noexcept { return data_; }
    std::span<const float> values() const noexcept { return data_; }
    float* data() noexcept { return data_.data(); }
    const float* data() const noexcept { return data_.data(); }

    float& operator[](std::size_t i) noexcept { return data_[i]; }
    float operator[](std::size_t i) const noexcept { return data_[i]; }

    // 2-D access; rows are the leading dimension.
    float& at(std::size_t r, std::size_t c) noexcept { return data_[r * shape_.back() + c]; }
    float at(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_.back() + c]; }

    bool all_finite() const noexcept {
        for (float v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    void fill(float v) noexcept { std::fill(data_.begin(), data_.end(), v); }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::vector<std::size_t> shape_;
    std::vector<float> data_;
};

inline std::string shape_string(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// Double-precision activation matrix used inside the forward/backward passes.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double* row(std::size_t r) noexcept { return data.data() + r * cols; }
    const double* row(std::size_t r) const noexcept { return data.data() + r * cols; }
    double& operator()(std::size_t r, std::size_t c) noexcept { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data[r * cols + c]; }

    bool all_finite() const noexcept {
        for (double v : data) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }
};

// out[rows x n] = x[rows x k] * w[k x n], w stored row-major as a float tensor.
inline Mat matmul(const Mat& x, const Tensor& w) {
    const std::size_t k = w.dim(0);
    const std::size_t n = w.dim(1);
    Mat out(x.rows, n);
    const float* wd = w.data();
    for (std::size_t r = 0; r < x.rows; ++r) {
        const double* xr = x.row(r);
        double* o = out.row(r);
        for (std::size_t i = 0; i < k; ++i) {
            const double xi = xr[i];
            if (xi == 0.0) continue;
            const float* wr = wd + i * n;
            for (std::size_t j = 0; j < n; ++j) o[j] += xi * static_cast<double>(wr[j]);
        }
    }
    return out;
}

// Same product when every entry of x is 0 or 1: a sum of the selected rows of w.
inline Mat matmul_binary(const Mat& x, const Tensor& w) {
    const std::size_t k = w.dim(0);
    const std::size_t n = w.dim(1);
    Mat out(x.rows, n);
    const float* wd = w.data();
    for (std::size_t r = 0; r < x.rows; ++r) {
        const double* xr = x.row(r);
        double* o = out.row(r);
        for (std::size_t i = 0; i < k; ++i) {
            if (xr[i] == 0.0) continue;
            const float* wr = wd + i * n;
            for (std::size_t j = 0; j < n; ++j) o[j] += static_cast<double>(wr[j]);
        }
    }
    return out;
}

}  // namespace qslm
