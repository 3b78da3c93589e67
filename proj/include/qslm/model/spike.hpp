#pragma once

#include <cmath>
#include <numbers>

#include "qslm/tensor.hpp"

namespace qslm {

// Single-timestep Heaviside neuron: fires iff the input reaches the threshold.
inline double spike(double x, double threshold) noexcept { return x >= threshold ? 1.0 : 0.0; }

inline Tensor spike(const Tensor& x, double threshold) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<float>(spike(x[i], threshold));
    return out;
}

// Arctan surrogate used for training: a smooth step centred on the threshold,
//   s(x) = atan(pi (x - threshold)) / pi + 1/2,   s'(x) = 1 / (1 + (pi (x - threshold))^2).
inline double spike_surrogate(double x, double threshold) noexcept {
    return std::atan(std::numbers::pi * (x - threshold)) / std::numbers::pi + 0.5;
}

inline double spike_surrogate_grad(double x, double threshold) noexcept {
    const double z = std::numbers::pi * (x - threshold);
    return 1.0 / (1.0 + z * z);
}

inline double sigmoid(double x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace qslm
