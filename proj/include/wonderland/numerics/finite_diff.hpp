#pragma once

#include <algorithm>
#include <functional>

#include "wonderland/numerics/tensor.hpp"

namespace wonderland {

using ScalarFn = std::function<Tensor(const Tensor &)>;

/// Central-difference gradient estimate of a scalar function, one element at a time.
///
/// The step is rounded down to a power of two so x +- h is exact in float32 and
/// linear or quadratic functions of exact inputs difference without roundoff.
inline Tensor finite_diff_grad(const ScalarFn &f, const Tensor &x, double h) {
    if (!(h > 0.0) || !std::isfinite(h)) throw ContractError("finite difference step must be positive");
    h = std::exp2(std::floor(std::log2(h)));
    NoGradGuard no_grad;
    std::vector<float> base(x.data().begin(), x.data().end());
    std::vector<float> grad(base.size());
    auto eval = [&](std::size_t i, double delta) {
        std::vector<float> v = base;
        v[i] = static_cast<float>(static_cast<double>(base[i]) + delta);
        const Tensor y = f(Tensor(x.shape(), std::move(v)));
        if (y.numel() != 1) throw ContractError("finite_diff_grad needs a scalar-valued function");
        const double value = y.item();
        if (!std::isfinite(value)) throw NumericError("non-finite function value at element " + std::to_string(i));
        return value;
    };
    for (std::size_t i = 0; i < base.size(); ++i) {
        // Use the step actually representable in float32 for the denominator.
        const double hi = static_cast<float>(static_cast<double>(base[i]) + h);
        const double lo = static_cast<float>(static_cast<double>(base[i]) - h);
        grad[i] = static_cast<float>((eval(i, h) - eval(i, -h)) / (hi - lo));
    }
    return Tensor(x.shape(), std::move(grad));
}

/// max|a-b| / max(max|b|, floor): error relative to the reference's scale.
inline double relative_error(std::span<const float> actual, std::span<const float> reference, double floor = 1e-6) {
    if (actual.size() != reference.size()) throw ShapeError("relative_error size mismatch");
    double diff = 0.0, mag = 0.0;
    for (std::size_t i = 0; i < actual.size(); ++i) {
        diff = std::max(diff, std::abs(static_cast<double>(actual[i]) - reference[i]));
        mag = std::max(mag, std::abs(static_cast<double>(reference[i])));
    }
    return diff / std::max(mag, floor);
}

}  // namespace wonderland
