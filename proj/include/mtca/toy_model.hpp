#pragma once

#include <span>
#include <vector>

namespace mtca {

// Multinomial logistic regression small enough for explicit Hessians. θ holds
// the [classes, features] weights row-major followed by the class biases.
struct SoftmaxRegression {
    std::size_t features = 0;
    std::size_t classes = 0;

    std::size_t parameter_count() const noexcept { return classes * (features + 1); }
    std::vector<double> probabilities(std::span<const double> theta, std::span<const double> x) const;
    // Cross-entropy against a (possibly soft) target distribution.
    double loss(std::span<const double> theta, std::span<const double> x, std::span<const double> target) const;
    std::vector<double> gradient(std::span<const double> theta, std::span<const double> x,
                                 std::span<const double> target) const;
};

}  // namespace mtca
