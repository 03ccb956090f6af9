#include "mtca/toy_model.hpp"

#include <algorithm>
#include <cmath>

#include "mtca/error.hpp"
#include "mtca/ops.hpp"

namespace mtca {

std::vector<double> SoftmaxRegression::probabilities(std::span<const double> theta, std::span<const double> x) const {
    if (theta.size() != parameter_count()) throw DimensionError("softmax regression: parameter count mismatch");
    if (x.size() != features) throw DimensionError("softmax regression: feature count mismatch");
    std::vector<double> z(classes);
    for (std::size_t c = 0; c < classes; ++c) {
        double s = theta[classes * features + c];
        for (std::size_t f = 0; f < features; ++f) s += theta[c * features + f] * x[f];
        z[c] = s;
    }
    const double peak = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (double& v : z) total += (v = std::exp(v - peak));
    for (double& v : z) v /= total;
    return z;
}

double SoftmaxRegression::loss(std::span<const double> theta, std::span<const double> x,
                               std::span<const double> target) const {
    const auto p = probabilities(theta, x);
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) s -= target[c] * std::log(std::max(p[c], ops::kProbabilityFloor));
    return s;
}

std::vector<double> SoftmaxRegression::gradient(std::span<const double> theta, std::span<const double> x,
                                                std::span<const double> target) const {
    const auto p = probabilities(theta, x);
    double mass = 0.0;
    for (double t : target) mass += t;
    std::vector<double> g(parameter_count(), 0.0);
    for (std::size_t c = 0; c < classes; ++c) {
        const double r = mass * p[c] - target[c];
        for (std::size_t f = 0; f < features; ++f) g[c * features + f] = r * x[f];
        g[classes * features + c] = r;
    }
    return g;
}

}  // namespace mtca
