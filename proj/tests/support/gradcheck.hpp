#pragma once

// Central finite-difference gradient oracle shared by the test suites.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mtca/rng.hpp"
#include "mtca/tensor.hpp"

namespace mtca::testing {

using LossBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

// |a - n| / max(|a|, |n|, floor). The floor keeps gradients that are zero up
// to rounding from reporting meaningless relative error.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline double evaluate_loss(const LossBuilder& build, const std::vector<Tensor>& inputs) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.leaf(t, false));
    return build(tape, vars).value()[0];
}

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t checked = 0;
};

// Compares tape gradients of every input element with central differences.
inline GradCheckResult check_gradients(const LossBuilder& build, std::vector<Tensor> inputs, double h = 1e-5,
                                       double floor = 1e-6) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.leaf(t, true));
    Var loss = build(tape, vars);
    tape.backward(loss);

    GradCheckResult result;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Tensor analytic = tape.grad(vars[k]);
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            const double saved = inputs[k][i];
            inputs[k][i] = saved + h;
            const double up = evaluate_loss(build, inputs);
            inputs[k][i] = saved - h;
            const double down = evaluate_loss(build, inputs);
            inputs[k][i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            result.max_relative_error =
                std::max(result.max_relative_error, relative_error(analytic[i], numeric, floor));
            ++result.checked;
        }
    }
    return result;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape), 0.0);
    for (auto& v : t.values()) v = lo + (hi - lo) * rng.uniform();
    return t;
}

}  // namespace mtca::testing
