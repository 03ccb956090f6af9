#pragma once

// Influence validation on a 27-parameter softmax regression: TracIn+ scores of
// 20 perturbations against a leave-one-in retraining oracle, and the exact
// influence solve against an analytic Hessian with Gaussian elimination.

#include <algorithm>
#include <cmath>
#include <vector>

#include "mtca/counterfactual.hpp"
#include "mtca/evaluation.hpp"
#include "mtca/toy_model.hpp"

namespace mtca::testing {

struct ToyProblem {
    SoftmaxRegression model{8, 3};
    std::vector<std::vector<double>> xs;
    std::vector<std::vector<double>> targets;
};

inline ToyProblem make_toy_problem(std::uint64_t seed, std::size_t n = 60) {
    ToyProblem p;
    Rng rng(seed);
    std::vector<std::vector<double>> means(3, std::vector<double>(8));
    for (auto& m : means)
        for (auto& v : m) v = rng.normal();
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = rng.below(3);
        std::vector<double> x(8);
        for (std::size_t f = 0; f < 8; ++f) x[f] = means[c][f] + 0.8 * rng.normal();
        p.xs.push_back(std::move(x));
        std::vector<double> t(3, 0.0);
        t[c] = 1.0;
        p.targets.push_back(std::move(t));
    }
    return p;
}

// Mean training gradient, optionally with one extra weighted instance.
inline std::vector<double> training_gradient(const ToyProblem& p, std::span<const double> theta,
                                             const std::vector<double>* extra_x = nullptr,
                                             const std::vector<double>* extra_t = nullptr) {
    std::vector<double> g(p.model.parameter_count(), 0.0);
    for (std::size_t i = 0; i < p.xs.size(); ++i) {
        const auto gi = p.model.gradient(theta, p.xs[i], p.targets[i]);
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += gi[k];
    }
    if (extra_x) {
        const auto ge = p.model.gradient(theta, *extra_x, *extra_t);
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += ge[k];
    }
    for (double& v : g) v /= static_cast<double>(p.xs.size());
    return g;
}

// Analytic Hessian of the mean training CE: Σ (diag(p) − ppᵀ) ⊗ x̃x̃ᵀ / n.
inline std::vector<double> analytic_hessian(const ToyProblem& p, std::span<const double> theta) {
    const std::size_t F = p.model.features, C = p.model.classes, n = p.model.parameter_count();
    std::vector<double> h(n * n, 0.0);
    auto index = [&](std::size_t c, std::size_t f) { return f < F ? c * F + f : C * F + c; };
    for (const auto& x : p.xs) {
        const auto prob = p.model.probabilities(theta, x);
        std::vector<double> xt(x);
        xt.push_back(1.0);
        for (std::size_t a = 0; a < C; ++a)
            for (std::size_t b = 0; b < C; ++b) {
                const double w = (a == b ? prob[a] : 0.0) - prob[a] * prob[b];
                for (std::size_t f = 0; f <= F; ++f)
                    for (std::size_t g = 0; g <= F; ++g) h[index(a, f) * n + index(b, g)] += w * xt[f] * xt[g];
            }
    }
    for (double& v : h) v /= static_cast<double>(p.xs.size());
    return h;
}

// Gaussian elimination with partial pivoting.
inline std::vector<double> gaussian_solve(std::vector<double> a, std::vector<double> b) {
    const std::size_t n = b.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r * n + col]) > std::abs(a[pivot * n + col])) pivot = r;
        if (pivot != col) {
            for (std::size_t k = 0; k < n; ++k) std::swap(a[col * n + k], a[pivot * n + k]);
            std::swap(b[col], b[pivot]);
        }
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a[r * n + col] / a[col * n + col];
            for (std::size_t k = col; k < n; ++k) a[r * n + k] -= f * a[col * n + k];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n);
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t k = i + 1; k < n; ++k) s -= a[i * n + k] * x[k];
        x[i] = s / a[i * n + i];
    }
    return x;
}

struct InfluenceExperiment {
    double spearman = 0.0;
    std::vector<double> tracin;
    std::vector<double> oracle;
    double max_influence_error = 0.0;  // exact_influence vs independent solve
    double influence_norm = 0.0;
};

inline InfluenceExperiment run_influence_experiment(std::uint64_t seed) {
    constexpr std::size_t kSteps = 40;
    constexpr std::size_t kEvery = 4;
    constexpr std::size_t kPerturbations = 20;
    constexpr double kLr = 0.5;

    const auto p = make_toy_problem(seed);
    const std::size_t n = p.model.parameter_count();
    auto gd = [&](std::vector<double> theta, std::size_t steps, const std::vector<double>* xe,
                  const std::vector<double>* te) {
        for (std::size_t s = 0; s < steps; ++s) {
            const auto g = training_gradient(p, theta, xe, te);
            for (std::size_t k = 0; k < n; ++k) theta[k] -= kLr * g[k];
        }
        return theta;
    };

    // Dense trace: a checkpoint at the start of every kEvery-step segment.
    std::vector<std::vector<double>> trace;
    std::vector<double> theta(n, 0.0);
    for (std::size_t s = 0; s < kSteps; s += kEvery) {
        trace.push_back(theta);
        theta = gd(theta, kEvery, nullptr, nullptr);
    }

    Rng rng(derive_seed(seed, {1}));
    const auto original = p.xs[rng.below(p.xs.size())];
    std::vector<std::vector<double>> perturbed;
    for (std::size_t k = 0; k < kPerturbations; ++k) {
        // Swap a random block of features for those of another instance.
        auto x = original;
        const auto& donor = p.xs[rng.below(p.xs.size())];
        const std::size_t start = rng.below(6);
        const std::size_t len = 2 + rng.below(3);
        for (std::size_t f = start; f < std::min<std::size_t>(8, start + len); ++f) x[f] = donor[f];
        perturbed.push_back(std::move(x));
    }

    InfluenceExperiment out;
    for (const auto& xp : perturbed) {
        std::vector<CheckpointGradients> grads;
        double oracle = 0.0;
        for (const auto& th : trace) {
            const auto label = argmax(p.model.probabilities(th, original));
            std::vector<double> t(3, 0.0);
            t[label] = 1.0;
            grads.push_back({p.model.gradient(th, original, t), p.model.gradient(th, xp, t)});
            // Retrain the segment from this checkpoint with and without the
            // perturbed instance (carrying the original's predicted label).
            const auto with = gd(th, kEvery, &xp, &t);
            const auto without = gd(th, kEvery, nullptr, nullptr);
            auto pc_at = [&](const std::vector<double>& w) {
                return p.model.loss(w, xp, t) - p.model.loss(w, original, t);
            };
            oracle += pc_at(with) - pc_at(without);
        }
        out.tracin.push_back(tracin_plus(grads));
        out.oracle.push_back(oracle);
    }
    out.spearman = spearman_rho(out.tracin, out.oracle);

    // Exact influence at the final parameters, per perturbation.
    const auto label = argmax(p.model.probabilities(theta, original));
    std::vector<double> t(3, 0.0);
    t[label] = 1.0;
    const auto g_orig = p.model.gradient(theta, original, t);
    auto hessian = analytic_hessian(p, theta);
    for (std::size_t i = 0; i < n; ++i) hessian[i * n + i] += 1e-3;
    GradientFn mean_grad = [&](std::span<const double> th) { return training_gradient(p, th); };
    for (const auto& xp : perturbed) {
        const auto g_pert = p.model.gradient(theta, xp, t);
        const auto got = exact_influence(g_orig, g_pert, theta, mean_grad, 1e-3);
        std::vector<double> rhs(n);
        for (std::size_t k = 0; k < n; ++k) rhs[k] = g_orig[k] - g_pert[k];
        const auto want = gaussian_solve(hessian, rhs);
        for (std::size_t k = 0; k < n; ++k) {
            out.max_influence_error = std::max(out.max_influence_error, std::abs(got[k] - want[k]));
            out.influence_norm = std::max(out.influence_norm, std::abs(want[k]));
        }
    }
    return out;
}

}  // namespace mtca::testing
