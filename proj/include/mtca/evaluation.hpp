#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mtca/rng.hpp"

namespace mtca {

inline constexpr std::size_t kClasses = 3;

double accuracy(std::span<const int> predictions, std::span<const int> labels);

// counts[true label][predicted label]
using ConfusionMatrix = std::array<std::array<std::size_t, kClasses>, kClasses>;
ConfusionMatrix confusion_matrix(std::span<const int> predictions, std::span<const int> labels);

struct ClassMetrics {
    double precision = 0.0;  // 0 when the class is never predicted
    double recall = 0.0;     // 0 when the class never occurs
    std::size_t support = 0;

    friend bool operator==(const ClassMetrics&, const ClassMetrics&) = default;
};
std::array<ClassMetrics, kClasses> class_metrics(const ConfusionMatrix& m);

// Accuracy of labels drawn by inverting the uniform CDF over the classes.
double random_baseline(std::span<const int> labels, Rng& rng);

struct TickerObservation {
    std::string ticker;
    std::string date;
    int label = 0;
    bool scored = true;  // counts toward the accuracy when it has a predecessor
};

// Predicts each observation's label as the previous label of the same ticker
// in date order. First observations have no predecessor and are not scored.
// Returns 0 when nothing is scored.
double ticker_following_baseline(std::span<const TickerObservation> history);

// Pearson correlation of average ranks.
double spearman_rho(std::span<const double> a, std::span<const double> b);

struct EvalReport {
    std::string split;
    std::size_t samples = 0;
    double accuracy = 0.0;
    std::array<ClassMetrics, kClasses> per_class{};
    ConfusionMatrix confusion{};
    double random_baseline = 0.0;
    double ticker_following_baseline = 0.0;

    friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

EvalReport make_eval_report(std::string split, std::span<const int> predictions, std::span<const int> labels,
                            std::span<const TickerObservation> history, std::uint64_t seed);

std::string format_eval_json(const EvalReport& r);
EvalReport parse_eval_json(std::string_view text);
std::string format_eval_table(const EvalReport& r);

}  // namespace mtca
