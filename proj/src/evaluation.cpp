#include "mtca/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include <json.hpp>

#include "mtca/error.hpp"

namespace mtca {

namespace {

void check_pairs(std::span<const int> predictions, std::span<const int> labels) {
    if (predictions.size() != labels.size()) throw DimensionError("predictions and labels differ in length");
    if (labels.empty()) throw DimensionError("no samples to evaluate");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= static_cast<int>(kClasses) || predictions[i] < 0 ||
            predictions[i] >= static_cast<int>(kClasses)) {
            throw DimensionError("class id out of range at sample " + std::to_string(i));
        }
    }
}

std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
    check_pairs(predictions, labels);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

ConfusionMatrix confusion_matrix(std::span<const int> predictions, std::span<const int> labels) {
    check_pairs(predictions, labels);
    ConfusionMatrix m{};
    for (std::size_t i = 0; i < labels.size(); ++i) ++m[labels[i]][predictions[i]];
    return m;
}

std::array<ClassMetrics, kClasses> class_metrics(const ConfusionMatrix& m) {
    std::array<ClassMetrics, kClasses> out{};
    for (std::size_t c = 0; c < kClasses; ++c) {
        std::size_t predicted = 0;
        std::size_t actual = 0;
        for (std::size_t k = 0; k < kClasses; ++k) {
            predicted += m[k][c];
            actual += m[c][k];
        }
        out[c].support = actual;
        out[c].precision = predicted ? static_cast<double>(m[c][c]) / static_cast<double>(predicted) : 0.0;
        out[c].recall = actual ? static_cast<double>(m[c][c]) / static_cast<double>(actual) : 0.0;
    }
    return out;
}

double random_baseline(std::span<const int> labels, Rng& rng) {
    if (labels.empty()) throw DimensionError("random baseline needs at least one label");
    std::vector<int> guesses(labels.size());
    for (auto& g : guesses) {
        g = std::min(static_cast<int>(rng.uniform() * static_cast<double>(kClasses)), static_cast<int>(kClasses) - 1);
    }
    return accuracy(guesses, labels);
}

double ticker_following_baseline(std::span<const TickerObservation> history) {
    std::map<std::string, std::vector<const TickerObservation*>> by_ticker;
    for (const auto& o : history) by_ticker[o.ticker].push_back(&o);
    std::size_t scored = 0;
    std::size_t hits = 0;
    for (auto& [ticker, seq] : by_ticker) {
        std::stable_sort(seq.begin(), seq.end(),
                         [](const TickerObservation* a, const TickerObservation* b) { return a->date < b->date; });
        for (std::size_t i = 1; i < seq.size(); ++i) {
            if (!seq[i]->scored) continue;
            ++scored;
            hits += seq[i]->label == seq[i - 1]->label;
        }
    }
    return scored ? static_cast<double>(hits) / static_cast<double>(scored) : 0.0;
}

double spearman_rho(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) throw DimensionError("spearman: need two equal-length samples of size >= 2");
    const auto ra = average_ranks(a);
    const auto rb = average_ranks(b);
    const double n = static_cast<double>(a.size());
    const double mean = (n + 1.0) / 2.0;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        cov += (ra[i] - mean) * (rb[i] - mean);
        va += (ra[i] - mean) * (ra[i] - mean);
        vb += (rb[i] - mean) * (rb[i] - mean);
    }
    if (va == 0.0 || vb == 0.0) throw NumericError("spearman: a sample is constant");
    return cov / std::sqrt(va * vb);
}

EvalReport make_eval_report(std::string split, std::span<const int> predictions, std::span<const int> labels,
                            std::span<const TickerObservation> history, std::uint64_t seed) {
    EvalReport r;
    r.split = std::move(split);
    r.samples = labels.size();
    r.accuracy = accuracy(predictions, labels);
    r.confusion = confusion_matrix(predictions, labels);
    r.per_class = class_metrics(r.confusion);
    Rng rng(seed);
    r.random_baseline = random_baseline(labels, rng);
    r.ticker_following_baseline = ticker_following_baseline(history);
    return r;
}

std::string format_eval_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["split"] = r.split;
    j["samples"] = r.samples;
    j["accuracy"] = r.accuracy;
    auto& classes = j["per_class"] = nlohmann::ordered_json::array();
    for (std::size_t c = 0; c < kClasses; ++c) {
        classes.push_back({{"class", c},
                           {"precision", r.per_class[c].precision},
                           {"recall", r.per_class[c].recall},
                           {"support", r.per_class[c].support}});
    }
    j["confusion"] = r.confusion;
    j["baselines"] = {{"RB", r.random_baseline}, {"TFB", r.ticker_following_baseline}};
    return j.dump(2) + '\n';
}

EvalReport parse_eval_json(std::string_view text) {
    try {
        const auto j = nlohmann::json::parse(text);
        EvalReport r;
        r.split = j.at("split").get<std::string>();
        r.samples = j.at("samples").get<std::size_t>();
        r.accuracy = j.at("accuracy").get<double>();
        const auto& classes = j.at("per_class");
        if (classes.size() != kClasses) throw FormatError("eval report: expected 3 classes");
        for (std::size_t c = 0; c < kClasses; ++c) {
            r.per_class[c] = {classes[c].at("precision").get<double>(), classes[c].at("recall").get<double>(),
                              classes[c].at("support").get<std::size_t>()};
        }
        r.confusion = j.at("confusion").get<ConfusionMatrix>();
        r.random_baseline = j.at("baselines").at("RB").get<double>();
        r.ticker_following_baseline = j.at("baselines").at("TFB").get<double>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("eval report: ") + e.what());
    }
}

std::string format_eval_table(const EvalReport& r) {
    char buf[160];
    std::string s;
    std::snprintf(buf, sizeof buf, "split: %s  (n = %zu)\n\n", r.split.c_str(), r.samples);
    s += buf;
    s += "Model             Accuracy\n";
    s += "----------------  --------\n";
    std::snprintf(buf, sizeof buf, "RB                  %.4f\nTFB                 %.4f\nMTCA                %.4f\n\n",
                  r.random_baseline, r.ticker_following_baseline, r.accuracy);
    s += buf;
    s += "Class  Precision  Recall  Support\n";
    for (std::size_t c = 0; c < kClasses; ++c) {
        std::snprintf(buf, sizeof buf, "%5zu  %9.4f  %6.4f  %7zu\n", c, r.per_class[c].precision, r.per_class[c].recall,
                      r.per_class[c].support);
        s += buf;
    }
    s += "\nConfusion (rows: true, cols: predicted)\n";
    for (const auto& row : r.confusion) {
        std::snprintf(buf, sizeof buf, "%8zu %8zu %8zu\n", row[0], row[1], row[2]);
        s += buf;
    }
    return s;
}

}  // namespace mtca
