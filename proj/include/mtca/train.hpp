#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mtca/encoder.hpp"

namespace mtca {

struct TrainConfig {
    double lr = 1e-5;
    std::size_t batch = 64;
    double weight_decay = 0.01;  // γ
    double dropout = 0.2;
    double alpha = 0.3;
    std::size_t rounds = 2;
    std::size_t epochs_per_round = 40;
    std::uint64_t seed = 0;
    std::size_t checkpoint_every = 5;
    // Base cross-entropy over the mean of both dropout passes instead of the
    // first pass only.
    bool average_passes = false;
    // Stop adding rounds once validation accuracy gains less than the delta.
    bool early_stop = false;
    double early_stop_delta = 1e-3;

    void validate() const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct LossTerms {
    Var total;
    Var cross_entropy;
    Var kl;  // KL(F1||F2) + KL(F2||F1), before the α/2 weight
    Var first_probabilities;
};

// CE + (α/2)·[KL(F1‖F2) + KL(F2‖F1)] over two dropout passes that share
// `params`. Dropout masks are drawn from `rng` in pass order.
LossTerms kl_regularized_loss(Tape& tape, const Encoder& encoder, std::span<const Var> params,
                              const EncodedTranscript& input, std::span<const double> target, double alpha,
                              Rng& rng, bool average_passes = false);

struct AdamWParams {
    double lr = 1e-5;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamWState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t step = 0;

    friend bool operator==(const AdamWState&, const AdamWState&) = default;
};

// Decoupled weight decay followed by the bias-corrected moment step, in the
// same operation order as torch.optim.AdamW (up to last-bit rounding).
void adamw_step(std::span<double> params, std::span<const double> grads, AdamWState& state, const AdamWParams& p);

struct TrainingExample {
    EncodedTranscript input;
    std::vector<double> target;
};

struct LabeledInput {
    EncodedTranscript input;
    int label = 0;
};

struct MetricRecord {
    std::size_t round = 0;
    std::size_t epoch = 0;
    std::string split;
    double loss = 0.0;
    double accuracy = 0.0;

    friend bool operator==(const MetricRecord&, const MetricRecord&) = default;
};

std::string format_metric(const MetricRecord& m);
std::string format_metrics(std::span<const MetricRecord> records);
std::vector<MetricRecord> parse_metrics_text(std::string_view text);

// Parameter snapshots saved during one training round.
struct CheckpointTrace {
    struct Entry {
        std::uint64_t step = 0;
        ParameterSet params;
        double lr = 0.0;

        friend bool operator==(const Entry&, const Entry&) = default;
    };

    EncoderConfig config;
    std::vector<Entry> entries;

    void validate() const;
    Encoder model(std::size_t i) const;

    friend bool operator==(const CheckpointTrace&, const CheckpointTrace&) = default;
};

std::vector<std::uint8_t> serialize_trace(const CheckpointTrace& trace);
CheckpointTrace deserialize_trace(std::span<const std::uint8_t> bytes);
void save_trace(const std::filesystem::path& path, const CheckpointTrace& trace);
CheckpointTrace load_trace(const std::filesystem::path& path);

struct RoundResult {
    Encoder encoder;
    CheckpointTrace trace;
    std::vector<MetricRecord> metrics;
};

// Mean CE against the labels and accuracy of the eval-mode argmax.
MetricRecord evaluate_split(const Encoder& encoder, std::span<const LabeledInput> data, std::string split,
                            std::size_t round, std::size_t epoch);

// epochs_per_round epochs of seeded shuffled mini-batches over `pool`,
// starting from `encoder`. A snapshot is kept every checkpoint_every epochs
// and after the last one. `validation` may be empty.
RoundResult train_round(std::span<const TrainingExample> pool, Encoder encoder, const TrainConfig& cfg,
                        std::size_t round, std::span<const LabeledInput> validation = {});

std::vector<double> one_hot(std::size_t label, std::size_t classes);
std::vector<double> uniform_target(std::size_t classes);

}  // namespace mtca
