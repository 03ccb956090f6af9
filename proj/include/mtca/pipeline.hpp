#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mtca/config_file.hpp"
#include "mtca/counterfactual.hpp"
#include "mtca/data.hpp"
#include "mtca/encoder.hpp"
#include "mtca/evaluation.hpp"
#include "mtca/topic.hpp"
#include "mtca/train.hpp"

namespace mtca {

struct PipelineConfig {
    EncoderConfig encoder;  // dropout comes from train.dropout
    TrainConfig train;
    AugmentConfig augment;
    TopicModelConfig topics;
    std::size_t horizon_days = 3;  // volatility window after the call

    void validate() const;
    // Encoder config with the training dropout applied.
    EncoderConfig model_config() const;
};

// Unknown keys are rejected. Every field has a default.
PipelineConfig read_pipeline_config(KeyValueFile& kv);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
// Every key, one per line; parses back to the same config.
std::string format_pipeline_config(const PipelineConfig& cfg);

struct PreparedData {
    DataSplit split;
    std::vector<CrossDomainSentence> cross_domain;
    EmbeddingTable embeddings;
    TopicSet topics;
    TopicHead topic_head;
    // Transcript sentences in split order, then cross-domain sentences.
    std::vector<AssignmentRow> assignments;

    const std::vector<TranscriptRecord>& records(std::string_view split_name) const;
};

// Labels come from `prices` when given, otherwise from volatilities carried
// by the records, otherwise from their labels. Thresholds are fit on the
// training split.
PreparedData prepare_data(std::vector<TranscriptRecord> transcripts, std::vector<CrossDomainSentence> cross_domain,
                          EmbeddingTable embeddings, TopicSet topics, const PriceTable* prices,
                          const PipelineConfig& cfg);

namespace prepared_files {
inline constexpr char kTrain[] = "train.jsonl";
inline constexpr char kVal[] = "val.jsonl";
inline constexpr char kTest[] = "test.jsonl";
inline constexpr char kCrossDomain[] = "cross_domain.jsonl";
inline constexpr char kEmbeddings[] = "embeddings.memb";
inline constexpr char kTopics[] = "topics.tsv";
inline constexpr char kTopicHead[] = "topic_head.bin";
inline constexpr char kAssignments[] = "assignments.tsv";
}  // namespace prepared_files

// Returns the written file names relative to `dir`.
std::vector<std::string> write_prepared(const std::filesystem::path& dir, const PreparedData& data);
PreparedData read_prepared(const std::filesystem::path& dir);

// Topic lookups the counterfactual engine needs, built from the assignments.
struct TopicIndex {
    TopicPool pool;
    std::unordered_map<std::string, std::size_t> sentence_topics;
    std::unordered_map<std::string, std::string> texts;  // cross-domain id -> text
    std::size_t no_topic = 0;

    AugmentContext context(const EmbeddingTable& embeddings) const;
};

TopicIndex build_topic_index(const PreparedData& data);

std::vector<LabeledInput> labeled_inputs(std::span<const TranscriptRecord> records, const EmbeddingTable& embeddings);
std::vector<int> predict_labels(const Encoder& model, std::span<const TranscriptRecord> records,
                                const EmbeddingTable& embeddings);

// Report on one split. The ticker baseline sees the full history with only
// the split's observations scored.
EvalReport evaluate_model(const Encoder& model, const PreparedData& data, std::string_view split,
                          std::uint64_t seed);

// Records for every transcript of `records`, in record order.
std::vector<PerturbationRecord> augment_records(std::span<const TranscriptRecord> records, const Encoder& model,
                                                const CheckpointTrace& trace, const AugmentContext& context,
                                                const AugmentConfig& cfg, std::uint64_t seed);

// Seeds run_pipeline uses for the augmentation pass after `round` and for
// the explanation records.
std::uint64_t augmentation_seed(const TrainConfig& cfg, std::size_t round);
std::uint64_t explanation_seed(const TrainConfig& cfg);

// Negative records at sentence scope, one pick per topical sentence or k_neg
// when set, as used for explanations.
AugmentConfig explanation_config(const AugmentConfig& cfg);

std::vector<ExplanationReport> explain_records(std::span<const TranscriptRecord> records, const Encoder& model,
                                               std::span<const PerturbationRecord> perturbations,
                                               const EmbeddingTable& embeddings,
                                               const std::unordered_map<std::string, std::string>& texts);

struct RoundSummary {
    std::size_t round = 0;
    std::size_t pool_size = 0;
    std::size_t augmentations = 0;  // records produced after the round
    double val_accuracy = 0.0;
    double test_accuracy = 0.0;

    friend bool operator==(const RoundSummary&, const RoundSummary&) = default;
};

struct PipelineResult {
    Encoder model;
    CheckpointTrace trace;
    std::vector<MetricRecord> metrics;
    std::vector<RoundSummary> rounds;
    std::vector<std::vector<PerturbationRecord>> augmentations;  // one list per augmentation pass
    EvalReport test_report;
    std::vector<PerturbationRecord> explanation_records;
    std::vector<ExplanationReport> explanations;
};

struct PipelineOptions {
    std::filesystem::path out;  // empty: nothing is written
    bool resume = false;        // reuse rounds already completed under `out`
    bool augment = true;        // false: later rounds retrain on the originals only
    bool explain = true;
};

namespace run_files {
inline constexpr char kConfig[] = "config.txt";
inline constexpr char kModel[] = "model.ckpt";
inline constexpr char kTrace[] = "trace.bin";
inline constexpr char kMetrics[] = "metrics.jsonl";
inline constexpr char kAugmentations[] = "augmentations.jsonl";
inline constexpr char kRoundState[] = "state.json";
inline constexpr char kEvalTest[] = "eval_test.json";
inline constexpr char kExplainRecords[] = "explain_records.jsonl";
inline constexpr char kExplanations[] = "explanations.jsonl";
}  // namespace run_files

std::string round_dir_name(std::size_t round);

// Supervised round, then alternating augmentation passes and retraining on
// the grown pool, then test evaluation and explanations. With `out` set,
// every round is persisted under round<r>/ and the final artifacts at the top.
PipelineResult run_pipeline(const PreparedData& data, const PipelineConfig& cfg, const PipelineOptions& options = {});

// Files run_pipeline wrote under `out`, relative to it, sorted.
std::vector<std::string> list_run_files(const std::filesystem::path& out);

struct Localization {
    std::size_t correct = 0;  // correctly classified transcripts considered
    std::size_t hits = 0;     // top-1 explanation on the decisive sentence

    double rate() const { return correct ? static_cast<double>(hits) / static_cast<double>(correct) : 0.0; }
};

// Among correctly classified transcripts, how often the top-1 explanation
// replaces the decisive sentence. Transcripts without an explanation count
// as misses.
Localization explanation_localization(std::span<const TranscriptRecord> records, std::span<const int> predictions,
                                      std::span<const ExplanationReport> reports,
                                      std::span<const GroundTruth> ground_truth);

}  // namespace mtca
