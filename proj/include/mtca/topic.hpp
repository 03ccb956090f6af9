#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mtca/rng.hpp"
#include "mtca/tensor.hpp"

namespace mtca {

// N_f named topics with BM25 query terms. Label N_f is "no topic".
struct TopicSet {
    std::vector<std::string> names;
    std::vector<std::vector<std::string>> queries;

    std::size_t size() const noexcept { return names.size(); }
    std::size_t no_topic() const noexcept { return names.size(); }
    void validate() const;
};

// One topic per line: name<TAB>comma-separated query terms.
TopicSet parse_topics_text(std::string_view text);
TopicSet parse_topics(const std::filesystem::path& path);
std::string format_topics(const TopicSet& topics);

class InvertedIndex {
public:
    struct Posting {
        std::uint32_t doc;
        std::uint32_t tf;
    };

    explicit InvertedIndex(std::span<const std::string> documents);

    std::size_t document_count() const noexcept { return lengths_.size(); }
    std::size_t length(std::size_t doc) const { return lengths_.at(doc); }
    double average_length() const noexcept { return avg_length_; }
    std::size_t document_frequency(const std::string& term) const;
    std::span<const Posting> postings(const std::string& term) const;

private:
    std::unordered_map<std::string, std::vector<Posting>> postings_;
    std::vector<std::size_t> lengths_;
    double avg_length_ = 0.0;
};

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

// ln(1 + (N - df + 0.5) / (df + 0.5))
double bm25_idf(std::size_t doc_count, std::size_t df);
double bm25_term_score(double idf, double tf, double length, double avg_length, const Bm25Params& params = {});

struct ScoredDocument {
    std::size_t doc;
    double score;
};

// Documents matching at least one query term, by score descending then id.
// Repeated query terms count once; unknown terms contribute nothing.
std::vector<ScoredDocument> bm25_rank(std::span<const std::string> query, const InvertedIndex& index,
                                      const Bm25Params& params = {});

struct LabeledSample {
    std::size_t doc;
    std::size_t label;

    friend bool operator==(const LabeledSample&, const LabeledSample&) = default;
};

// Top-N_t ranked documents labeled `topic`; N_t documents from outside the
// top 5*N_t labeled `no_topic_label`, sampled without replacement. Documents
// flagged in `not_negative` are also kept out of the negative pool unless it
// would run short.
std::vector<LabeledSample> build_distant_supervision(std::size_t topic, std::size_t no_topic_label,
                                                     std::span<const ScoredDocument> ranking,
                                                     std::size_t corpus_size, std::size_t top_n, Rng& rng,
                                                     const std::vector<bool>& not_negative = {});

struct TopicHead {
    Tensor weight;  // [labels, d]
    std::vector<double> bias;

    std::size_t labels() const noexcept { return bias.size(); }
    std::size_t dim() const noexcept { return weight.cols(); }
    std::vector<double> distribution(std::span<const double> embedding) const;
};

struct TopicTrainConfig {
    std::size_t epochs = 2000;
    double lr = 4.0;
};

// Full-batch gradient descent on label-balanced softmax cross-entropy from a
// zero head.
TopicHead train_topic_head(std::span<const std::vector<double>> embeddings, std::span<const std::size_t> labels,
                           std::size_t label_count, const TopicTrainConfig& cfg);

struct TopicAssignment {
    std::size_t label;
    double confidence;
};

// Argmax label, ties to the lowest id.
TopicAssignment assign_topic(std::span<const double> embedding, const TopicHead& head);

struct AssignmentRow {
    std::string sentence_id;
    std::size_t topic;
    double confidence;

    friend bool operator==(const AssignmentRow&, const AssignmentRow&) = default;
};

// sentence_id<TAB>topic_id<TAB>confidence, with a header line.
std::string format_assignments(std::span<const AssignmentRow> rows);
std::vector<AssignmentRow> parse_assignments_text(std::string_view text);

struct TopicModelConfig {
    std::size_t top_n = 10;  // N_t
    Bm25Params bm25;
    TopicTrainConfig train;
};

struct TopicModel {
    TopicSet topics;
    TopicHead head;
};

// Ranks `texts` for every topic, builds the distant-supervision set and
// trains the head over the matching `embeddings`.
TopicModel fit_topic_model(const TopicSet& topics, std::span<const std::string> texts,
                           std::span<const std::vector<double>> embeddings, const TopicModelConfig& cfg,
                           std::uint64_t seed);

std::vector<std::uint8_t> serialize_topic_head(const TopicHead& head);
TopicHead deserialize_topic_head(std::span<const std::uint8_t> bytes);

}  // namespace mtca
