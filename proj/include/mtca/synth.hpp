#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mtca/config_file.hpp"
#include "mtca/data.hpp"
#include "mtca/topic.hpp"

namespace mtca {

// Planted-signal corpus. Each transcript has `topical_sentences` sentences
// carrying topic words; one of them also carries polarity words of the
// transcript's class and decides the label. The rest are neutral filler.
struct SyntheticSpec {
    std::size_t transcripts = 600;
    std::size_t sentences = 20;
    std::size_t topical_sentences = 5;
    std::size_t topics = 12;
    std::size_t topic_words = 6;
    std::size_t polarity_words = 2;  // per class
    std::size_t neutral_words = 400;
    std::size_t pool_per_topic = 30;  // cross-domain sentences per topic and session
    double polar_fraction = 0.3;
    double noise = 0.1;
    std::size_t tickers = 50;
    std::size_t dim = 64;
    std::uint64_t seed = 7;

    void validate() const;
};

SyntheticSpec read_synthetic_spec(KeyValueFile& kv);

struct SyntheticCorpus {
    std::vector<TranscriptRecord> transcripts;
    std::vector<CrossDomainSentence> cross_domain;
    TopicSet topics;
    std::vector<GroundTruth> ground_truth;
    EmbeddingTable embeddings;
    // Planted topic per sentence id (topics.no_topic() for filler).
    std::vector<std::pair<std::string, std::size_t>> planted_topics;
};

SyntheticCorpus synth_generate(const SyntheticSpec& spec);

// Fixed file names inside a corpus directory.
namespace corpus_files {
inline constexpr char kTranscripts[] = "transcripts.jsonl";
inline constexpr char kCrossDomain[] = "cross_domain.jsonl";
inline constexpr char kEmbeddings[] = "embeddings.memb";
inline constexpr char kTopics[] = "topics.tsv";
inline constexpr char kGroundTruth[] = "ground_truth.tsv";
}  // namespace corpus_files

void write_synthetic_corpus(const std::filesystem::path& dir, const SyntheticCorpus& corpus);

}  // namespace mtca
