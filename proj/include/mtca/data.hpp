#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mtca {

enum class Session { OP, QA };

std::string_view session_name(Session s);
Session parse_session(std::string_view text);

struct TranscriptRecord {
    std::string id;
    std::string ticker;
    std::string date;  // YYYY-MM-DD
    Session session = Session::OP;
    std::vector<std::string> sentences;
    std::optional<int> label;
    std::optional<double> volatility;

    friend bool operator==(const TranscriptRecord&, const TranscriptRecord&) = default;
};

// Key of sentence `index` of a transcript in the embedding file.
std::string sentence_id(std::string_view transcript_id, std::size_t index);

// One JSON object per line. Records longer than `max_sentences` are truncated
// with a warning.
std::vector<TranscriptRecord> parse_transcripts_text(std::string_view text, std::size_t max_sentences = 500);
std::vector<TranscriptRecord> parse_transcripts(const std::filesystem::path& path, std::size_t max_sentences = 500);
std::string format_transcripts(std::span<const TranscriptRecord> records);
void write_transcripts(const std::filesystem::path& path, std::span<const TranscriptRecord> records);

// Unlabeled sentence from another domain (news, other transcripts). An empty
// session means it may replace sentences of either session.
struct CrossDomainSentence {
    std::string id;
    std::string source;
    std::optional<Session> session;
    std::string text;

    friend bool operator==(const CrossDomainSentence&, const CrossDomainSentence&) = default;
};

std::vector<CrossDomainSentence> parse_cross_domain_text(std::string_view text);
std::vector<CrossDomainSentence> parse_cross_domain(const std::filesystem::path& path);
std::string format_cross_domain(std::span<const CrossDomainSentence> sentences);

// Sentence vectors keyed by id, stored as 32-bit floats.
class EmbeddingTable {
public:
    EmbeddingTable() = default;
    EmbeddingTable(std::size_t dim, std::string encoder) : dim_(dim), encoder_(std::move(encoder)) {}

    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return ids_.size(); }
    const std::string& encoder() const noexcept { return encoder_; }
    const std::string& id(std::size_t row) const { return ids_.at(row); }

    void add(std::string id, std::span<const double> vector);
    void add_f32(std::string id, std::span<const float> vector);
    bool contains(std::string_view id) const;
    std::span<const float> row(std::size_t i) const;
    // Promoted to 64-bit; throws FormatError naming the id when absent.
    std::vector<double> vector(std::string_view id) const;

    friend bool operator==(const EmbeddingTable& a, const EmbeddingTable& b) {
        return a.dim_ == b.dim_ && a.encoder_ == b.encoder_ && a.ids_ == b.ids_ && a.data_ == b.data_;
    }

private:
    std::size_t dim_ = 0;
    std::string encoder_;
    std::vector<std::string> ids_;
    std::vector<float> data_;
    std::unordered_map<std::string, std::size_t> index_;
};

inline constexpr std::uint32_t kEmbeddingFileVersion = 1;

std::vector<std::uint8_t> serialize_embeddings(const EmbeddingTable& table);
EmbeddingTable deserialize_embeddings(std::span<const std::uint8_t> bytes);
void write_embeddings(const std::filesystem::path& path, const EmbeddingTable& table);
EmbeddingTable read_embeddings(const std::filesystem::path& path);

// Ids of every transcript sentence missing from the table, in record order.
std::vector<std::string> missing_sentence_ids(std::span<const TranscriptRecord> records, const EmbeddingTable& table);

bool valid_iso_date(std::string_view date);

// Linear interpolation between closest ranks; p in [0, 100].
double percentile(std::vector<double> values, double p);

struct LabelThresholds {
    double low = 0.0;
    double high = 0.0;
};

LabelThresholds fit_thresholds(std::span<const double> train_values, double low_pct = 33.0, double high_pct = 66.0);
// v < low -> 0, v < high -> 1, else 2.
int assign_label(double value, const LabelThresholds& thresholds);
std::vector<int> compute_labels(std::span<const double> values, const LabelThresholds& thresholds);

struct PricePoint {
    std::string date;
    double close = 0.0;
};

// ticker -> points sorted by date.
using PriceTable = std::map<std::string, std::vector<PricePoint>>;

// CSV with columns ticker,date,close; a header line is optional.
PriceTable parse_prices_text(std::string_view text);
PriceTable parse_prices(const std::filesystem::path& path);

// ln(sample stddev of the `days` daily log returns following `ec_date`). The
// base price is the last close on or before the call date.
double log_volatility(std::span<const PricePoint> series, std::string_view ec_date, std::size_t days);

struct SplitSizes {
    std::size_t train = 0, val = 0, test = 0;
    friend bool operator==(const SplitSizes&, const SplitSizes&) = default;
};

// floor(0.8n) to train, the rest halved between val and test with any odd
// record going to train.
SplitSizes split_sizes(std::size_t n);

struct DataSplit {
    std::vector<TranscriptRecord> train, val, test;
};

// Sorted by (date, id) and cut by split_sizes.
DataSplit chronological_split(std::vector<TranscriptRecord> records);

struct HashEmbedding {
    std::vector<double> vector;
    bool empty = false;  // no tokens; vector is all zero
};

// Tokens map to seeded pseudo-random unit vectors; a sentence is the
// normalized mean of its token vectors.
HashEmbedding hash_embed(std::string_view text, std::size_t d, std::uint64_t seed);

struct GroundTruth {
    std::string transcript_id;
    std::size_t decisive_index = 0;
    int label = 0;

    friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

std::string format_ground_truth(std::span<const GroundTruth> rows);
std::vector<GroundTruth> parse_ground_truth_text(std::string_view text);

}  // namespace mtca
