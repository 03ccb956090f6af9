#include "mtca/data.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "mtca/binary_io.hpp"
#include "mtca/error.hpp"
#include "mtca/log.hpp"
#include "mtca/rng.hpp"
#include "mtca/text.hpp"

namespace mtca {

using nlohmann::json;

namespace {

constexpr char kEmbeddingMagic[] = "MEMB";

template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto end = text.find('\n');
        std::string_view line = text.substr(0, end);
        text = end == std::string_view::npos ? std::string_view{} : text.substr(end + 1);
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
        fn(line, line_no);
    }
}

std::string where(std::size_t line_no) { return "line " + std::to_string(line_no) + ": "; }

const json& require(const json& obj, const char* key, std::size_t line_no) {
    auto it = obj.find(key);
    if (it == obj.end()) throw FormatError(where(line_no) + "missing field '" + key + "'");
    return *it;
}

std::vector<std::string> split_fields(std::string_view line, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        out.emplace_back(line.substr(start, pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

double parse_double(const std::string& s, std::size_t line_no) {
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw FormatError(where(line_no) + "not a number: '" + s + "'");
    }
    if (used != s.size()) throw FormatError(where(line_no) + "not a number: '" + s + "'");
    return v;
}

}  // namespace

std::string_view session_name(Session s) { return s == Session::OP ? "OP" : "QA"; }

Session parse_session(std::string_view text) {
    if (text == "OP") return Session::OP;
    if (text == "QA") return Session::QA;
    throw FormatError("unknown session '" + std::string(text) + "' (expected OP or QA)");
}

std::string sentence_id(std::string_view transcript_id, std::size_t index) {
    return std::string(transcript_id) + ":" + std::to_string(index);
}

std::vector<TranscriptRecord> parse_transcripts_text(std::string_view text, std::size_t max_sentences) {
    std::vector<TranscriptRecord> records;
    for_each_line(text, [&](std::string_view line, std::size_t line_no) {
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            throw FormatError(where(line_no) + e.what());
        }
        if (!obj.is_object()) throw FormatError(where(line_no) + "expected a JSON object");
        TranscriptRecord r;
        try {
            r.id = require(obj, "id", line_no).get<std::string>();
            r.ticker = require(obj, "ticker", line_no).get<std::string>();
            r.date = require(obj, "date", line_no).get<std::string>();
            r.session = parse_session(require(obj, "session", line_no).get<std::string>());
            r.sentences = require(obj, "sentences", line_no).get<std::vector<std::string>>();
            if (obj.contains("label") && !obj["label"].is_null()) r.label = obj["label"].get<int>();
            if (obj.contains("volatility") && !obj["volatility"].is_null()) r.volatility = obj["volatility"].get<double>();
        } catch (const json::exception& e) {
            throw FormatError(where(line_no) + e.what());
        } catch (const FormatError& e) {
            if (std::string_view(e.what()).starts_with("line ")) throw;
            throw FormatError(where(line_no) + e.what());
        }
        if (r.id.empty()) throw FormatError(where(line_no) + "empty id");
        if (!valid_iso_date(r.date)) throw FormatError(where(line_no) + "invalid date '" + r.date + "'");
        if (r.sentences.empty()) throw FormatError(where(line_no) + "transcript " + r.id + " has no sentences");
        if (r.label && (*r.label < 0 || *r.label > 2)) throw FormatError(where(line_no) + "label must be 0, 1 or 2");
        if (r.sentences.size() > max_sentences) {
            warn("transcript " + r.id + " has " + std::to_string(r.sentences.size()) + " sentences; truncated to " +
                 std::to_string(max_sentences));
            r.sentences.resize(max_sentences);
        }
        records.push_back(std::move(r));
    });
    if (records.empty()) warn("transcript file contains no records");
    return records;
}

std::vector<TranscriptRecord> parse_transcripts(const std::filesystem::path& path, std::size_t max_sentences) {
    return parse_transcripts_text(read_text_file(path), max_sentences);
}

std::string format_transcripts(std::span<const TranscriptRecord> records) {
    std::string out;
    for (const auto& r : records) {
        json obj = {{"id", r.id},
                    {"ticker", r.ticker},
                    {"date", r.date},
                    {"session", session_name(r.session)},
                    {"sentences", r.sentences}};
        if (r.label) obj["label"] = *r.label;
        if (r.volatility) obj["volatility"] = *r.volatility;
        out += obj.dump();
        out += '\n';
    }
    return out;
}

void write_transcripts(const std::filesystem::path& path, std::span<const TranscriptRecord> records) {
    write_text_file(path, format_transcripts(records));
}

std::vector<CrossDomainSentence> parse_cross_domain_text(std::string_view text) {
    std::vector<CrossDomainSentence> out;
    for_each_line(text, [&](std::string_view line, std::size_t line_no) {
        try {
            const json obj = json::parse(line);
            CrossDomainSentence s;
            s.id = require(obj, "id", line_no).get<std::string>();
            s.source = obj.value("source", std::string("news"));
            s.text = require(obj, "text", line_no).get<std::string>();
            if (obj.contains("session") && !obj["session"].is_null()) {
                s.session = parse_session(obj["session"].get<std::string>());
            }
            out.push_back(std::move(s));
        } catch (const json::exception& e) {
            throw FormatError(where(line_no) + e.what());
        }
    });
    return out;
}

std::vector<CrossDomainSentence> parse_cross_domain(const std::filesystem::path& path) {
    return parse_cross_domain_text(read_text_file(path));
}

std::string format_cross_domain(std::span<const CrossDomainSentence> sentences) {
    std::string out;
    for (const auto& s : sentences) {
        json obj = {{"id", s.id}, {"source", s.source}, {"text", s.text}};
        if (s.session) obj["session"] = session_name(*s.session);
        out += obj.dump();
        out += '\n';
    }
    return out;
}

void EmbeddingTable::add_f32(std::string id, std::span<const float> vector) {
    if (vector.size() != dim_) {
        throw DimensionError("embedding for " + id + " has width " + std::to_string(vector.size()) + ", expected " +
                             std::to_string(dim_));
    }
    if (index_.contains(id)) throw FormatError("duplicate embedding id " + id);
    for (float v : vector)
        if (!std::isfinite(v)) throw NumericError("non-finite embedding value for " + id);
    index_.emplace(id, ids_.size());
    ids_.push_back(std::move(id));
    data_.insert(data_.end(), vector.begin(), vector.end());
}

void EmbeddingTable::add(std::string id, std::span<const double> vector) {
    std::vector<float> narrow(vector.begin(), vector.end());
    add_f32(std::move(id), narrow);
}

bool EmbeddingTable::contains(std::string_view id) const { return index_.contains(std::string(id)); }

std::span<const float> EmbeddingTable::row(std::size_t i) const {
    if (i >= ids_.size()) throw DimensionError("embedding row out of range");
    return {data_.data() + i * dim_, dim_};
}

std::vector<double> EmbeddingTable::vector(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) throw FormatError("no embedding for sentence id " + std::string(id));
    auto r = row(it->second);
    return {r.begin(), r.end()};
}

std::vector<std::uint8_t> serialize_embeddings(const EmbeddingTable& table) {
    ByteWriter w;
    w.raw(std::string_view(kEmbeddingMagic, 4));
    w.u32(kEmbeddingFileVersion);
    w.u32(static_cast<std::uint32_t>(table.dim()));
    w.u64(table.size());
    w.str(table.encoder());
    for (std::size_t i = 0; i < table.size(); ++i) {
        w.str(table.id(i));
        for (float v : table.row(i)) w.f32(v);
    }
    return w.take();
}

EmbeddingTable deserialize_embeddings(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "embedding file");
    if (r.raw(4) != std::string_view(kEmbeddingMagic, 4)) throw FormatError("embedding file: bad magic");
    const auto version = r.u32();
    if (version != kEmbeddingFileVersion) {
        throw FormatError("embedding file: unsupported version " + std::to_string(version));
    }
    const std::size_t dim = r.u32();
    const std::uint64_t count = r.u64();
    EmbeddingTable table(dim, r.str());
    std::vector<float> row(dim);
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string id = r.str();
        for (auto& v : row) v = r.f32();
        table.add_f32(std::move(id), row);
    }
    if (!r.done()) throw FormatError("embedding file: trailing bytes after " + std::to_string(count) + " rows");
    return table;
}

void write_embeddings(const std::filesystem::path& path, const EmbeddingTable& table) {
    write_file_bytes(path, serialize_embeddings(table));
}

EmbeddingTable read_embeddings(const std::filesystem::path& path) {
    return deserialize_embeddings(read_file_bytes(path));
}

std::vector<std::string> missing_sentence_ids(std::span<const TranscriptRecord> records, const EmbeddingTable& table) {
    std::vector<std::string> missing;
    for (const auto& r : records)
        for (std::size_t i = 0; i < r.sentences.size(); ++i) {
            auto id = sentence_id(r.id, i);
            if (!table.contains(id)) missing.push_back(std::move(id));
        }
    return missing;
}

bool valid_iso_date(std::string_view date) {
    if (date.size() != 10 || date[4] != '-' || date[7] != '-') return false;
    for (std::size_t i : {0, 1, 2, 3, 5, 6, 8, 9})
        if (!std::isdigit(static_cast<unsigned char>(date[i]))) return false;
    const int y = std::stoi(std::string(date.substr(0, 4)));
    const unsigned m = static_cast<unsigned>(std::stoi(std::string(date.substr(5, 2))));
    const unsigned d = static_cast<unsigned>(std::stoi(std::string(date.substr(8, 2))));
    return std::chrono::year_month_day(std::chrono::year(y), std::chrono::month(m), std::chrono::day(d)).ok();
}

double percentile(std::vector<double> values, double p) {
    if (values.empty()) throw DimensionError("percentile of empty set");
    if (p < 0.0 || p > 100.0) throw ConfigError("percentile must be within [0, 100]");
    std::sort(values.begin(), values.end());
    const double rank = p / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (rank - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

LabelThresholds fit_thresholds(std::span<const double> train_values, double low_pct, double high_pct) {
    if (train_values.empty()) throw DimensionError("cannot fit label thresholds on an empty training set");
    std::vector<double> v(train_values.begin(), train_values.end());
    return {percentile(v, low_pct), percentile(v, high_pct)};
}

int assign_label(double value, const LabelThresholds& t) {
    if (value < t.low) return 0;
    if (value < t.high) return 1;
    return 2;
}

std::vector<int> compute_labels(std::span<const double> values, const LabelThresholds& thresholds) {
    if (values.empty()) throw DimensionError("compute_labels: empty input");
    std::vector<int> labels;
    labels.reserve(values.size());
    for (double v : values) labels.push_back(assign_label(v, thresholds));
    return labels;
}

PriceTable parse_prices_text(std::string_view text) {
    PriceTable table;
    for_each_line(text, [&](std::string_view line, std::size_t line_no) {
        auto fields = split_fields(line, ',');
        if (fields.size() != 3) throw FormatError(where(line_no) + "expected ticker,date,close");
        if (line_no == 1 && fields[0] == "ticker") return;
        if (!valid_iso_date(fields[1])) throw FormatError(where(line_no) + "invalid date '" + fields[1] + "'");
        const double close = parse_double(fields[2], line_no);
        if (!(close > 0.0)) throw FormatError(where(line_no) + "close price must be positive");
        table[fields[0]].push_back({fields[1], close});
    });
    for (auto& [ticker, series] : table) {
        std::stable_sort(series.begin(), series.end(), [](const auto& a, const auto& b) { return a.date < b.date; });
        for (std::size_t i = 1; i < series.size(); ++i)
            if (series[i].date == series[i - 1].date) throw FormatError("duplicate price date " + series[i].date + " for " + ticker);
    }
    return table;
}

PriceTable parse_prices(const std::filesystem::path& path) { return parse_prices_text(read_text_file(path)); }

double log_volatility(std::span<const PricePoint> series, std::string_view ec_date, std::size_t days) {
    if (days < 2) throw ConfigError("volatility window must cover at least 2 returns");
    auto after = std::upper_bound(series.begin(), series.end(), ec_date,
                                  [](std::string_view d, const PricePoint& p) { return d < p.date; });
    if (after == series.begin()) throw FormatError("no price on or before " + std::string(ec_date));
    const auto base = static_cast<std::size_t>(after - series.begin()) - 1;
    if (series.size() - base - 1 < days) {
        throw FormatError("need " + std::to_string(days) + " prices after " + std::string(ec_date));
    }
    std::vector<double> returns;
    for (std::size_t t = base + 1; t <= base + days; ++t) returns.push_back(std::log(series[t].close / series[t - 1].close));
    double mean = 0.0;
    for (double r : returns) mean += r;
    mean /= static_cast<double>(days);
    double ss = 0.0;
    for (double r : returns) ss += (r - mean) * (r - mean);
    const double sd = std::sqrt(ss / static_cast<double>(days - 1));
    if (!(sd > 0.0)) throw NumericError("zero return variance after " + std::string(ec_date));
    return std::log(sd);
}

SplitSizes split_sizes(std::size_t n) {
    SplitSizes s;
    s.train = n * 8 / 10;
    const std::size_t rest = n - s.train;
    s.val = s.test = rest / 2;
    s.train += rest % 2;
    return s;
}

DataSplit chronological_split(std::vector<TranscriptRecord> records) {
    std::sort(records.begin(), records.end(),
              [](const auto& a, const auto& b) { return std::tie(a.date, a.id) < std::tie(b.date, b.id); });
    const auto sizes = split_sizes(records.size());
    DataSplit out;
    auto first = std::make_move_iterator(records.begin());
    out.train.assign(first, first + static_cast<std::ptrdiff_t>(sizes.train));
    out.val.assign(first + static_cast<std::ptrdiff_t>(sizes.train),
                   first + static_cast<std::ptrdiff_t>(sizes.train + sizes.val));
    out.test.assign(first + static_cast<std::ptrdiff_t>(sizes.train + sizes.val), std::make_move_iterator(records.end()));
    return out;
}

HashEmbedding hash_embed(std::string_view text, std::size_t d, std::uint64_t seed) {
    if (d == 0) throw ConfigError("hash_embed: d must be positive");
    HashEmbedding out{std::vector<double>(d, 0.0), false};
    const auto tokens = tokenize(text);
    if (tokens.empty()) {
        out.empty = true;
        return out;
    }
    std::vector<double> token(d);
    for (const auto& t : tokens) {
        Rng rng(derive_seed(seed, {fnv1a64(t)}));
        double norm = 0.0;
        for (auto& v : token) {
            v = rng.normal();
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (std::size_t j = 0; j < d; ++j) out.vector[j] += token[j] / norm;
    }
    double norm = 0.0;
    for (double v : out.vector) norm += v * v;
    norm = std::sqrt(norm);
    if (norm == 0.0) {
        out.empty = true;
        return out;
    }
    for (auto& v : out.vector) v /= norm;
    return out;
}

std::string format_ground_truth(std::span<const GroundTruth> rows) {
    std::ostringstream out;
    out << "transcript_id\tdecisive_index\tlabel\n";
    for (const auto& g : rows) out << g.transcript_id << '\t' << g.decisive_index << '\t' << g.label << '\n';
    return out.str();
}

std::vector<GroundTruth> parse_ground_truth_text(std::string_view text) {
    std::vector<GroundTruth> rows;
    for_each_line(text, [&](std::string_view line, std::size_t line_no) {
        auto f = split_fields(line, '\t');
        if (f.size() != 3) throw FormatError(where(line_no) + "expected 3 tab-separated fields");
        if (line_no == 1 && f[0] == "transcript_id") return;
        try {
            rows.push_back({f[0], std::stoul(f[1]), std::stoi(f[2])});
        } catch (const std::exception&) {
            throw FormatError(where(line_no) + "bad ground-truth row");
        }
    });
    return rows;
}

}  // namespace mtca
