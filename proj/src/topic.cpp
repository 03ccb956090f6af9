#include "mtca/topic.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include "mtca/binary_io.hpp"
#include "mtca/error.hpp"
#include "mtca/log.hpp"
#include "mtca/text.hpp"

namespace mtca {

namespace {

constexpr char kTopicHeadMagic[] = "MTPH";

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.emplace_back(s.substr(start, pos - start));
        if (pos == std::string_view::npos) return out;
        start = pos + 1;
    }
}

}  // namespace

void TopicSet::validate() const {
    if (names.empty()) throw ConfigError("topic set is empty");
    if (queries.size() != names.size()) throw ConfigError("topic names and queries differ in count");
    std::set<std::string> seen;
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i].empty()) throw ConfigError("topic name must be nonempty");
        if (!seen.insert(names[i]).second) throw ConfigError("duplicate topic name " + names[i]);
        if (queries[i].empty()) throw ConfigError("topic " + names[i] + " has no query terms");
    }
}

TopicSet parse_topics_text(std::string_view text) {
    TopicSet set;
    std::size_t line_no = 0;
    for (const auto& raw : split(text, '\n')) {
        ++line_no;
        std::string_view line = raw;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
        const auto tab = line.find('\t');
        if (tab == std::string_view::npos) {
            throw FormatError("topics line " + std::to_string(line_no) + ": expected name<TAB>terms");
        }
        std::vector<std::string> terms;
        for (const auto& phrase : split(line.substr(tab + 1), ','))
            for (auto& t : tokenize(phrase)) terms.push_back(std::move(t));
        set.names.emplace_back(line.substr(0, tab));
        set.queries.push_back(std::move(terms));
    }
    set.validate();
    return set;
}

TopicSet parse_topics(const std::filesystem::path& path) { return parse_topics_text(read_text_file(path)); }

std::string format_topics(const TopicSet& topics) {
    std::string out;
    for (std::size_t i = 0; i < topics.size(); ++i) {
        out += topics.names[i];
        out += '\t';
        for (std::size_t j = 0; j < topics.queries[i].size(); ++j) {
            if (j) out += ',';
            out += topics.queries[i][j];
        }
        out += '\n';
    }
    return out;
}

InvertedIndex::InvertedIndex(std::span<const std::string> documents) {
    lengths_.reserve(documents.size());
    std::size_t total = 0;
    for (std::size_t doc = 0; doc < documents.size(); ++doc) {
        const auto tokens = tokenize(documents[doc]);
        std::unordered_map<std::string, std::uint32_t> counts;
        for (const auto& t : tokens) ++counts[t];
        for (auto& [term, tf] : counts) postings_[term].push_back({static_cast<std::uint32_t>(doc), tf});
        lengths_.push_back(tokens.size());
        total += tokens.size();
    }
    // Posting lists stay ordered by document id regardless of map iteration.
    for (auto& [term, list] : postings_) {
        std::sort(list.begin(), list.end(), [](const Posting& a, const Posting& b) { return a.doc < b.doc; });
    }
    avg_length_ = documents.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(documents.size());
}

std::size_t InvertedIndex::document_frequency(const std::string& term) const { return postings(term).size(); }

std::span<const InvertedIndex::Posting> InvertedIndex::postings(const std::string& term) const {
    auto it = postings_.find(term);
    if (it == postings_.end()) return {};
    return it->second;
}

double bm25_idf(std::size_t doc_count, std::size_t df) {
    const double n = static_cast<double>(doc_count), f = static_cast<double>(df);
    return std::log(1.0 + (n - f + 0.5) / (f + 0.5));
}

double bm25_term_score(double idf, double tf, double length, double avg_length, const Bm25Params& p) {
    const double norm = avg_length > 0.0 ? length / avg_length : 0.0;
    return idf * (tf * (p.k1 + 1.0)) / (tf + p.k1 * (1.0 - p.b + p.b * norm));
}

std::vector<ScoredDocument> bm25_rank(std::span<const std::string> query, const InvertedIndex& index,
                                      const Bm25Params& params) {
    std::vector<std::string> terms;
    for (const auto& q : query)
        if (std::find(terms.begin(), terms.end(), q) == terms.end()) terms.push_back(q);

    std::unordered_map<std::size_t, double> scores;
    for (const auto& term : terms) {
        const auto list = index.postings(term);
        if (list.empty()) continue;
        const double idf = bm25_idf(index.document_count(), list.size());
        for (const auto& p : list) {
            scores[p.doc] += bm25_term_score(idf, p.tf, static_cast<double>(index.length(p.doc)), index.average_length(),
                                             params);
        }
    }
    std::vector<ScoredDocument> ranked;
    ranked.reserve(scores.size());
    for (const auto& [doc, score] : scores) ranked.push_back({doc, score});
    std::sort(ranked.begin(), ranked.end(), [](const ScoredDocument& a, const ScoredDocument& b) {
        return a.score != b.score ? a.score > b.score : a.doc < b.doc;
    });
    return ranked;
}

std::vector<LabeledSample> build_distant_supervision(std::size_t topic, std::size_t no_topic_label,
                                                     std::span<const ScoredDocument> ranking,
                                                     std::size_t corpus_size, std::size_t top_n, Rng& rng,
                                                     const std::vector<bool>& not_negative) {
    if (ranking.empty()) throw ConfigError("distant supervision needs a nonempty ranking");
    if (top_n == 0) throw ConfigError("N_t must be positive");
    std::size_t n = top_n;
    if (corpus_size < 2 * top_n) {
        n = std::max<std::size_t>(1, corpus_size / 2);
        warn("corpus of " + std::to_string(corpus_size) + " sentences is smaller than 2*N_t; using " +
             std::to_string(n) + " positives and negatives");
    }
    n = std::min(n, ranking.size());

    std::vector<LabeledSample> samples;
    std::vector<bool> excluded(corpus_size, false);
    for (std::size_t i = 0; i < n; ++i) {
        samples.push_back({ranking[i].doc, topic});
        excluded[ranking[i].doc] = true;
    }
    // Documents ranked inside the top 5*N_t are not considered irrelevant.
    std::vector<bool> near = excluded;
    for (std::size_t doc = 0; doc < std::min(corpus_size, not_negative.size()); ++doc)
        if (not_negative[doc]) near[doc] = true;
    for (std::size_t i = n; i < std::min(ranking.size(), 5 * top_n); ++i) near[ranking[i].doc] = true;

    auto collect = [&](const std::vector<bool>& skip) {
        std::vector<std::size_t> pool;
        for (std::size_t doc = 0; doc < corpus_size; ++doc)
            if (!skip[doc]) pool.push_back(doc);
        return pool;
    };
    auto pool = collect(near);
    if (pool.size() < n) pool = collect(excluded);
    for (auto pick : rng.sample_without_replacement(pool.size(), n)) samples.push_back({pool[pick], no_topic_label});
    return samples;
}

std::vector<double> TopicHead::distribution(std::span<const double> embedding) const {
    if (embedding.size() != dim()) throw DimensionError("topic head: embedding width mismatch");
    std::vector<double> logits(bias);
    for (std::size_t c = 0; c < logits.size(); ++c)
        for (std::size_t j = 0; j < embedding.size(); ++j) logits[c] += weight(c, j) * embedding[j];
    const double peak = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (auto& v : logits) z += (v = std::exp(v - peak));
    for (auto& v : logits) v /= z;
    return logits;
}

TopicHead train_topic_head(std::span<const std::vector<double>> embeddings, std::span<const std::size_t> labels,
                           std::size_t label_count, const TopicTrainConfig& cfg) {
    if (embeddings.empty()) throw ConfigError("topic head: no training samples");
    if (embeddings.size() != labels.size()) throw DimensionError("topic head: sample and label counts differ");
    if (std::set<std::size_t>(labels.begin(), labels.end()).size() < 2) {
        throw ConfigError("topic head: training needs at least two distinct labels");
    }
    const std::size_t d = embeddings.front().size();
    for (auto l : labels)
        if (l >= label_count) throw DimensionError("topic head: label out of range");

    TopicHead head{Tensor({label_count, d}, 0.0), std::vector<double>(label_count, 0.0)};
    // Every present label carries equal total weight; the no-topic label
    // otherwise collects N_f times more samples than any topic.
    std::vector<double> label_weight(label_count, 0.0);
    for (auto l : labels) label_weight[l] += 1.0;
    std::size_t present = 0;
    for (auto& w : label_weight)
        if (w > 0.0) {
            w = 1.0 / w;
            ++present;
        }
    const double inv_n = 1.0 / static_cast<double>(present);
    Tensor grad_w({label_count, d}, 0.0);
    std::vector<double> grad_b(label_count);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::fill(grad_w.values().begin(), grad_w.values().end(), 0.0);
        std::fill(grad_b.begin(), grad_b.end(), 0.0);
        double loss = 0.0;
        for (std::size_t i = 0; i < embeddings.size(); ++i) {
            if (embeddings[i].size() != d) throw DimensionError("topic head: inconsistent embedding widths");
            auto p = head.distribution(embeddings[i]);
            const double w = label_weight[labels[i]];
            loss -= w * std::log(std::max(p[labels[i]], 1e-300));
            p[labels[i]] -= 1.0;
            for (std::size_t c = 0; c < label_count; ++c) {
                grad_b[c] += w * p[c];
                for (std::size_t j = 0; j < d; ++j) grad_w(c, j) += w * p[c] * embeddings[i][j];
            }
        }
        if (!std::isfinite(loss)) throw NumericError("topic head training diverged");
        for (std::size_t k = 0; k < grad_w.size(); ++k) head.weight[k] -= cfg.lr * inv_n * grad_w[k];
        for (std::size_t c = 0; c < label_count; ++c) head.bias[c] -= cfg.lr * inv_n * grad_b[c];
    }
    return head;
}

TopicAssignment assign_topic(std::span<const double> embedding, const TopicHead& head) {
    const auto p = head.distribution(embedding);
    std::size_t best = 0;
    for (std::size_t c = 1; c < p.size(); ++c)
        if (p[c] > p[best]) best = c;
    return {best, p[best]};
}

std::string format_assignments(std::span<const AssignmentRow> rows) {
    std::ostringstream out;
    out << "sentence_id\ttopic_id\tconfidence\n" << std::setprecision(17);
    for (const auto& r : rows) out << r.sentence_id << '\t' << r.topic << '\t' << r.confidence << '\n';
    return out.str();
}

std::vector<AssignmentRow> parse_assignments_text(std::string_view text) {
    std::vector<AssignmentRow> rows;
    std::size_t line_no = 0;
    for (const auto& raw : split(text, '\n')) {
        ++line_no;
        std::string_view line = raw;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        const auto f = split(line, '\t');
        if (f.size() != 3) throw FormatError("assignments line " + std::to_string(line_no) + ": expected 3 fields");
        if (line_no == 1 && f[0] == "sentence_id") continue;
        try {
            rows.push_back({f[0], std::stoul(f[1]), std::stod(f[2])});
        } catch (const std::exception&) {
            throw FormatError("assignments line " + std::to_string(line_no) + ": bad number");
        }
    }
    return rows;
}

TopicModel fit_topic_model(const TopicSet& topics, std::span<const std::string> texts,
                           std::span<const std::vector<double>> embeddings, const TopicModelConfig& cfg,
                           std::uint64_t seed) {
    topics.validate();
    if (texts.size() != embeddings.size()) throw DimensionError("topic corpus: text and embedding counts differ");
    const InvertedIndex index(texts);
    std::vector<std::vector<ScoredDocument>> rankings;
    // "No topic" is a global label, so a sentence ranked near the top for any
    // topic is never drawn as a negative.
    std::vector<bool> relevant(texts.size(), false);
    for (std::size_t t = 0; t < topics.size(); ++t) {
        rankings.push_back(bm25_rank(topics.queries[t], index, cfg.bm25));
        const auto& r = rankings.back();
        for (std::size_t i = 0; i < std::min(r.size(), 5 * cfg.top_n); ++i) relevant[r[i].doc] = true;
    }
    std::vector<LabeledSample> samples;
    for (std::size_t t = 0; t < topics.size(); ++t) {
        if (rankings[t].empty()) {
            warn("topic " + topics.names[t] + " matches no sentence");
            continue;
        }
        Rng rng(derive_seed(seed, {t}));
        auto part = build_distant_supervision(t, topics.no_topic(), rankings[t], texts.size(), cfg.top_n, rng, relevant);
        samples.insert(samples.end(), part.begin(), part.end());
    }

    std::vector<std::vector<double>> x;
    std::vector<std::size_t> y;
    for (const auto& s : samples) {
        x.push_back(embeddings[s.doc]);
        y.push_back(s.label);
    }
    return {topics, train_topic_head(x, y, topics.size() + 1, cfg.train)};
}

std::vector<std::uint8_t> serialize_topic_head(const TopicHead& head) {
    ByteWriter w;
    w.raw(std::string_view(kTopicHeadMagic, 4));
    w.u32(static_cast<std::uint32_t>(head.labels()));
    w.u32(static_cast<std::uint32_t>(head.dim()));
    for (double v : head.weight.values()) w.f64(v);
    for (double v : head.bias) w.f64(v);
    return w.take();
}

TopicHead deserialize_topic_head(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "topic head");
    if (r.raw(4) != std::string_view(kTopicHeadMagic, 4)) throw FormatError("topic head: bad magic");
    const std::size_t labels = r.u32(), dim = r.u32();
    TopicHead head{Tensor({labels, dim}, 0.0), std::vector<double>(labels)};
    for (auto& v : head.weight.values()) v = r.f64();
    for (auto& v : head.bias) v = r.f64();
    if (!r.done()) throw FormatError("topic head: trailing bytes");
    return head;
}

}  // namespace mtca
