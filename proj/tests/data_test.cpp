#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "mtca/binary_io.hpp"
#include "mtca/data.hpp"
#include "mtca/error.hpp"
#include "mtca/log.hpp"
#include "mtca/synth.hpp"
#include "mtca/text.hpp"
#include "mtca/topic.hpp"

namespace mtca {
namespace {

std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("mtca_data_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

const char* kFixture =
    R"({"id":"A1","ticker":"AAA","date":"2019-02-01","session":"OP","sentences":["Revenue grew.","Margins held."],"label":2}
{"id":"B7","ticker":"BBB","date":"2019-01-15","session":"QA","sentences":["Thanks for the question."]}
{"id":"C3","ticker":"AAA","date":"2019-05-02","session":"QA","sentences":["Guidance is unchanged."],"volatility":-3.5}
)";

TEST(TranscriptParseTest, FixtureFieldsMatch) {
    auto records = parse_transcripts_text(kFixture);
    ASSERT_EQ(records.size(), 3u);
    EXPECT_EQ(records[0].id, "A1");
    EXPECT_EQ(records[0].ticker, "AAA");
    EXPECT_EQ(records[0].date, "2019-02-01");
    EXPECT_EQ(records[0].session, Session::OP);
    EXPECT_EQ(records[0].sentences, (std::vector<std::string>{"Revenue grew.", "Margins held."}));
    EXPECT_EQ(records[0].label, 2);
    EXPECT_EQ(records[1].session, Session::QA);
    EXPECT_FALSE(records[1].label.has_value());
    EXPECT_EQ(records[2].volatility, -3.5);
}

TEST(TranscriptParseTest, RoundTripsThroughFormat) {
    auto records = parse_transcripts_text(kFixture);
    EXPECT_EQ(parse_transcripts_text(format_transcripts(records)), records);
}

TEST(TranscriptParseTest, EmptyFileWarns) {
    WarningCapture capture;
    EXPECT_TRUE(parse_transcripts_text("").empty());
    EXPECT_EQ(capture.messages().size(), 1u);
}

TEST(TranscriptParseTest, LongTranscriptTruncatedWithWarning) {
    TranscriptRecord r{"X", "T", "2020-01-01", Session::OP, std::vector<std::string>(501, "words here"), 1, {}};
    WarningCapture capture;
    auto parsed = parse_transcripts_text(format_transcripts(std::span(&r, 1)), 500);
    EXPECT_EQ(parsed[0].sentences.size(), 500u);
    ASSERT_EQ(capture.messages().size(), 1u);
    EXPECT_NE(capture.messages()[0].find("truncated"), std::string::npos);
}

TEST(TranscriptParseTest, MalformedLineReportsLineNumber) {
    std::string text = std::string(kFixture) + "{not json}\n";
    try {
        parse_transcripts_text(text);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos) << e.what();
    }
    EXPECT_THROW(parse_transcripts_text(R"({"id":"a","ticker":"t","date":"2019-13-01","session":"OP","sentences":["x"]})"),
                 FormatError);
    EXPECT_THROW(parse_transcripts_text(R"({"id":"a","ticker":"t","date":"2019-01-01","session":"XX","sentences":["x"]})"),
                 FormatError);
    EXPECT_THROW(parse_transcripts_text(R"({"id":"a","ticker":"t","date":"2019-01-01","session":"OP"})"), FormatError);
}

TEST(EmbeddingFileTest, RoundTripIsBitExact) {
    EmbeddingTable table(4, "test-encoder");
    table.add("s:0", std::vector<double>{0.1, -2.5, 3e-8, 1e30});
    table.add("s:1", std::vector<double>{0, 1, 2, 3});
    const auto dir = temp_dir("memb");
    write_embeddings(dir / "e.memb", table);
    auto back = read_embeddings(dir / "e.memb");
    EXPECT_EQ(back, table);
    auto bytes = read_file_bytes(dir / "e.memb");
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "MEMB");
    // Little-endian version word follows the magic.
    EXPECT_EQ(bytes[4], 1);
    EXPECT_EQ(bytes[5], 0);
    EXPECT_EQ(back.vector("s:0")[0], static_cast<double>(0.1f));
}

TEST(EmbeddingFileTest, RejectsCorruptInput) {
    EmbeddingTable table(2, "x");
    table.add("a", std::vector<double>{1, 2});
    auto bytes = serialize_embeddings(table);
    auto truncated = bytes;
    truncated.pop_back();
    EXPECT_THROW(deserialize_embeddings(truncated), FormatError);
    bytes[0] = 'Z';
    EXPECT_THROW(deserialize_embeddings(bytes), FormatError);
    EXPECT_THROW(table.add("a", std::vector<double>{1, 2}), FormatError);
    EXPECT_THROW(table.add("b", std::vector<double>{1}), DimensionError);
    EXPECT_THROW(table.vector("missing"), FormatError);
}

TEST(EmbeddingFileTest, EmptyTableIsValid) {
    EmbeddingTable table(8, "none");
    EXPECT_EQ(deserialize_embeddings(serialize_embeddings(table)), table);
}

TEST(EmbeddingFileTest, MissingIdsListedExhaustively) {
    auto records = parse_transcripts_text(kFixture);
    EmbeddingTable table(1, "x");
    table.add("A1:0", std::vector<double>{1});
    table.add("B7:0", std::vector<double>{1});
    EXPECT_EQ(missing_sentence_ids(records, table), (std::vector<std::string>{"A1:1", "C3:0"}));
}

TEST(PercentileTest, LinearInterpolation) {
    std::vector<double> v{4, 1, 3, 2};
    EXPECT_DOUBLE_EQ(percentile(v, 0), 1.0);
    EXPECT_DOUBLE_EQ(percentile(v, 100), 4.0);
    EXPECT_DOUBLE_EQ(percentile(v, 50), 2.5);
    EXPECT_DOUBLE_EQ(percentile(v, 33), 1.99);
    EXPECT_THROW(percentile({}, 50), DimensionError);
}

TEST(ComputeLabelsTest, UniformValuesSplitIntoThirds) {
    std::vector<double> v(100);
    std::iota(v.begin(), v.end(), 1.0);
    auto labels = compute_labels(v, fit_thresholds(v));
    std::array<int, 3> counts{};
    for (int l : labels) ++counts[static_cast<std::size_t>(l)];
    EXPECT_EQ(counts, (std::array<int, 3>{33, 33, 34}));
}

TEST(ComputeLabelsTest, AllEqualValuesAreLabelTwo) {
    std::vector<double> v(10, 0.5);
    for (int l : compute_labels(v, fit_thresholds(v))) EXPECT_EQ(l, 2);
}

TEST(ComputeLabelsTest, MatchesBruteForceThresholds) {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> v(50 + trial);
        for (auto& x : v) x = rng.normal();
        auto t = fit_thresholds(v);
        auto labels = compute_labels(v, t);
        std::array<int, 3> counts{}, brute{};
        for (std::size_t i = 0; i < v.size(); ++i) {
            ++counts[static_cast<std::size_t>(labels[i])];
            ++brute[v[i] < t.low ? 0 : (v[i] < t.high ? 1 : 2)];
        }
        EXPECT_EQ(counts, brute);
        // Thresholds at the 33rd/66th percentiles keep classes near 33/33/34.
        const double n = static_cast<double>(v.size());
        EXPECT_LE(std::abs(counts[0] - 0.33 * n), 2.0);
        EXPECT_LE(std::abs(counts[1] - 0.33 * n), 2.0);
    }
    EXPECT_THROW(compute_labels({}, LabelThresholds{}), DimensionError);
}

TEST(VolatilityTest, MatchesDirectFormula) {
    auto table = parse_prices_text("ticker,date,close\nAAA,2020-01-02,100\nAAA,2020-01-03,101\nAAA,2020-01-06,99\n"
                                   "AAA,2020-01-07,102\nAAA,2020-01-01,98\n");
    const auto& s = table.at("AAA");
    ASSERT_EQ(s.front().date, "2020-01-01");
    const double r1 = std::log(101.0 / 100.0), r2 = std::log(99.0 / 101.0), r3 = std::log(102.0 / 99.0);
    const double m = (r1 + r2 + r3) / 3;
    const double sd = std::sqrt(((r1 - m) * (r1 - m) + (r2 - m) * (r2 - m) + (r3 - m) * (r3 - m)) / 2);
    EXPECT_DOUBLE_EQ(log_volatility(s, "2020-01-02", 3), std::log(sd));
    EXPECT_THROW(log_volatility(s, "2020-01-03", 3), FormatError);
    EXPECT_THROW(log_volatility(s, "2019-12-01", 2), FormatError);
    EXPECT_THROW(parse_prices_text("AAA,2020-01-01,-1\n"), FormatError);
}

TEST(SplitTest, RoundingRule) {
    EXPECT_EQ(split_sizes(10), (SplitSizes{8, 1, 1}));
    EXPECT_EQ(split_sizes(17), (SplitSizes{13, 2, 2}));
    EXPECT_EQ(split_sizes(0), (SplitSizes{0, 0, 0}));
    EXPECT_EQ(split_sizes(600), (SplitSizes{480, 60, 60}));
}

TEST(SplitTest, PartitionIsChronological) {
    Rng rng(5);
    for (std::size_t n : {1u, 2u, 10u, 17u, 33u}) {
        std::vector<TranscriptRecord> records;
        for (std::size_t i = 0; i < n; ++i) {
            char date[32];
            std::snprintf(date, sizeof date, "2020-%02d-%02d", 1 + static_cast<int>(rng.below(12)),
                          1 + static_cast<int>(rng.below(28)));
            records.push_back({"id" + std::to_string(i), "T", date, Session::OP, {"x"}, 0, {}});
        }
        auto split = chronological_split(records);
        EXPECT_EQ(split.train.size() + split.val.size() + split.test.size(), n);
        std::set<std::string> ids;
        for (const auto* part : {&split.train, &split.val, &split.test})
            for (const auto& r : *part) ids.insert(r.id);
        EXPECT_EQ(ids.size(), n);
        auto max_date = [](const auto& v) {
            std::string m;
            for (const auto& r : v) m = std::max(m, r.date);
            return m;
        };
        auto min_date = [](const auto& v) {
            std::string m = "9999";
            for (const auto& r : v) m = std::min(m, r.date);
            return m;
        };
        if (!split.val.empty()) EXPECT_LE(max_date(split.train), min_date(split.val));
        if (!split.test.empty()) EXPECT_LE(max_date(split.val), min_date(split.test));
    }
}

TEST(HashEmbedTest, DeterministicAndUnitNorm) {
    auto a = hash_embed("Revenue grew strongly this quarter", 64, 1);
    auto b = hash_embed("Revenue grew strongly this quarter", 64, 1);
    EXPECT_EQ(a.vector, b.vector);
    EXPECT_FALSE(a.empty);
    double norm = 0;
    for (double v : a.vector) norm += v * v;
    EXPECT_NEAR(std::sqrt(norm), 1.0, 1e-10);
    // Identical token multisets map to identical vectors.
    EXPECT_EQ(hash_embed("grew revenue", 64, 1).vector, hash_embed("REVENUE, grew!", 64, 1).vector);
}

TEST(HashEmbedTest, EmptySentenceIsFlaggedZero) {
    auto e = hash_embed("  ! ? a", 16, 1);
    EXPECT_TRUE(e.empty);
    for (double v : e.vector) EXPECT_EQ(v, 0.0);
}

TEST(HashEmbedTest, DisjointVocabulariesAreNearlyOrthogonal) {
    double total = 0;
    for (int i = 0; i < 1000; ++i) {
        std::string a, b;
        for (int k = 0; k < 6; ++k) {
            a += " a" + std::to_string(i) + "x" + std::to_string(k);
            b += " b" + std::to_string(i) + "y" + std::to_string(k);
        }
        auto ea = hash_embed(a, 512, 11), eb = hash_embed(b, 512, 11);
        total += std::abs(std::inner_product(ea.vector.begin(), ea.vector.end(), eb.vector.begin(), 0.0));
    }
    EXPECT_LT(total / 1000.0, 0.2);
}

TEST(GroundTruthTest, RoundTrip) {
    std::vector<GroundTruth> rows{{"T1", 3, 2}, {"T2", 0, 0}};
    EXPECT_EQ(parse_ground_truth_text(format_ground_truth(rows)), rows);
}

TEST(TextTest, TokenizerRules) {
    EXPECT_EQ(tokenize("Q3 EPS rose, a 5% beat!"), (std::vector<std::string>{"q3", "eps", "rose", "beat"}));
    EXPECT_DOUBLE_EQ(jaccard_similarity("rates rose", "Rates fell"), 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(jaccard_similarity("", ""), 1.0);
}

SyntheticSpec small_spec() {
    SyntheticSpec s;
    s.transcripts = 60;
    s.seed = 19;
    return s;
}

TEST(SynthTest, SameSeedGivesIdenticalBytes) {
    const auto a = temp_dir("synth_a"), b = temp_dir("synth_b");
    write_synthetic_corpus(a, synth_generate(small_spec()));
    write_synthetic_corpus(b, synth_generate(small_spec()));
    for (const char* f : {corpus_files::kTranscripts, corpus_files::kCrossDomain, corpus_files::kEmbeddings,
                          corpus_files::kTopics, corpus_files::kGroundTruth}) {
        EXPECT_EQ(read_file_bytes(a / f), read_file_bytes(b / f)) << f;
    }
}

TEST(SynthTest, ZeroTranscriptsIsValidEmptyCorpus) {
    SyntheticSpec s = small_spec();
    s.transcripts = 0;
    auto corpus = synth_generate(s);
    EXPECT_TRUE(corpus.transcripts.empty());
    EXPECT_TRUE(corpus.ground_truth.empty());
    const auto dir = temp_dir("synth_empty");
    write_synthetic_corpus(dir, corpus);
    WarningCapture quiet;
    EXPECT_TRUE(parse_transcripts(dir / corpus_files::kTranscripts).empty());
}

TEST(SynthTest, DecisiveSentenceCarriesClassWords) {
    auto corpus = synth_generate(small_spec());
    ASSERT_EQ(corpus.ground_truth.size(), 60u);
    std::size_t noisy = 0;
    for (std::size_t i = 0; i < corpus.transcripts.size(); ++i) {
        const auto& r = corpus.transcripts[i];
        const auto& g = corpus.ground_truth[i];
        const std::string marker = "c" + std::to_string(g.label) + "p";
        EXPECT_NE(r.sentences[g.decisive_index].find(marker), std::string::npos);
        noisy += *r.label != g.label;
        EXPECT_TRUE(missing_sentence_ids(std::span(&r, 1), corpus.embeddings).empty());
    }
    EXPECT_LT(noisy, 15u);
}

// A linear probe on decisive-sentence embeddings separates the classes when
// labels are clean.
TEST(SynthTest, LinearProbeSeparatesPlantedSentences) {
    SyntheticSpec s;
    s.noise = 0.0;
    auto corpus = synth_generate(s);
    std::vector<std::vector<double>> x;
    std::vector<std::size_t> y;
    for (std::size_t i = 0; i < corpus.transcripts.size(); ++i) {
        const auto& g = corpus.ground_truth[i];
        x.push_back(corpus.embeddings.vector(sentence_id(g.transcript_id, g.decisive_index)));
        y.push_back(static_cast<std::size_t>(g.label));
    }
    const std::size_t cut = x.size() * 4 / 5;
    TopicTrainConfig cfg;
    cfg.epochs = 500;
    cfg.lr = 2.0;
    auto probe = train_topic_head(std::span(x).first(cut), std::span(y).first(cut), 3, cfg);
    std::size_t correct = 0;
    for (std::size_t i = cut; i < x.size(); ++i) correct += assign_topic(x[i], probe).label == y[i];
    EXPECT_GE(static_cast<double>(correct) / static_cast<double>(x.size() - cut), 0.95);
}

}  // namespace
}  // namespace mtca
