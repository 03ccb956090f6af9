#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "mtca/encoder.hpp"
#include "support/gradcheck.hpp"

namespace mtca {
namespace {

using testing::random_tensor;

EncoderConfig small_config() {
    EncoderConfig cfg;
    cfg.d = 16;
    cfg.heads = 2;
    cfg.top_queries = 3;
    cfg.max_sentences = 500;
    cfg.dropout = 0.2;
    return cfg;
}

EncodedTranscript random_transcript(std::size_t sentences, std::size_t d, std::uint64_t seed,
                                    std::size_t pad_to = 0) {
    Rng rng(seed);
    std::vector<std::vector<double>> rows(sentences, std::vector<double>(d));
    for (auto& r : rows)
        for (auto& v : r) v = 2.0 * rng.uniform() - 1.0;
    return encode_positions(rows, d, pad_to);
}

// Dense masked softmax attention written independently of the library path.
Tensor dense_attention(const Tensor& q, const Tensor& k, const Tensor& v, const ops::RowMask& mask = {}) {
    const std::size_t n = q.rows(), m = k.rows(), w = q.cols();
    const double scale = std::sqrt(static_cast<double>(w));
    Tensor out({n, v.cols()}, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (!mask.empty() && !mask[i]) continue;
        std::vector<double> logits(m, -INFINITY);
        double peak = -INFINITY;
        for (std::size_t j = 0; j < m; ++j) {
            if (!mask.empty() && !mask[j]) continue;
            double s = 0;
            for (std::size_t c = 0; c < w; ++c) s += q(i, c) * k(j, c);
            logits[j] = s / scale;
            peak = std::max(peak, logits[j]);
        }
        double z = 0;
        for (auto& l : logits) z += (l = std::exp(l - peak));
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t c = 0; c < v.cols(); ++c) out(i, c) += logits[j] / z * v(j, c);
    }
    return out;
}

TEST(PositionEmbeddingTest, OriginIsSinZeroCosOne) {
    auto p = position_encoding(0, 16);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(p[i], i % 2 == 0 ? 0.0 : 1.0);
}

TEST(PositionEmbeddingTest, ZeroFrequencyAtPositionOne) {
    auto [s, c] = position_embedding(1, 0, 512);
    EXPECT_EQ(s, std::sin(1.0));
    EXPECT_EQ(c, std::cos(1.0));
}

TEST(PositionEmbeddingTest, MatchesHighPrecisionEvaluation) {
    // 40-digit values of sin/cos(7 / 10000^(2f/512)).
    const std::vector<std::tuple<std::size_t, double, double>> frozen = {
        {0, 0.6569865987187890904, 0.75390225434330463814},
        {1, 0.45239231578916220676, 0.89181903579981905381},
        {5, -0.42199749182385791884, 0.90659699806163762134},
        {64, 0.64421768723769105367, 0.76484218728448842626},
        {255, 0.00072564298622421794502, 0.99999973672109361391},
    };
    auto p = position_encoding(7, 512);
    for (auto [f, s, c] : frozen) {
        EXPECT_NEAR(p[2 * f], s, 1e-13) << f;
        EXPECT_NEAR(p[2 * f + 1], c, 1e-13) << f;
    }
    for (std::size_t f = 0; f < 256; ++f) {
        const long double angle = 7.0L / std::pow(10000.0L, 2.0L * f / 512.0L);
        EXPECT_NEAR(p[2 * f], static_cast<double>(std::sin(angle)), 1e-13);
        EXPECT_NEAR(p[2 * f + 1], static_cast<double>(std::cos(angle)), 1e-13);
    }
}

TEST(PositionEmbeddingTest, FrequencyOutOfRange) {
    EXPECT_THROW(position_embedding(0, 8, 16), DimensionError);
}

TEST(SparsityScoreTest, OrthogonalQueryScoresZero) {
    Tensor keys = Tensor::matrix(3, 3, {0, 1, 0, 0, 0, 1, 0, 2, 3});
    EXPECT_EQ(sparsity_score(std::vector<double>{1, 0, 0}, keys, 2.0), 0.0);
}

TEST(SparsityScoreTest, SingleAlignedKeyClosedForm) {
    Tensor keys = Tensor::matrix(4, 4, {2, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
    std::vector<double> q{3, 0, 0, 0};
    const double scale = 2.0;
    const double expected = (3.0 * 2.0 / scale) * (1.0 - 1.0 / 4.0);
    EXPECT_NEAR(sparsity_score(q, keys, scale), expected, 1e-15);
}

TEST(SparsityScoreTest, MatchesBruteForceAndIsNonNegative) {
    Rng rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor keys = random_tensor({8, 5}, rng);
        Tensor q = random_tensor({1, 5}, rng);
        std::vector<double> dots;
        for (std::size_t y = 0; y < 8; ++y) {
            double s = 0;
            for (std::size_t c = 0; c < 5; ++c) s += q[c] * keys(y, c);
            dots.push_back(s / std::sqrt(5.0));
        }
        const double brute =
            *std::max_element(dots.begin(), dots.end()) - std::accumulate(dots.begin(), dots.end(), 0.0) / 8.0;
        const double s = sparsity_score(q.values(), keys, std::sqrt(5.0));
        EXPECT_NEAR(s, brute, 1e-12);
        EXPECT_GE(s, 0.0);
    }
}

TEST(SparsityScoreTest, EmptyKeysThrow) {
    Tensor keys = Tensor::matrix(1, 2, {1, 1});
    EXPECT_THROW(sparsity_score(std::vector<double>{1, 1}, keys, 1.0, {false}), DimensionError);
}

TEST(ProbSparseAttentionTest, FullSelectionEqualsDense) {
    Rng rng(8);
    for (std::size_t n : {1u, 5u, 16u, 32u}) {
        Tensor q = random_tensor({n, 4}, rng), k = random_tensor({n, 4}, rng), v = random_tensor({n, 3}, rng);
        Tape t;
        Var out = probsparse_attention(t.constant(q), t.constant(k), t.constant(v), n);
        Tensor ref = dense_attention(q, k, v);
        for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out.value()[i], ref[i], 1e-10);
    }
}

TEST(ProbSparseAttentionTest, EqualRowsGiveDenseOutputForAnySelection) {
    Tensor q = Tensor::matrix(4, 2, {1, 2, 1, 2, 1, 2, 1, 2});
    Tensor v = Tensor::matrix(4, 2, {0.5, -1, 0.5, -1, 0.5, -1, 0.5, -1});
    Tensor ref = dense_attention(q, q, v);
    for (std::size_t top = 0; top <= 4; ++top) {
        Tape t;
        Var out = probsparse_attention(t.constant(q), t.constant(q), t.constant(v), top);
        for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out.value()[i], ref[i], 1e-12);
    }
}

TEST(ProbSparseAttentionTest, TopQueriesMatchBruteForceRanking) {
    Rng rng(12);
    Tensor q = random_tensor({16, 8}, rng), k = random_tensor({16, 8}, rng), v = random_tensor({16, 8}, rng);
    const double scale = std::sqrt(8.0);
    std::vector<std::pair<double, std::size_t>> ranked;
    for (std::size_t x = 0; x < 16; ++x) {
        std::vector<double> dots;
        for (std::size_t y = 0; y < 16; ++y) {
            double s = 0;
            for (std::size_t c = 0; c < 8; ++c) s += q(x, c) * k(y, c);
            dots.push_back(s / scale);
        }
        ranked.emplace_back(*std::max_element(dots.begin(), dots.end()) -
                                std::accumulate(dots.begin(), dots.end(), 0.0) / 16.0,
                            x);
    }
    std::sort(ranked.begin(), ranked.end(), [](auto a, auto b) { return a.first > b.first; });
    std::vector<std::size_t> expected;
    for (int i = 0; i < 4; ++i) expected.push_back(ranked[i].second);
    std::sort(expected.begin(), expected.end());
    EXPECT_EQ(select_top_queries(q, k, scale, 4), expected);

    Tape t;
    Var out = probsparse_attention(t.constant(q), t.constant(k), t.constant(v), 4);
    Tensor dense = dense_attention(q, k, v);
    for (std::size_t x = 0; x < 16; ++x) {
        const bool top = std::find(expected.begin(), expected.end(), x) != expected.end();
        for (std::size_t c = 0; c < 8; ++c) {
            double mean = 0;
            for (std::size_t y = 0; y < 16; ++y) mean += v(y, c) / 16.0;
            EXPECT_NEAR(out.value()(x, c), top ? dense(x, c) : mean, 1e-12);
        }
    }
}

TEST(ProbSparseAttentionTest, MaskedKeysGetNoWeight) {
    Rng rng(4);
    Tensor q = random_tensor({5, 4}, rng), k = random_tensor({5, 4}, rng), v = random_tensor({5, 2}, rng);
    ops::RowMask mask{true, true, false, true, false};
    Tape t;
    Var out = probsparse_attention(t.constant(q), t.constant(k), t.constant(v), 5, mask);
    Tensor ref = dense_attention(q, k, v, mask);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out.value()[i], ref[i], 1e-12);
    EXPECT_THROW(probsparse_attention(t.constant(q), t.constant(k), t.constant(v), 2, ops::RowMask(5, false)),
                 DimensionError);
}

TEST(EncoderConfigTest, RejectsIndivisibleWidths) {
    EncoderConfig cfg = small_config();
    cfg.heads = 3;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = small_config();
    cfg.top_queries = 600;
    EXPECT_THROW(cfg.validate(), ConfigError);
    EXPECT_NO_THROW(EncoderConfig{}.validate());
}

TEST(SpLayerTest, HalvesSequenceLengthPerLayer) {
    EncoderConfig cfg = small_config();
    Encoder enc = Encoder::initialize(cfg, 1);
    Rng rng(2);
    Tape t;
    ForwardOptions opt;
    opt.track_gradients = false;
    std::vector<Var> params;
    for (std::size_t i = 0; i < enc.parameters().size(); ++i) params.push_back(t.constant(enc.parameters()[i]));
    Var x = t.constant(random_tensor({500, 16}, rng));
    Var l1 = enc.sp_layer(x, 0, params);
    EXPECT_EQ(l1.value().rows(), 250u);
    EXPECT_EQ(l1.value().cols(), 8u);
    Var l2 = enc.sp_layer(l1, 1, params);
    EXPECT_EQ(l2.value().rows(), 125u);
    EXPECT_EQ(l2.value().cols(), 4u);
}

TEST(EncoderTest, DeterministicForFixedSeed) {
    auto run = [] {
        Encoder enc = Encoder::initialize(small_config(), 99);
        EncodedTranscript e = random_transcript(9, 16, 3);
        Rng rng(5);
        Tape t;
        ForwardOptions opt;
        opt.training = true;
        opt.rng = &rng;
        auto out = enc.forward(t, e, opt);
        t.backward(ops::cross_entropy(out.probabilities, std::vector<double>{0, 1, 0}));
        return std::make_pair(out.probabilities.value(), t.grad(out.parameters[0]));
    };
    EXPECT_EQ(run(), run());
}

TEST(EncoderTest, ZeroInputGivesZeroRepresentation) {
    Encoder enc = Encoder::initialize(small_config(), 4);
    EncodedTranscript e{Tensor({6, 16}, 0.0), ops::RowMask(6, true)};
    for (double v : enc.representation(e)) EXPECT_EQ(v, 0.0);
}

TEST(EncoderTest, PaddingRowsDoNotChangeOutput) {
    Encoder enc = Encoder::initialize(small_config(), 4);
    EncodedTranscript plain = random_transcript(7, 16, 8);
    EncodedTranscript padded = random_transcript(7, 16, 8, 20);
    Rng rng(1);
    for (std::size_t r = 7; r < 20; ++r)
        for (std::size_t c = 0; c < 16; ++c) padded.rows(r, c) = rng.uniform();
    const auto base = enc.predict(plain);
    EXPECT_EQ(enc.predict(padded), base);
    // Permute the padding rows.
    for (std::size_t c = 0; c < 16; ++c) std::swap(padded.rows(8, c), padded.rows(19, c));
    EXPECT_EQ(enc.predict(padded), base);
}

TEST(EncoderTest, EmptyTranscriptRejected) {
    Encoder enc = Encoder::initialize(small_config(), 4);
    EncodedTranscript e{Tensor({3, 16}, 0.0), ops::RowMask(3, false)};
    EXPECT_THROW(enc.predict(e), DimensionError);
}

TEST(EncoderTest, OutputDistributionSumsToOne) {
    Encoder enc = Encoder::initialize(small_config(), 6);
    for (std::uint64_t s = 0; s < 10; ++s) {
        auto p = enc.predict(random_transcript(2 + s, 16, s));
        EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-10);
    }
}

// Loss gradient w.r.t. every encoder parameter against central differences on
// a 6-sentence toy transcript.
TEST(EncoderTest, FullModelGradientMatchesFiniteDifferences) {
    EncoderConfig cfg = small_config();
    Encoder enc = Encoder::initialize(cfg, 17);
    // Nonzero biases so every parameter receives gradient.
    Rng rng(3);
    for (std::size_t i = 0; i < enc.parameters().size(); ++i)
        if (enc.parameters().name(i).ends_with("bias"))
            for (auto& v : enc.parameters()[i].values()) v = 0.1 * (2 * rng.uniform() - 1);
    EncodedTranscript e = random_transcript(6, 16, 21);
    const std::vector<double> target{0, 0, 1};

    Tape tape;
    auto out = enc.forward(tape, e);
    tape.backward(ops::cross_entropy(out.probabilities, target));
    std::vector<double> analytic;
    for (auto v : out.parameters) {
        auto g = tape.grad(v);
        analytic.insert(analytic.end(), g.values().begin(), g.values().end());
    }

    auto loss_at = [&](const std::vector<double>& theta) {
        Encoder probe = enc;
        probe.parameters().assign(theta);
        auto p = probe.predict(e);
        return -std::log(p[2]);
    };
    std::vector<double> theta = enc.parameters().flatten();
    double worst = 0.0;
    const double h = 1e-5;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double saved = theta[i];
        theta[i] = saved + h;
        const double up = loss_at(theta);
        theta[i] = saved - h;
        const double down = loss_at(theta);
        theta[i] = saved;
        worst = std::max(worst, testing::relative_error(analytic[i], (up - down) / (2 * h)));
    }
    EXPECT_LT(worst, 1e-4);
}

TEST(PredictTest, ZeroHeadIsUniform) {
    auto p = predict_distribution(std::vector<double>{1, 2}, Tensor({3, 2}, 0.0), std::vector<double>{0, 0, 0});
    for (double v : p) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(PredictTest, LargeBiasDominates) {
    auto p = predict_distribution(std::vector<double>{1, 2}, Tensor({3, 2}, 0.0), std::vector<double>{10, 0, 0});
    EXPECT_EQ(argmax(p), 0u);
    EXPECT_GT(p[0], 0.999);
}

TEST(PredictTest, MatchesIndependentRecomputation) {
    Rng rng(13);
    Tensor w = random_tensor({3, 4}, rng);
    std::vector<double> rep{0.3, -0.2, 0.9, 0.1}, b{0.1, -0.3, 0.2};
    auto p = predict_distribution(rep, w, b);
    long double z = 0, e[3];
    for (int c = 0; c < 3; ++c) {
        long double l = b[c];
        for (int j = 0; j < 4; ++j) l += static_cast<long double>(w(c, j)) * rep[j];
        z += (e[c] = std::exp(l));
    }
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(p[c], static_cast<double>(e[c] / z), 1e-15);
}

TEST(CheckpointTest, RoundTripIsExact) {
    Encoder enc = Encoder::initialize(small_config(), 23);
    auto bytes = serialize_checkpoint(enc);
    ASSERT_GE(bytes.size(), 4u);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "MTCA");
    Encoder back = deserialize_checkpoint(bytes);
    EXPECT_EQ(back.parameters(), enc.parameters());
    EXPECT_EQ(back.config(), enc.config());
    bytes[0] = 'X';
    EXPECT_THROW(deserialize_checkpoint(bytes), FormatError);
    auto truncated = serialize_checkpoint(enc);
    truncated.resize(truncated.size() - 3);
    EXPECT_THROW(deserialize_checkpoint(truncated), FormatError);
}

// Golden representation for a fixed seed and transcript. Regenerate with
// MTCA_REGENERATE_GOLDEN=1 after an intentional change to the encoder.
TEST(EncoderTest, GoldenRepresentation) {
    const std::filesystem::path golden = std::filesystem::path(MTCA_TEST_DATA_DIR) / "encoder_golden.txt";
    Encoder enc = Encoder::initialize(small_config(), 2024);
    auto rep = enc.representation(random_transcript(12, 16, 2025));
    if (std::getenv("MTCA_REGENERATE_GOLDEN")) {
        std::ofstream out(golden);
        out << std::hexfloat;
        for (double v : rep) out << v << '\n';
    }
    std::ifstream in(golden);
    ASSERT_TRUE(in) << "missing " << golden;
    std::vector<double> stored;
    std::string line;
    while (std::getline(in, line)) stored.push_back(std::strtod(line.c_str(), nullptr));
    EXPECT_EQ(rep, stored);
}

}  // namespace
}  // namespace mtca
