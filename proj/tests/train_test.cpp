#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mtca/error.hpp"
#include "mtca/train.hpp"

namespace mtca {
namespace {

EncoderConfig tiny_config(double dropout = 0.2) {
    EncoderConfig cfg;
    cfg.d = 8;
    cfg.heads = 2;
    cfg.top_queries = 2;
    cfg.max_sentences = 16;
    cfg.dropout = dropout;
    return cfg;
}

EncodedTranscript random_transcript(std::size_t sentences, std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::vector<double>> rows(sentences, std::vector<double>(d));
    for (auto& r : rows)
        for (auto& v : r) v = 2.0 * rng.uniform() - 1.0;
    return encode_positions(rows, d);
}

double plain_ce(std::span<const double> target, std::span<const double> q) {
    double s = 0;
    for (std::size_t c = 0; c < q.size(); ++c) s -= target[c] * std::log(q[c]);
    return s;
}

double plain_kl(std::span<const double> p, std::span<const double> q) {
    double s = 0;
    for (std::size_t c = 0; c < p.size(); ++c) s += p[c] * (std::log(p[c]) - std::log(q[c]));
    return s;
}

TEST(CrossEntropy, NearOneHotPredictionIsNearZero) {
    Tape tape;
    auto q = tape.constant(Tensor::row({1.0 - 2e-9, 1e-9, 1e-9}));
    const double target[] = {1, 0, 0};
    EXPECT_NEAR(ops::cross_entropy(q, target).value()[0], 0.0, 1e-8);
}

TEST(CrossEntropy, UniformAgainstUniformIsLn3) {
    Tape tape;
    const auto u = uniform_target(3);
    auto q = tape.constant(Tensor::row(u));
    EXPECT_NEAR(ops::cross_entropy(q, u).value()[0], std::log(3.0), 1e-12);
}

TEST(CrossEntropy, SoftTargetMatchesHighPrecisionValue) {
    Tape tape;
    auto q = tape.constant(Tensor::row({0.1, 0.6, 0.3}));
    const double target[] = {0.2, 0.3, 0.5};
    // 50-digit evaluation of -(0.2 ln 0.1 + 0.3 ln 0.6 + 0.5 ln 0.3)
    EXPECT_NEAR(ops::cross_entropy(q, target).value()[0], 1.215751107891574338, 1e-14);
}

TEST(KlRegularizedLoss, DropoutZeroGivesExactlyZeroKl) {
    const auto enc = Encoder::initialize(tiny_config(0.0), 3);
    const auto input = random_transcript(6, 8, 4);
    const auto target = one_hot(1, 3);
    Tape tape;
    Rng rng(5);
    const auto params = enc.bind(tape);
    const auto terms = kl_regularized_loss(tape, enc, params, input, target, 0.3, rng);
    EXPECT_EQ(terms.kl.value()[0], 0.0);
}

TEST(KlRegularizedLoss, AlphaZeroIsBitwiseCrossEntropy) {
    const auto enc = Encoder::initialize(tiny_config(0.3), 3);
    const auto input = random_transcript(6, 8, 4);
    const auto target = one_hot(2, 3);
    Tape tape;
    Rng rng(5);
    const auto params = enc.bind(tape);
    const auto terms = kl_regularized_loss(tape, enc, params, input, target, 0.0, rng);
    EXPECT_GT(terms.kl.value()[0], 0.0);
    const double ce = terms.cross_entropy.value()[0];
    const double total = terms.total.value()[0];
    EXPECT_EQ(std::memcmp(&ce, &total, sizeof ce), 0);
}

TEST(KlRegularizedLoss, MatchesHandAssembledTwoPassValue) {
    const auto enc = Encoder::initialize(tiny_config(0.3), 8);
    const auto input = random_transcript(7, 8, 9);
    const std::vector<double> target = {0.2, 0.5, 0.3};
    const double alpha = 0.3;

    Tape tape;
    Rng rng(21);
    const auto params = enc.bind(tape);
    const auto terms = kl_regularized_loss(tape, enc, params, input, target, alpha, rng);

    // Replay both dropout passes on separate tapes from the same stream.
    Rng replay(21);
    ForwardOptions opts;
    opts.training = true;
    opts.rng = &replay;
    Tape t1, t2;
    const auto p1 = enc.forward(t1, input, opts).probabilities.value().data();
    const auto p2 = enc.forward(t2, input, opts).probabilities.value().data();
    ASSERT_NE(p1, p2);
    const double expected = plain_ce(target, p1) + alpha / 2.0 * (plain_kl(p1, p2) + plain_kl(p2, p1));
    EXPECT_NEAR(terms.total.value()[0], expected, 1e-12);

    Tape tape2;
    Rng rng2(21);
    const auto params2 = enc.bind(tape2);
    const auto avg = kl_regularized_loss(tape2, enc, params2, input, target, alpha, rng2, true);
    const double expected_avg =
        0.5 * (plain_ce(target, p1) + plain_ce(target, p2)) + alpha / 2.0 * (plain_kl(p1, p2) + plain_kl(p2, p1));
    EXPECT_NEAR(avg.total.value()[0], expected_avg, 1e-12);
}

TEST(KlRegularizedLoss, KlTermIsNonNegativeAndSymmetric) {
    const auto enc = Encoder::initialize(tiny_config(0.5), 1);
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto input = random_transcript(3 + s % 5, 8, 100 + s);
        Tape tape;
        Rng rng(s);
        const auto params = enc.bind(tape);
        const auto terms = kl_regularized_loss(tape, enc, params, input, one_hot(s % 3, 3), 1.0, rng);
        EXPECT_GE(terms.kl.value()[0], 0.0);
    }
}

TEST(KlRegularizedLoss, GradientMatchesFiniteDifference) {
    auto enc = Encoder::initialize(tiny_config(0.3), 12);
    const auto input = random_transcript(5, 8, 13);
    const auto target = uniform_target(3);
    auto loss_at = [&](const Encoder& e) {
        Tape tape;
        Rng rng(77);
        const auto params = e.bind(tape);
        return kl_regularized_loss(tape, e, params, input, target, 0.3, rng).total.value()[0];
    };
    Tape tape;
    Rng rng(77);
    const auto params = enc.bind(tape);
    tape.backward(kl_regularized_loss(tape, enc, params, input, target, 0.3, rng).total);
    const auto& head = enc.parameters().index_of("head.weight");
    const auto analytic = tape.grad(params[head]);
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        auto plus = enc, minus = enc;
        plus.parameters()[head][i] += 1e-6;
        minus.parameters()[head][i] -= 1e-6;
        const double numeric = (loss_at(plus) - loss_at(minus)) / 2e-6;
        EXPECT_NEAR(analytic[i], numeric, 1e-6 * std::max(1.0, std::abs(numeric)));
    }
}

TEST(AdamW, ZeroGradientWithoutDecayLeavesParametersUnchanged) {
    std::vector<double> p = {1.5, -2.0, 0.25};
    const auto before = p;
    std::vector<double> g(3, 0.0);
    AdamWState state;
    for (int i = 0; i < 4; ++i) adamw_step(p, g, state, {0.1, 0.0});
    EXPECT_EQ(p, before);
}

TEST(AdamW, ZeroGradientDecaysMultiplicatively) {
    std::vector<double> p = {1.5, -2.0, 0.25};
    const auto before = p;
    AdamWState state;
    adamw_step(p, std::vector<double>(3, 0.0), state, {0.1, 0.01});
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p[i], before[i] * (1.0 - 0.1 * 0.01));
}

TEST(AdamW, ConstantGradientFollowsClosedForm) {
    // With g = 1 both bias-corrected moments are exactly 1, so each step moves
    // by lr / (1 + eps).
    std::vector<double> p = {0.0};
    AdamWState state;
    const AdamWParams hyper{0.05, 0.0};
    for (int t = 1; t <= 50; ++t) {
        adamw_step(p, std::vector<double>{1.0}, state, hyper);
        EXPECT_NEAR(p[0], -t * 0.05 / (1.0 + 1e-8), 1e-12);
    }
}

TEST(AdamW, ReproducesReferenceTrajectory) {
    std::ifstream in(std::string(MTCA_TEST_DATA_DIR) + "/adamw_trace.txt");
    ASSERT_TRUE(in);
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream fields(line);
        std::string tok;
        fields >> tok;
        const double wd = std::strtod(tok.c_str(), nullptr);
        std::vector<double> p = {1.0};
        AdamWState state;
        for (int step = 0; step < 3; ++step) {
            fields >> tok;
            adamw_step(p, std::vector<double>{1.0}, state, {0.1, wd});
            // torch and a plain float64 replay differ in the last bit, so a
            // few ulps of slack.
            EXPECT_NEAR(p[0], std::strtod(tok.c_str(), nullptr), 1e-15) << "wd=" << wd << " step " << step + 1;
        }
        ++rows;
    }
    EXPECT_EQ(rows, 2);
}

TEST(AdamW, RejectsMismatchedState) {
    std::vector<double> p = {1.0, 2.0};
    AdamWState state;
    state.m = {0.0};
    state.v = {0.0};
    EXPECT_THROW(adamw_step(p, std::vector<double>{1.0, 1.0}, state, {}), DimensionError);
    AdamWState fresh;
    std::vector<double> huge = {1e308};
    EXPECT_THROW(adamw_step(huge, std::vector<double>{1.0}, fresh, {-1e308, 0.0}), NumericError);
}

// Class c transcripts carry a prototype direction for c in every sentence.
std::vector<TrainingExample> prototype_task(std::size_t n, std::uint64_t seed, double noise = 0.6) {
    const std::size_t d = 8;
    Rng rng(seed);
    std::vector<std::vector<double>> protos(3, std::vector<double>(d));
    for (auto& p : protos)
        for (auto& v : p) v = rng.normal();
    std::vector<TrainingExample> out;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % 3;
        std::vector<std::vector<double>> rows(4, std::vector<double>(d));
        for (auto& r : rows)
            for (std::size_t k = 0; k < d; ++k) r[k] = protos[c][k] + noise * rng.normal();
        out.push_back({encode_positions(rows, d), one_hot(c, 3)});
    }
    return out;
}

TrainConfig quick_config() {
    TrainConfig cfg;
    cfg.lr = 3e-3;
    cfg.batch = 8;
    cfg.dropout = 0.0;
    cfg.alpha = 0.3;
    cfg.epochs_per_round = 5;
    cfg.checkpoint_every = 2;
    cfg.seed = 42;
    return cfg;
}

TEST(TrainRound, ZeroLearningRateKeepsParametersBitIdentical) {
    const auto pool = prototype_task(24, 1);
    auto cfg = quick_config();
    cfg.lr = 0.0;
    const auto enc = Encoder::initialize(tiny_config(0.2), 7);
    const auto result = train_round(pool, enc, cfg, 1);
    EXPECT_EQ(result.encoder.parameters(), enc.parameters());
}

TEST(TrainRound, SameSeedGivesIdenticalCheckpoint) {
    const auto pool = prototype_task(24, 1);
    auto cfg = quick_config();
    const auto enc = Encoder::initialize(tiny_config(0.2), 7);
    const auto a = train_round(pool, enc, cfg, 1);
    const auto b = train_round(pool, enc, cfg, 1);
    EXPECT_EQ(serialize_checkpoint(a.encoder), serialize_checkpoint(b.encoder));
    EXPECT_EQ(serialize_trace(a.trace), serialize_trace(b.trace));
    EXPECT_EQ(a.metrics, b.metrics);
    cfg.seed = 43;
    const auto c = train_round(pool, enc, cfg, 1);
    EXPECT_NE(serialize_checkpoint(a.encoder), serialize_checkpoint(c.encoder));
}

TEST(TrainRound, TrainingAccuracyRisesOverFirstFiveEpochs) {
    const auto pool = prototype_task(90, 3, 1.5);
    auto cfg = quick_config();
    cfg.lr = 1e-3;
    cfg.batch = 10;
    const auto result = train_round(pool, Encoder::initialize(tiny_config(0.0), 5), cfg, 1);
    std::vector<double> acc;
    for (const auto& m : result.metrics)
        if (m.split == "train") acc.push_back(m.accuracy);
    ASSERT_EQ(acc.size(), 5u);
    for (std::size_t e = 1; e < acc.size(); ++e) EXPECT_GT(acc[e], acc[e - 1]) << "epoch " << e + 1;
}

TEST(TrainRound, CheckpointScheduleAndTraceRoundTrip) {
    const auto pool = prototype_task(20, 2);
    auto cfg = quick_config();
    cfg.epochs_per_round = 7;
    cfg.checkpoint_every = 3;
    const auto result = train_round(pool, Encoder::initialize(tiny_config(), 1), cfg, 1);
    // 20 examples in batches of 8 -> 3 steps per epoch; saves after epochs 3, 6, 7.
    ASSERT_EQ(result.trace.entries.size(), 3u);
    EXPECT_EQ(result.trace.entries[0].step, 9u);
    EXPECT_EQ(result.trace.entries[1].step, 18u);
    EXPECT_EQ(result.trace.entries[2].step, 21u);
    EXPECT_EQ(result.trace.entries.back().params, result.encoder.parameters());
    EXPECT_EQ(deserialize_trace(serialize_trace(result.trace)), result.trace);
}

TEST(TrainRound, UniformTargetsAndValidationMetrics) {
    auto pool = prototype_task(12, 4);
    pool[0].target = uniform_target(3);
    std::vector<LabeledInput> val;
    for (const auto& ex : prototype_task(6, 4)) val.push_back({ex.input, static_cast<int>(argmax(ex.target))});
    const auto result = train_round(pool, Encoder::initialize(tiny_config(), 1), quick_config(), 2, val);
    std::size_t val_rows = 0;
    for (const auto& m : result.metrics) {
        EXPECT_EQ(m.round, 2u);
        val_rows += m.split == "val";
    }
    EXPECT_EQ(val_rows, 5u);
    EXPECT_EQ(parse_metrics_text(format_metrics(result.metrics)), result.metrics);
}

TEST(TrainRound, RejectsBadInputs) {
    const auto enc = Encoder::initialize(tiny_config(), 1);
    EXPECT_THROW(train_round({}, enc, quick_config(), 1), ConfigError);
    auto pool = prototype_task(3, 1);
    pool[1].target = {0.5, 0.5};
    EXPECT_THROW(train_round(pool, enc, quick_config(), 1), DimensionError);
    auto cfg = quick_config();
    cfg.batch = 0;
    EXPECT_THROW(train_round(prototype_task(3, 1), enc, cfg, 1), ConfigError);
}

TEST(CheckpointTrace, RejectsNonIncreasingSteps) {
    const auto enc = Encoder::initialize(tiny_config(), 1);
    CheckpointTrace trace{enc.config(), {{5, enc.parameters(), 0.1}, {5, enc.parameters(), 0.1}}};
    EXPECT_THROW(trace.validate(), FormatError);
    auto bytes = serialize_trace(CheckpointTrace{enc.config(), {{5, enc.parameters(), 0.1}}});
    bytes.pop_back();
    EXPECT_THROW(deserialize_trace(bytes), FormatError);
}

}  // namespace
}  // namespace mtca
