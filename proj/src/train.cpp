#include "mtca/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mtca/binary_io.hpp"
#include "mtca/error.hpp"
#include "mtca/parallel.hpp"

namespace mtca {

namespace {

constexpr char kTraceMagic[4] = {'M', 'T', 'R', 'C'};
constexpr std::uint32_t kTraceVersion = 1;

// Seed-path tags keeping the shuffle and dropout streams apart.
constexpr std::uint64_t kShuffleStream = 11;
constexpr std::uint64_t kDropoutStream = 12;

void flatten_grads(const Tape& tape, std::span<const Var> params, std::span<double> out) {
    std::size_t offset = 0;
    for (const Var& p : params) {
        const std::size_t n = p.value().size();
        if (tape.requires_grad(p)) {
            const auto& g = tape.grad_at(p.id());
            if (g.size() == n) {
                std::copy(g.values().begin(), g.values().end(), out.begin() + static_cast<std::ptrdiff_t>(offset));
            } else {
                std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(offset), n, 0.0);
            }
        } else {
            std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(offset), n, 0.0);
        }
        offset += n;
    }
}

bool is_one_hot(std::span<const double> target) {
    std::size_t ones = 0;
    for (double t : target) {
        if (t == 1.0) {
            ++ones;
        } else if (t != 0.0) {
            return false;
        }
    }
    return ones == 1;
}

void write_config(ByteWriter& w, const EncoderConfig& cfg) {
    for (auto v : {cfg.d, cfg.max_sentences, cfg.heads, cfg.top_queries, cfg.num_classes, cfg.stacked_layers,
                   cfg.conv_width}) {
        w.u32(static_cast<std::uint32_t>(v));
    }
    w.f64(cfg.dropout);
}

EncoderConfig read_config(ByteReader& r) {
    EncoderConfig cfg;
    for (auto* v : {&cfg.d, &cfg.max_sentences, &cfg.heads, &cfg.top_queries, &cfg.num_classes, &cfg.stacked_layers,
                    &cfg.conv_width}) {
        *v = r.u32();
    }
    cfg.dropout = r.f64();
    cfg.validate();
    return cfg;
}

}  // namespace

void TrainConfig::validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train: lr must be a finite non-negative number");
    if (batch == 0) throw ConfigError("train: batch must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be non-negative");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("train: dropout must be in [0, 1)");
    if (!(alpha >= 0.0)) throw ConfigError("train: alpha must be non-negative");
    if (rounds == 0) throw ConfigError("train: rounds must be positive");
    if (epochs_per_round == 0) throw ConfigError("train: epochs_per_round must be positive");
    if (checkpoint_every == 0) throw ConfigError("train: checkpoint_every must be positive");
    if (!(early_stop_delta >= 0.0)) throw ConfigError("train: early_stop_delta must be non-negative");
}

std::vector<double> one_hot(std::size_t label, std::size_t classes) {
    if (label >= classes) throw DimensionError("label out of range");
    std::vector<double> t(classes, 0.0);
    t[label] = 1.0;
    return t;
}

std::vector<double> uniform_target(std::size_t classes) {
    return std::vector<double>(classes, 1.0 / static_cast<double>(classes));
}

LossTerms kl_regularized_loss(Tape& tape, const Encoder& encoder, std::span<const Var> params,
                              const EncodedTranscript& input, std::span<const double> target, double alpha,
                              Rng& rng, bool average_passes) {
    ForwardOptions opts;
    opts.training = true;
    opts.rng = &rng;
    auto first = encoder.forward(tape, input, params, opts);
    auto second = encoder.forward(tape, input, params, opts);

    LossTerms terms;
    terms.first_probabilities = first.probabilities;
    terms.cross_entropy = ops::cross_entropy(first.probabilities, target);
    if (average_passes) {
        terms.cross_entropy =
            ops::scale(ops::add(terms.cross_entropy, ops::cross_entropy(second.probabilities, target)), 0.5);
    }
    terms.kl = ops::add(ops::kl_divergence(first.probabilities, second.probabilities),
                        ops::kl_divergence(second.probabilities, first.probabilities));
    terms.total = ops::add(terms.cross_entropy, ops::scale(terms.kl, alpha / 2.0));
    if (!std::isfinite(terms.total.value()[0])) throw NumericError("loss is not finite");
    return terms;
}

void adamw_step(std::span<double> params, std::span<const double> grads, AdamWState& state, const AdamWParams& p) {
    const std::size_t n = params.size();
    if (grads.size() != n) throw DimensionError("adamw: gradient size mismatch");
    if (state.m.empty() && state.v.empty()) {
        state.m.assign(n, 0.0);
        state.v.assign(n, 0.0);
    }
    if (state.m.size() != n || state.v.size() != n) throw DimensionError("adamw: moment state size mismatch");

    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bias1 = 1.0 - std::pow(p.beta1, t);
    const double bias2 = 1.0 - std::pow(p.beta2, t);
    const double step_size = p.lr / bias1;
    const double bias2_sqrt = std::sqrt(bias2);
    const double decay = 1.0 - p.lr * p.weight_decay;

    std::vector<double> next(params.begin(), params.end());
    for (std::size_t i = 0; i < n; ++i) {
        next[i] *= decay;
        state.m[i] = p.beta1 * state.m[i] + (1.0 - p.beta1) * grads[i];
        state.v[i] = p.beta2 * state.v[i] + (1.0 - p.beta2) * grads[i] * grads[i];
        const double denom = std::sqrt(state.v[i]) / bias2_sqrt + p.eps;
        next[i] -= step_size * (state.m[i] / denom);
        if (!std::isfinite(next[i])) throw NumericError("adamw: non-finite parameter update");
    }
    std::copy(next.begin(), next.end(), params.begin());
}

std::string format_metric(const MetricRecord& m) {
    nlohmann::ordered_json j;
    j["round"] = m.round;
    j["epoch"] = m.epoch;
    j["split"] = m.split;
    j["loss"] = m.loss;
    j["accuracy"] = m.accuracy;
    return j.dump();
}

std::string format_metrics(std::span<const MetricRecord> records) {
    std::string out;
    for (const auto& m : records) out += format_metric(m) + '\n';
    return out;
}

std::vector<MetricRecord> parse_metrics_text(std::string_view text) {
    std::vector<MetricRecord> out;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            out.push_back({j.at("round").get<std::size_t>(), j.at("epoch").get<std::size_t>(),
                           j.at("split").get<std::string>(), j.at("loss").get<double>(),
                           j.at("accuracy").get<double>()});
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("metrics line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

void CheckpointTrace::validate() const {
    config.validate();
    const auto layout = Encoder::parameter_layout(config);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (i > 0 && entries[i].step <= entries[i - 1].step) {
            throw FormatError("checkpoint trace: step ids must be strictly increasing");
        }
        if (!entries[i].params.same_layout(layout)) {
            throw DimensionError("checkpoint trace: snapshot " + std::to_string(i) + " does not match the encoder config");
        }
    }
}

Encoder CheckpointTrace::model(std::size_t i) const { return Encoder(config, entries.at(i).params); }

std::vector<std::uint8_t> serialize_trace(const CheckpointTrace& trace) {
    trace.validate();
    ByteWriter w;
    w.raw(std::string_view(kTraceMagic, 4));
    w.u32(kTraceVersion);
    write_config(w, trace.config);
    w.u32(static_cast<std::uint32_t>(trace.entries.size()));
    for (const auto& e : trace.entries) {
        w.u64(e.step);
        w.f64(e.lr);
        const auto& params = e.params;
        for (std::size_t i = 0; i < params.size(); ++i) {
            for (double v : params[i].values()) w.f64(v);
        }
    }
    return w.take();
}

CheckpointTrace deserialize_trace(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "checkpoint trace");
    if (r.raw(4) != std::string_view(kTraceMagic, 4)) throw FormatError("checkpoint trace: bad magic");
    const auto version = r.u32();
    if (version != kTraceVersion) throw FormatError("checkpoint trace: unsupported version " + std::to_string(version));
    CheckpointTrace trace;
    trace.config = read_config(r);
    const auto count = r.u32();
    for (std::uint32_t k = 0; k < count; ++k) {
        CheckpointTrace::Entry e;
        e.step = r.u64();
        e.lr = r.f64();
        e.params = Encoder::parameter_layout(trace.config);
        for (std::size_t i = 0; i < e.params.size(); ++i) {
            for (auto& v : e.params[i].values()) v = r.f64();
        }
        trace.entries.push_back(std::move(e));
    }
    if (!r.done()) throw FormatError("checkpoint trace: trailing bytes");
    trace.validate();
    return trace;
}

void save_trace(const std::filesystem::path& path, const CheckpointTrace& trace) {
    write_file_bytes(path, serialize_trace(trace));
}

CheckpointTrace load_trace(const std::filesystem::path& path) { return deserialize_trace(read_file_bytes(path)); }

MetricRecord evaluate_split(const Encoder& encoder, std::span<const LabeledInput> data, std::string split,
                            std::size_t round, std::size_t epoch) {
    MetricRecord m{round, epoch, std::move(split), 0.0, 0.0};
    if (data.empty()) return m;
    std::vector<double> losses(data.size());
    std::vector<int> hits(data.size());
    parallel_for(data.size(), [&](std::size_t i) {
        const auto probs = encoder.predict(data[i].input);
        const auto label = static_cast<std::size_t>(data[i].label);
        losses[i] = -std::log(std::max(probs.at(label), ops::kProbabilityFloor));
        hits[i] = argmax(probs) == label ? 1 : 0;
    });
    m.loss = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(data.size());
    m.accuracy = static_cast<double>(std::accumulate(hits.begin(), hits.end(), 0)) / static_cast<double>(data.size());
    return m;
}

RoundResult train_round(std::span<const TrainingExample> pool, Encoder encoder, const TrainConfig& cfg,
                        std::size_t round, std::span<const LabeledInput> validation) {
    cfg.validate();
    if (pool.empty()) throw ConfigError("train_round: training pool is empty");
    const std::size_t classes = encoder.config().num_classes;
    for (const auto& ex : pool) {
        if (ex.target.size() != classes) throw DimensionError("train_round: target width does not match classes");
    }

    RoundResult result;
    result.trace.config = encoder.config();
    AdamWState state;
    const AdamWParams hyper{cfg.lr, cfg.weight_decay};
    const std::size_t n_params = encoder.parameters().element_count();
    std::uint64_t step = 0;

    std::vector<std::size_t> order(pool.size());
    for (std::size_t epoch = 1; epoch <= cfg.epochs_per_round; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng(derive_seed(cfg.seed, {kShuffleStream, round, epoch}));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        std::size_t correct = 0;
        std::size_t scored = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t count = std::min(cfg.batch, order.size() - start);
            std::vector<double> grads(count * n_params);
            std::vector<double> losses(count);
            std::vector<int> hit(count, -1);
            parallel_for(count, [&](std::size_t b) {
                const std::size_t idx = order[start + b];
                const auto& ex = pool[idx];
                Rng rng(derive_seed(cfg.seed, {kDropoutStream, round, epoch, idx}));
                Tape tape;
                const auto params = encoder.bind(tape);
                const auto terms =
                    kl_regularized_loss(tape, encoder, params, ex.input, ex.target, cfg.alpha, rng, cfg.average_passes);
                tape.backward(terms.total);
                flatten_grads(tape, params, std::span<double>(grads).subspan(b * n_params, n_params));
                losses[b] = terms.total.value()[0];
                if (is_one_hot(ex.target)) {
                    hit[b] = argmax(terms.first_probabilities.value().values()) == argmax(ex.target) ? 1 : 0;
                }
            });
            std::vector<double> mean(n_params, 0.0);
            for (std::size_t b = 0; b < count; ++b) {
                const double* g = grads.data() + b * n_params;
                for (std::size_t k = 0; k < n_params; ++k) mean[k] += g[k];
                loss_sum += losses[b];
                if (hit[b] >= 0) {
                    ++scored;
                    correct += static_cast<std::size_t>(hit[b]);
                }
            }
            const double inv = 1.0 / static_cast<double>(count);
            for (double& g : mean) g *= inv;

            auto flat = encoder.parameters().flatten();
            adamw_step(flat, mean, state, hyper);
            encoder.parameters().assign(flat);
            ++step;
        }

        const double train_loss = loss_sum / static_cast<double>(pool.size());
        if (!std::isfinite(train_loss)) {
            throw NumericError("training diverged in round " + std::to_string(round) + " epoch " +
                               std::to_string(epoch));
        }
        result.metrics.push_back({round, epoch, "train", train_loss,
                                  scored == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(scored)});
        if (!validation.empty()) result.metrics.push_back(evaluate_split(encoder, validation, "val", round, epoch));

        if (epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs_per_round) {
            result.trace.entries.push_back({step, encoder.parameters(), cfg.lr});
        }
    }
    result.encoder = std::move(encoder);
    return result;
}

}  // namespace mtca
