#include "mtca/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mtca/binary_io.hpp"

namespace mtca {

namespace {

constexpr std::size_t kParamsPerLayer = 8;
constexpr char kCheckpointMagic[] = "MTCA";

enum LayerParam : std::size_t { kQuery, kKey, kValue, kProj, kProjBias, kConv, kConvBias, kPelu };

std::size_t layer_base(std::size_t layer) { return 2 + layer * kParamsPerLayer; }

Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t(std::move(shape), 0.0);
    for (auto& v : t.values()) v = (2.0 * rng.uniform() - 1.0) * limit;
    return t;
}

}  // namespace

void EncoderConfig::validate() const {
    if (d == 0 || max_sentences == 0 || heads == 0 || num_classes < 2 || stacked_layers == 0) {
        throw ConfigError("encoder sizes must be positive");
    }
    if (d % 2 != 0) throw ConfigError("d must be even for position encodings");
    const std::size_t last_width = d >> (stacked_layers - 1);
    if ((last_width << (stacked_layers - 1)) != d || last_width % heads != 0) {
        throw ConfigError("d must be divisible by heads * 2^(stacked_layers-1)");
    }
    if (last_width % 2 != 0) throw ConfigError("final layer width must be even");
    if (top_queries > max_sentences) throw ConfigError("n_E must not exceed L");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
    if (conv_width % 2 == 0) throw ConfigError("conv width must be odd");
}

std::size_t EncodedTranscript::valid_count() const {
    if (mask.empty()) return rows.rows();
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

std::pair<double, double> position_embedding(std::size_t pos, std::size_t f, std::size_t d) {
    if (d == 0 || d % 2 != 0) throw DimensionError("position embedding needs an even, positive d");
    if (2 * f >= d) throw DimensionError("frequency index " + std::to_string(f) + " out of range for d=" + std::to_string(d));
    const double angle =
        static_cast<double>(pos) / std::pow(10000.0, 2.0 * static_cast<double>(f) / static_cast<double>(d));
    return {std::sin(angle), std::cos(angle)};
}

std::vector<double> position_encoding(std::size_t pos, std::size_t d) {
    std::vector<double> p(d);
    for (std::size_t f = 0; 2 * f < d; ++f) {
        auto [s, c] = position_embedding(pos, f, d);
        p[2 * f] = s;
        p[2 * f + 1] = c;
    }
    return p;
}

EncodedTranscript encode_positions(std::span<const std::vector<double>> sentences, std::size_t d,
                                   std::size_t pad_to) {
    if (sentences.empty()) throw DimensionError("transcript has no sentences");
    const std::size_t rows = std::max(sentences.size(), pad_to);
    EncodedTranscript out{Tensor({rows, d}, 0.0), ops::RowMask(rows, false)};
    for (std::size_t pos = 0; pos < sentences.size(); ++pos) {
        if (sentences[pos].size() != d) {
            throw DimensionError("sentence embedding has width " + std::to_string(sentences[pos].size()) +
                                 ", expected " + std::to_string(d));
        }
        const auto p = position_encoding(pos, d);
        for (std::size_t j = 0; j < d; ++j) out.rows(pos, j) = sentences[pos][j] + p[j];
        out.mask[pos] = true;
    }
    return out;
}

double sparsity_score(std::span<const double> query, const Tensor& keys, double scale,
                      const ops::RowMask& key_valid) {
    if (keys.cols() != query.size()) throw DimensionError("sparsity_score: query and key widths differ");
    double peak = -std::numeric_limits<double>::infinity();
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t y = 0; y < keys.rows(); ++y) {
        if (!key_valid.empty() && !key_valid[y]) continue;
        double dot = 0.0;
        for (std::size_t j = 0; j < query.size(); ++j) dot += query[j] * keys(y, j);
        dot /= scale;
        peak = std::max(peak, dot);
        total += dot;
        ++count;
    }
    if (count == 0) throw DimensionError("sparsity_score: empty key set");
    return peak - total / static_cast<double>(count);
}

std::vector<std::size_t> select_top_queries(const Tensor& queries, const Tensor& keys, double scale,
                                            std::size_t top, const ops::RowMask& mask) {
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t x = 0; x < queries.rows(); ++x) {
        if (!mask.empty() && !mask[x]) continue;
        std::span<const double> q(queries.values().data() + x * queries.cols(), queries.cols());
        scored.emplace_back(sparsity_score(q, keys, scale, mask), x);
    }
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    top = std::min(top, scored.size());
    std::vector<std::size_t> picked;
    for (std::size_t i = 0; i < top; ++i) picked.push_back(scored[i].second);
    std::sort(picked.begin(), picked.end());
    return picked;
}

Var probsparse_attention(Var queries, Var keys, Var values, std::size_t top, const ops::RowMask& mask) {
    const std::size_t n = queries.value().rows();
    if (!mask.empty() && std::none_of(mask.begin(), mask.end(), [](bool b) { return b; })) {
        throw DimensionError("attention: all positions are masked");
    }
    const double scale = std::sqrt(static_cast<double>(queries.value().cols()));
    std::vector<bool> selected(n, false);
    for (auto x : select_top_queries(queries.value(), keys.value(), scale, top, mask)) selected[x] = true;
    Var scores = ops::scale(ops::matmul_nt(queries, keys), 1.0 / scale);
    Var weights = ops::attention_weights(scores, mask, mask, selected);
    return ops::matmul(weights, values);
}

std::vector<double> predict_distribution(std::span<const double> representation, const Tensor& head_weight,
                                         std::span<const double> head_bias) {
    if (head_weight.cols() != representation.size() || head_weight.rows() != head_bias.size()) {
        throw DimensionError("predict: head dimensions do not match representation");
    }
    std::vector<double> logits(head_bias.begin(), head_bias.end());
    for (std::size_t c = 0; c < logits.size(); ++c)
        for (std::size_t j = 0; j < representation.size(); ++j) logits[c] += head_weight(c, j) * representation[j];
    const double peak = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (auto& v : logits) {
        v = std::exp(v - peak);
        z += v;
    }
    for (auto& v : logits) v /= z;
    return logits;
}

Encoder::Encoder(EncoderConfig config, ParameterSet params) : config_(config), params_(std::move(params)) {
    config_.validate();
    if (!params_.same_layout(parameter_layout(config_))) {
        throw DimensionError("encoder parameters do not match the configured layout");
    }
}

ParameterSet Encoder::parameter_layout(const EncoderConfig& cfg) {
    cfg.validate();
    ParameterSet p;
    p.add("input.weight", Tensor({cfg.d, cfg.d}));
    p.add("input.bias", Tensor({1, cfg.d}));
    for (std::size_t k = 0; k < cfg.stacked_layers; ++k) {
        const std::size_t w = cfg.layer_width(k), half = w / 2;
        const std::string prefix = "sp" + std::to_string(k + 1) + ".";
        p.add(prefix + "query", Tensor({w, w}));
        p.add(prefix + "key", Tensor({w, w}));
        p.add(prefix + "value", Tensor({w, w}));
        p.add(prefix + "proj", Tensor({w, half}));
        p.add(prefix + "proj_bias", Tensor({1, half}));
        p.add(prefix + "conv", Tensor({cfg.conv_width, half, half}));
        p.add(prefix + "conv_bias", Tensor({1, half}));
        p.add(prefix + "pelu", Tensor({1, 1}));
    }
    p.add("head.weight", Tensor({cfg.num_classes, cfg.output_width()}));
    p.add("head.bias", Tensor({1, cfg.num_classes}));
    return p;
}

Encoder Encoder::initialize(const EncoderConfig& cfg, std::uint64_t seed) {
    ParameterSet p = parameter_layout(cfg);
    Rng rng(seed);
    for (std::size_t i = 0; i < p.size(); ++i) {
        const auto& name = p.name(i);
        const Shape shape = p[i].shape();
        if (name.ends_with("bias")) continue;
        if (name.ends_with("pelu")) {
            p[i] = Tensor(shape, 0.25);
        } else if (shape.size() == 3) {
            p[i] = glorot(shape, shape[0] * shape[1], shape[0] * shape[2], rng);
        } else if (name == "head.weight") {
            p[i] = glorot(shape, shape[1], shape[0], rng);
        } else {
            p[i] = glorot(shape, shape[0], shape[1], rng);
        }
    }
    return Encoder(cfg, std::move(p));
}

std::vector<Var> Encoder::bind(Tape& tape, const ForwardOptions& options) const {
    if (!options.trainable.empty() && options.trainable.size() != params_.size()) {
        throw DimensionError("trainable flags do not match parameter count");
    }
    std::vector<Var> vars;
    vars.reserve(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const bool grad = options.track_gradients && (options.trainable.empty() || options.trainable[i]);
        vars.push_back(tape.leaf(params_[i], grad));
    }
    return vars;
}

Var Encoder::sp_layer(Var x, std::size_t layer, std::span<const Var> params) const {
    if (layer >= config_.stacked_layers) throw DimensionError("SP layer index out of range");
    const std::size_t w = config_.layer_width(layer);
    if (x.value().cols() != w) throw DimensionError("SP layer input width mismatch");
    const std::size_t head_dim = w / config_.heads;
    const std::size_t base = layer_base(layer);
    const std::size_t n = x.value().rows();
    const std::size_t top = std::min(config_.top_queries, n);

    Var q = ops::matmul(x, params[base + kQuery]);
    Var k = ops::matmul(x, params[base + kKey]);
    Var v = ops::matmul(x, params[base + kValue]);
    std::vector<Var> heads;
    heads.reserve(config_.heads);
    for (std::size_t h = 0; h < config_.heads; ++h) {
        const std::size_t start = h * head_dim;
        heads.push_back(probsparse_attention(ops::slice_cols(q, start, head_dim), ops::slice_cols(k, start, head_dim),
                                             ops::slice_cols(v, start, head_dim), top));
    }
    Var merged = heads.size() == 1 ? heads.front() : ops::concat_cols(heads);
    Var projected = ops::add_row(ops::matmul(merged, params[base + kProj]), params[base + kProjBias]);
    Var conv = ops::add_row(ops::conv1d(projected, params[base + kConv], (config_.conv_width - 1) / 2),
                            params[base + kConvBias]);
    Var activated = ops::pelu(conv, params[base + kPelu]);
    return ops::maxpool1d(activated).out;
}

ForwardResult Encoder::forward(Tape& tape, const EncodedTranscript& input, const ForwardOptions& options) const {
    const auto params = bind(tape, options);
    return forward(tape, input, params, options);
}

ForwardResult Encoder::forward(Tape& tape, const EncodedTranscript& input, std::span<const Var> params,
                               const ForwardOptions& options) const {
    if (params.size() != params_.size()) throw DimensionError("bound parameter count mismatch");
    const std::size_t d = config_.d;
    if (input.rows.cols() != d) throw DimensionError("transcript width does not match encoder d");
    if (!input.mask.empty() && input.mask.size() != input.rows.rows()) {
        throw DimensionError("transcript mask length mismatch");
    }
    const std::size_t valid = input.valid_count();
    if (valid == 0) throw DimensionError("transcript has no sentences");
    if (valid > config_.max_sentences) throw DimensionError("transcript exceeds max sentence count L");
    const bool use_dropout = options.training && config_.dropout > 0.0;
    if (use_dropout && options.rng == nullptr) throw ConfigError("training forward needs an rng for dropout");

    // Padding rows take no part in any computation, so only valid rows are
    // carried forward.
    Tensor compact({valid, d}, 0.0);
    for (std::size_t r = 0, out = 0; r < input.rows.rows(); ++r) {
        if (!input.mask.empty() && !input.mask[r]) continue;
        std::copy_n(input.rows.values().begin() + static_cast<std::ptrdiff_t>(r * d), d,
                    compact.values().begin() + static_cast<std::ptrdiff_t>(out * d));
        ++out;
    }

    ForwardResult result;
    result.parameters.assign(params.begin(), params.end());
    const auto& p = result.parameters;
    Var x = ops::add_row(ops::matmul(tape.constant(std::move(compact)), p[0]), p[1]);
    if (use_dropout) x = ops::dropout(x, config_.dropout, *options.rng, true);
    for (std::size_t layer = 0; layer < config_.stacked_layers; ++layer) x = sp_layer(x, layer, p);
    result.representation = ops::mean_rows(x);
    Var pooled = result.representation;
    if (use_dropout) pooled = ops::dropout(pooled, config_.dropout, *options.rng, true);
    const std::size_t head = p.size() - 2;
    result.logits = ops::add_row(ops::matmul_nt(pooled, p[head]), p[head + 1]);
    result.probabilities = ops::softmax(result.logits);
    return result;
}

std::vector<double> Encoder::predict(const EncodedTranscript& input) const {
    Tape tape;
    ForwardOptions options;
    options.track_gradients = false;
    auto out = forward(tape, input, options);
    return out.probabilities.value().data();
}

std::vector<double> Encoder::representation(const EncodedTranscript& input) const {
    Tape tape;
    ForwardOptions options;
    options.track_gradients = false;
    auto out = forward(tape, input, options);
    return out.representation.value().data();
}

std::vector<bool> Encoder::tracked_subset() const {
    std::vector<bool> flags(params_.size(), false);
    const std::string last = "sp" + std::to_string(config_.stacked_layers) + ".";
    for (const auto& name : {std::string("head.weight"), std::string("head.bias"), last + "proj", last + "proj_bias"}) {
        flags[params_.index_of(name)] = true;
    }
    return flags;
}

std::vector<std::uint8_t> serialize_checkpoint(const Encoder& encoder) {
    const auto& cfg = encoder.config();
    ByteWriter w;
    w.raw(std::string_view(kCheckpointMagic, 4));
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(cfg.d));
    w.u32(static_cast<std::uint32_t>(cfg.max_sentences));
    w.u32(static_cast<std::uint32_t>(cfg.heads));
    w.u32(static_cast<std::uint32_t>(cfg.top_queries));
    w.u32(static_cast<std::uint32_t>(cfg.num_classes));
    w.u32(static_cast<std::uint32_t>(cfg.stacked_layers));
    w.u32(static_cast<std::uint32_t>(cfg.conv_width));
    w.f64(cfg.dropout);
    const auto& params = encoder.parameters();
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        w.str(params.name(i));
        const auto& shape = params[i].shape();
        w.u32(static_cast<std::uint32_t>(shape.size()));
        for (auto dim : shape) w.u64(dim);
        for (double v : params[i].values()) w.f64(v);
    }
    return w.take();
}

Encoder deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "checkpoint");
    if (r.raw(4) != std::string_view(kCheckpointMagic, 4)) throw FormatError("checkpoint: bad magic");
    const auto version = r.u32();
    if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    EncoderConfig cfg;
    cfg.d = r.u32();
    cfg.max_sentences = r.u32();
    cfg.heads = r.u32();
    cfg.top_queries = r.u32();
    cfg.num_classes = r.u32();
    cfg.stacked_layers = r.u32();
    cfg.conv_width = r.u32();
    cfg.dropout = r.f64();
    ParameterSet layout = Encoder::parameter_layout(cfg);
    const auto count = r.u32();
    if (count != layout.size()) throw FormatError("checkpoint: parameter count mismatch");
    ParameterSet params;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.str();
        if (name != layout.name(i)) throw FormatError("checkpoint: unexpected parameter " + name);
        Shape shape(r.u32());
        for (auto& dim : shape) dim = r.u64();
        if (shape != layout[i].shape()) throw FormatError("checkpoint: shape mismatch for " + name);
        Tensor t(shape, 0.0);
        for (auto& v : t.values()) v = r.f64();
        params.add(std::move(name), std::move(t));
    }
    if (!r.done()) throw FormatError("checkpoint: trailing bytes");
    return Encoder(cfg, std::move(params));
}

void save_checkpoint(const std::filesystem::path& path, const Encoder& encoder) {
    write_file_bytes(path, serialize_checkpoint(encoder));
}

Encoder load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file_bytes(path)); }

std::size_t argmax(std::span<const double> values) {
    if (values.empty()) throw DimensionError("argmax of empty vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best]) best = i;
    return best;
}

}  // namespace mtca
