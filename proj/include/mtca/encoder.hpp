#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mtca/ops.hpp"
#include "mtca/parameters.hpp"
#include "mtca/rng.hpp"

namespace mtca {

struct EncoderConfig {
    std::size_t d = 512;
    std::size_t max_sentences = 500;  // L
    std::size_t heads = 8;            // H
    std::size_t top_queries = 10;     // n_E
    std::size_t num_classes = 3;
    double dropout = 0.2;
    std::size_t stacked_layers = 2;
    std::size_t conv_width = 3;

    void validate() const;
    // Feature width entering SP layer `layer` (0-based).
    std::size_t layer_width(std::size_t layer) const { return d >> layer; }
    std::size_t output_width() const { return d >> stacked_layers; }

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Sentence embeddings plus position encodings, one row per position. Rows
// flagged invalid in `mask` are padding.
struct EncodedTranscript {
    Tensor rows;
    ops::RowMask mask;

    std::size_t valid_count() const;
};

// (sin, cos) pair for frequency index `f` at position `pos`.
std::pair<double, double> position_embedding(std::size_t pos, std::size_t f, std::size_t d);
std::vector<double> position_encoding(std::size_t pos, std::size_t d);

// Adds position encodings to raw sentence vectors; pads with zero rows up to
// `pad_to` when it exceeds the sentence count.
EncodedTranscript encode_positions(std::span<const std::vector<double>> sentences, std::size_t d,
                                   std::size_t pad_to = 0);

// max_y(q·k_y / scale) - mean_y(q·k_y / scale) over valid keys.
double sparsity_score(std::span<const double> query, const Tensor& keys, double scale,
                      const ops::RowMask& key_valid = {});

// Indices of the `top` valid query rows with the highest sparsity score,
// ties broken by lower index. `top` is clamped to the valid row count.
std::vector<std::size_t> select_top_queries(const Tensor& queries, const Tensor& keys, double scale,
                                            std::size_t top, const ops::RowMask& mask = {});

// Self-attention where only the top-n_E queries get a full softmax row and
// the remaining valid queries output the mean of valid values. `mask` applies
// to both queries and keys.
Var probsparse_attention(Var queries, Var keys, Var values, std::size_t top, const ops::RowMask& mask = {});

std::vector<double> predict_distribution(std::span<const double> representation, const Tensor& head_weight,
                                         std::span<const double> head_bias);

struct ForwardOptions {
    bool training = false;
    Rng* rng = nullptr;  // required when training with dropout > 0
    // Per-parameter gradient flags (canonical order); empty means all.
    std::vector<bool> trainable;
    bool track_gradients = true;
};

struct ForwardResult {
    Var representation;  // Ẽ pooled to [1, width]
    Var logits;
    Var probabilities;
    std::vector<Var> parameters;  // leaf handles in canonical order
};

class Encoder {
public:
    Encoder() = default;
    Encoder(EncoderConfig config, ParameterSet params);

    static Encoder initialize(const EncoderConfig& config, std::uint64_t seed);
    static ParameterSet parameter_layout(const EncoderConfig& config);

    const EncoderConfig& config() const noexcept { return config_; }
    const ParameterSet& parameters() const noexcept { return params_; }
    ParameterSet& parameters() noexcept { return params_; }

    ForwardResult forward(Tape& tape, const EncodedTranscript& input, const ForwardOptions& options = {}) const;
    // Forward pass over already bound parameter leaves, so several passes can
    // share one set of gradients.
    ForwardResult forward(Tape& tape, const EncodedTranscript& input, std::span<const Var> params,
                          const ForwardOptions& options = {}) const;
    // Parameter leaves on `tape` in canonical order, honouring the gradient
    // flags in `options`.
    std::vector<Var> bind(Tape& tape, const ForwardOptions& options = {}) const;
    // One SP layer applied to `x` (valid rows only).
    Var sp_layer(Var x, std::size_t layer, std::span<const Var> params) const;

    std::vector<double> predict(const EncodedTranscript& input) const;
    std::vector<double> representation(const EncodedTranscript& input) const;

    // Parameter flags for the TracIn+ subset: prediction head plus the final
    // SP layer output projection.
    std::vector<bool> tracked_subset() const;

private:
    EncoderConfig config_;
    ParameterSet params_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Encoder& encoder);
Encoder load_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_checkpoint(const Encoder& encoder);
Encoder deserialize_checkpoint(std::span<const std::uint8_t> bytes);

std::size_t argmax(std::span<const double> values);

}  // namespace mtca
