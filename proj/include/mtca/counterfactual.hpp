#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mtca/data.hpp"
#include "mtca/encoder.hpp"
#include "mtca/train.hpp"

namespace mtca {

// Argmax of a distribution, or nothing when the top two entries tie.
std::optional<std::size_t> decision_label(std::span<const double> probabilities);

// Transcript rows with position encodings; sentence i is looked up as
// sentence_id(record.id, i).
EncodedTranscript encode_record(const TranscriptRecord& record, const EmbeddingTable& embeddings);
// Copy of `base` with row `index` replaced by `vector` plus its position
// encoding.
EncodedTranscript replace_sentence(const EncodedTranscript& base, std::size_t index, std::span<const double> vector);

// L(E′;θ) − L(E;θ), both cross-entropies at `label`.
double pc(const Encoder& model, const EncodedTranscript& original, const EncodedTranscript& perturbed,
          std::size_t label);
// Same, at the model's predicted label for `original` (lowest index on ties).
double pc(const Encoder& model, const EncodedTranscript& original, const EncodedTranscript& perturbed);

enum class GradientSubset { Tracked, All };
std::string_view subset_name(GradientSubset s);
GradientSubset parse_subset(std::string_view text);

// ∇θ CE(input, label) restricted to the flagged parameters, concatenated in
// canonical order. Dropout is off.
std::vector<double> label_loss_gradient(const Encoder& model, const EncodedTranscript& input, std::size_t label,
                                        const std::vector<bool>& flags);

struct CheckpointGradients {
    std::vector<double> original;   // ∇L(E;θ_i)
    std::vector<double> perturbed;  // ∇L(E′;θ_i)
};

// ∇L(E′)·∇L(E) − ‖∇L(E′)‖² for one checkpoint.
double tracin_plus_term(std::span<const double> original, std::span<const double> perturbed);
// Sum of the per-checkpoint terms, in checkpoint order.
double tracin_plus(std::span<const CheckpointGradients> checkpoints);

// Scores with the loss label at each checkpoint being that checkpoint's
// prediction for the original.
double tracin_plus(const EncodedTranscript& original, const EncodedTranscript& perturbed, const CheckpointTrace& trace,
                   GradientSubset subset = GradientSubset::Tracked);
// Scores of several perturbations of one original; the original's gradient
// is computed once per checkpoint.
std::vector<double> score_candidates(const EncodedTranscript& original, std::span<const EncodedTranscript> candidates,
                                     const CheckpointTrace& trace, GradientSubset subset = GradientSubset::Tracked);

using GradientFn = std::function<std::vector<double>(std::span<const double> theta)>;

// Symmetrized central-difference Jacobian of `gradient` at θ, row-major.
std::vector<double> finite_difference_hessian(std::span<const double> theta, const GradientFn& gradient,
                                              double step = 1e-5);

inline constexpr std::size_t kExactInfluenceMaxParameters = 2000;

// (H + λI)⁻¹ (∇L(E) − ∇L(E′)) with H the Hessian of `training_gradient` (the
// mean training-loss gradient) at θ.
std::vector<double> exact_influence(std::span<const double> grad_original, std::span<const double> grad_perturbed,
                                    std::span<const double> theta, const GradientFn& training_gradient,
                                    double damping = 1e-3);
// Solves (H + λI) x = rhs by Cholesky; NumericError when not positive
// definite or when the residual exceeds 1e-8.
std::vector<double> solve_damped(std::span<const double> hessian, std::span<const double> rhs, double damping);

// Encoder form over all parameters, with labels and training losses in eval
// mode. The label is the model's prediction for `original`.
std::vector<double> exact_influence(const Encoder& model, const EncodedTranscript& original,
                                    const EncodedTranscript& perturbed, std::span<const TrainingExample> training,
                                    double damping = 1e-3);

// Cross-domain sentence with its topic label.
struct PoolSentence {
    std::string id;
    std::size_t topic = 0;
    std::optional<Session> session;
};

// Replacement pools keyed by topic. A sentence without a session serves
// both sessions.
class TopicPool {
public:
    TopicPool() = default;
    explicit TopicPool(std::vector<PoolSentence> sentences);

    std::vector<PoolSentence> compatible(std::size_t topic, Session session) const;
    std::size_t size() const noexcept { return sentences_.size(); }

private:
    std::vector<PoolSentence> sentences_;
};

bool session_compatible(const std::optional<Session>& candidate, Session session);

struct PerturbationCandidate {
    std::size_t id = 0;  // position in the candidate list
    std::size_t sentence_index = 0;
    std::string replacement_id;
    std::size_t topic = 0;
};

// min(n_c, pool size) replacements for one sentence, sampled without
// replacement. Every pool entry must carry `topic` and a compatible session;
// an empty pool yields no candidates and a warning.
std::vector<PerturbationCandidate> generate_perturbations(const TranscriptRecord& transcript,
                                                          std::size_t sentence_index, std::size_t topic,
                                                          std::span<const PoolSentence> pool, std::size_t n_c,
                                                          Rng& rng);

struct ScoredCandidate {
    std::size_t id = 0;
    double score = 0.0;
};

struct Selection {
    std::vector<std::size_t> positive;
    std::vector<std::size_t> negative;
};

// Ranks by score descending, ties by ascending id. The first k_p are
// positive, the last k_n negative; the two never overlap.
Selection select_augmentations(std::span<const ScoredCandidate> scored, std::size_t k_p = 1, std::size_t k_n = 1);

enum class Polarity { Positive, Negative };
std::string_view polarity_name(Polarity p);

struct PerturbationRecord {
    std::string transcript_id;
    std::size_t sentence_index = 0;
    std::string replacement_id;
    std::size_t topic = 0;
    double score = 0.0;
    Polarity polarity = Polarity::Positive;
    std::vector<double> target;

    friend bool operator==(const PerturbationRecord&, const PerturbationRecord&) = default;
};

// One JSON object per line; scores are written with 6 decimals.
std::string format_record(const PerturbationRecord& r);
std::string format_records(std::span<const PerturbationRecord> records);
std::vector<PerturbationRecord> parse_records_text(std::string_view text);

enum class AugmentScope { Sentence, Transcript };
std::string_view scope_name(AugmentScope s);
AugmentScope parse_scope(std::string_view text);

struct AugmentConfig {
    std::size_t candidates = 10000;  // N_c
    std::size_t k_pos = 1;
    std::size_t k_neg = 1;
    // Sentence: N_c candidates and k_p/k_n picks per topical sentence.
    // Transcript: N_c candidates drawn across all topical sentences and one
    // selection per transcript.
    AugmentScope scope = AugmentScope::Sentence;
    GradientSubset subset = GradientSubset::Tracked;

    void validate() const;
    friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

struct AugmentContext {
    const EmbeddingTable* embeddings = nullptr;
    const TopicPool* pool = nullptr;
    // Topic of every transcript sentence, keyed by sentence id.
    const std::unordered_map<std::string, std::size_t>* sentence_topics = nullptr;
    std::size_t no_topic = 0;
};

// Scores and selects perturbations of every topical sentence of
// `transcript`. Positive targets are one-hot at `model`'s prediction for the
// perturbed transcript; negative targets are uniform.
std::vector<PerturbationRecord> augment_transcript(const TranscriptRecord& transcript, const Encoder& model,
                                                   const CheckpointTrace& trace, const AugmentContext& context,
                                                   const AugmentConfig& cfg, std::uint64_t seed);

// The augmented transcript a record describes.
EncodedTranscript perturbed_input(const TranscriptRecord& transcript, const PerturbationRecord& record,
                                  const EmbeddingTable& embeddings);

struct ExplanationEntry {
    std::size_t sentence_index = 0;
    std::string original_sentence;
    std::string replacement_id;
    std::string replacement_sentence;
    std::size_t topic = 0;
    double score = 0.0;
    std::size_t original_label = 0;
    std::size_t perturbed_label = 0;
    double closeness = 0.0;  // token Jaccard similarity

    friend bool operator==(const ExplanationEntry&, const ExplanationEntry&) = default;
};

struct ExplanationReport {
    std::string transcript_id;
    std::vector<ExplanationEntry> entries;

    friend bool operator==(const ExplanationReport&, const ExplanationReport&) = default;
};

// Negative records of `transcript` whose replacement moves the prediction
// away from a correct one, most damaging (lowest score) first. Empty when the
// model's decision is tied or disagrees with the transcript label.
ExplanationReport explain(const TranscriptRecord& transcript, const Encoder& model,
                          std::span<const PerturbationRecord> records, const EmbeddingTable& embeddings,
                          const std::unordered_map<std::string, std::string>& replacement_texts);

std::string format_report(const ExplanationReport& r);
std::string format_reports(std::span<const ExplanationReport> reports);
std::vector<ExplanationReport> parse_reports_text(std::string_view text);

}  // namespace mtca
