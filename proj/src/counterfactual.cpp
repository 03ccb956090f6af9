#include "mtca/counterfactual.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mtca/error.hpp"
#include "mtca/log.hpp"
#include "mtca/parallel.hpp"
#include "mtca/text.hpp"

namespace mtca {

namespace {

using Json = nlohmann::ordered_json;

std::vector<double> loss_gradient(const Encoder& model, const EncodedTranscript& input, std::span<const double> target,
                                  const std::vector<bool>& flags) {
    Tape tape;
    ForwardOptions opts;
    opts.trainable = flags;
    auto out = model.forward(tape, input, opts);
    tape.backward(ops::cross_entropy(out.probabilities, target));
    std::vector<double> g;
    for (std::size_t i = 0; i < out.parameters.size(); ++i) {
        if (!flags[i]) continue;
        const auto& grad = tape.grad_at(out.parameters[i].id());
        if (grad.size() == out.parameters[i].value().size()) {
            g.insert(g.end(), grad.values().begin(), grad.values().end());
        } else {
            g.insert(g.end(), out.parameters[i].value().size(), 0.0);
        }
    }
    return g;
}

std::vector<bool> subset_flags(const Encoder& model, GradientSubset subset) {
    if (subset == GradientSubset::All) return std::vector<bool>(model.parameters().size(), true);
    return model.tracked_subset();
}

double ce_at(const Encoder& model, const EncodedTranscript& input, std::size_t label) {
    const auto p = model.predict(input);
    const double loss = -std::log(std::max(p.at(label), ops::kProbabilityFloor));
    if (std::isnan(loss)) throw NumericError("pc: loss is NaN");
    return loss;
}

std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string quoted(const std::string& s) { return nlohmann::json(s).dump(); }

template <typename F>
auto with_line_context(std::size_t line_no, std::string_view what, F&& fn) {
    try {
        return fn();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string(what) + " line " + std::to_string(line_no) + ": " + e.what());
    }
}

template <typename F>
void for_each_line(std::string_view text, F&& fn) {
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        fn(line_no, line);
    }
}

}  // namespace

std::optional<std::size_t> decision_label(std::span<const double> probabilities) {
    const std::size_t best = argmax(probabilities);
    for (std::size_t c = 0; c < probabilities.size(); ++c) {
        if (c != best && probabilities[c] == probabilities[best]) return std::nullopt;
    }
    return best;
}

EncodedTranscript encode_record(const TranscriptRecord& record, const EmbeddingTable& embeddings) {
    std::vector<std::vector<double>> rows;
    rows.reserve(record.sentences.size());
    for (std::size_t i = 0; i < record.sentences.size(); ++i) {
        rows.push_back(embeddings.vector(sentence_id(record.id, i)));
    }
    return encode_positions(rows, embeddings.dim());
}

EncodedTranscript replace_sentence(const EncodedTranscript& base, std::size_t index, std::span<const double> vector) {
    const std::size_t d = base.rows.cols();
    if (index >= base.rows.rows()) throw DimensionError("replace_sentence: index out of range");
    if (vector.size() != d) throw DimensionError("replace_sentence: embedding width mismatch");
    EncodedTranscript out = base;
    const auto pos = position_encoding(index, d);
    for (std::size_t c = 0; c < d; ++c) out.rows(index, c) = vector[c] + pos[c];
    return out;
}

double pc(const Encoder& model, const EncodedTranscript& original, const EncodedTranscript& perturbed,
          std::size_t label) {
    if (original.rows.shape() != perturbed.rows.shape()) throw DimensionError("pc: transcripts differ in shape");
    return ce_at(model, perturbed, label) - ce_at(model, original, label);
}

double pc(const Encoder& model, const EncodedTranscript& original, const EncodedTranscript& perturbed) {
    return pc(model, original, perturbed, argmax(model.predict(original)));
}

std::string_view subset_name(GradientSubset s) { return s == GradientSubset::All ? "all" : "tracked"; }

GradientSubset parse_subset(std::string_view text) {
    if (text == "tracked") return GradientSubset::Tracked;
    if (text == "all") return GradientSubset::All;
    throw ConfigError("unknown gradient subset '" + std::string(text) + "' (expected tracked or all)");
}

std::vector<double> label_loss_gradient(const Encoder& model, const EncodedTranscript& input, std::size_t label,
                                        const std::vector<bool>& flags) {
    if (flags.size() != model.parameters().size()) throw DimensionError("gradient flags do not match parameters");
    return loss_gradient(model, input, one_hot(label, model.config().num_classes), flags);
}

double tracin_plus_term(std::span<const double> original, std::span<const double> perturbed) {
    if (original.size() != perturbed.size()) throw DimensionError("tracin_plus: gradient sizes differ");
    double cross = 0.0;
    double self = 0.0;
    for (std::size_t k = 0; k < original.size(); ++k) {
        cross += perturbed[k] * original[k];
        self += perturbed[k] * perturbed[k];
    }
    return cross - self;
}

double tracin_plus(std::span<const CheckpointGradients> checkpoints) {
    if (checkpoints.empty()) throw ConfigError("tracin_plus: checkpoint trace is empty");
    double score = 0.0;
    for (const auto& c : checkpoints) score += tracin_plus_term(c.original, c.perturbed);
    return score;
}

double tracin_plus(const EncodedTranscript& original, const EncodedTranscript& perturbed, const CheckpointTrace& trace,
                   GradientSubset subset) {
    const EncodedTranscript one[] = {perturbed};
    return score_candidates(original, one, trace, subset).front();
}

std::vector<double> score_candidates(const EncodedTranscript& original, std::span<const EncodedTranscript> candidates,
                                     const CheckpointTrace& trace, GradientSubset subset) {
    if (trace.entries.empty()) throw ConfigError("tracin_plus: checkpoint trace is empty");
    trace.validate();
    for (const auto& c : candidates) {
        if (c.rows.shape() != original.rows.shape()) throw DimensionError("tracin_plus: transcripts differ in shape");
    }

    struct Checkpoint {
        Encoder model;
        std::vector<bool> flags;
        std::size_t label;
        std::vector<double> grad;
    };
    std::vector<Checkpoint> checkpoints;
    checkpoints.reserve(trace.entries.size());
    for (std::size_t i = 0; i < trace.entries.size(); ++i) {
        Checkpoint c{trace.model(i), {}, 0, {}};
        c.flags = subset_flags(c.model, subset);
        c.label = argmax(c.model.predict(original));
        c.grad = label_loss_gradient(c.model, original, c.label, c.flags);
        checkpoints.push_back(std::move(c));
    }

    std::vector<double> scores(candidates.size(), 0.0);
    parallel_for(candidates.size(), [&](std::size_t k) {
        double s = 0.0;
        for (const auto& c : checkpoints) {
            s += tracin_plus_term(c.grad, label_loss_gradient(c.model, candidates[k], c.label, c.flags));
        }
        scores[k] = s;
    });
    return scores;
}

std::vector<double> finite_difference_hessian(std::span<const double> theta, const GradientFn& gradient, double step) {
    const std::size_t n = theta.size();
    std::vector<double> h(n * n, 0.0);
    std::vector<double> point(theta.begin(), theta.end());
    for (std::size_t j = 0; j < n; ++j) {
        point[j] = theta[j] + step;
        const auto up = gradient(point);
        point[j] = theta[j] - step;
        const auto down = gradient(point);
        point[j] = theta[j];
        if (up.size() != n || down.size() != n) throw DimensionError("hessian: gradient size mismatch");
        for (std::size_t i = 0; i < n; ++i) h[i * n + j] = (up[i] - down[i]) / (2.0 * step);
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double s = 0.5 * (h[i * n + j] + h[j * n + i]);
            h[i * n + j] = h[j * n + i] = s;
        }
    }
    return h;
}

std::vector<double> solve_damped(std::span<const double> hessian, std::span<const double> rhs, double damping) {
    const std::size_t n = rhs.size();
    if (hessian.size() != n * n) throw DimensionError("solve_damped: matrix size mismatch");
    Eigen::MatrixXd a(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) a(i, j) = hessian[i * n + j];
    a.diagonal().array() += damping;
    const Eigen::Map<const Eigen::VectorXd> b(rhs.data(), static_cast<Eigen::Index>(n));
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success) throw NumericError("exact_influence: damped Hessian is not positive definite");
    const Eigen::VectorXd x = llt.solve(b);
    const double residual = (a * x - b).norm();
    if (!std::isfinite(residual) || residual > 1e-8 * std::max(1.0, b.norm())) {
        throw NumericError("exact_influence: damped system is singular (residual " + std::to_string(residual) + ")");
    }
    return {x.data(), x.data() + n};
}

std::vector<double> exact_influence(std::span<const double> grad_original, std::span<const double> grad_perturbed,
                                    std::span<const double> theta, const GradientFn& training_gradient,
                                    double damping) {
    const std::size_t n = theta.size();
    if (n > kExactInfluenceMaxParameters) throw ConfigError("exact_influence: model too large for an explicit Hessian");
    if (grad_original.size() != n || grad_perturbed.size() != n) {
        throw DimensionError("exact_influence: gradient sizes do not match the parameter count");
    }
    std::vector<double> rhs(n);
    for (std::size_t k = 0; k < n; ++k) rhs[k] = grad_original[k] - grad_perturbed[k];
    if (std::all_of(rhs.begin(), rhs.end(), [](double v) { return v == 0.0; })) return rhs;
    return solve_damped(finite_difference_hessian(theta, training_gradient), rhs, damping);
}

std::vector<double> exact_influence(const Encoder& model, const EncodedTranscript& original,
                                    const EncodedTranscript& perturbed, std::span<const TrainingExample> training,
                                    double damping) {
    if (training.empty()) throw ConfigError("exact_influence: training set is empty");
    const std::vector<bool> all(model.parameters().size(), true);
    const std::size_t label = argmax(model.predict(original));
    const auto theta = model.parameters().flatten();
    GradientFn mean_gradient = [&](std::span<const double> point) {
        Encoder m = model;
        m.parameters().assign(point);
        std::vector<double> total(point.size(), 0.0);
        for (const auto& ex : training) {
            const auto g = loss_gradient(m, ex.input, ex.target, all);
            for (std::size_t k = 0; k < g.size(); ++k) total[k] += g[k];
        }
        for (double& v : total) v /= static_cast<double>(training.size());
        return total;
    };
    return exact_influence(label_loss_gradient(model, original, label, all),
                           label_loss_gradient(model, perturbed, label, all), theta, mean_gradient, damping);
}

bool session_compatible(const std::optional<Session>& candidate, Session session) {
    return !candidate || *candidate == session;
}

TopicPool::TopicPool(std::vector<PoolSentence> sentences) : sentences_(std::move(sentences)) {}

std::vector<PoolSentence> TopicPool::compatible(std::size_t topic, Session session) const {
    std::vector<PoolSentence> out;
    for (const auto& s : sentences_) {
        if (s.topic == topic && session_compatible(s.session, session)) out.push_back(s);
    }
    return out;
}

std::vector<PerturbationCandidate> generate_perturbations(const TranscriptRecord& transcript,
                                                          std::size_t sentence_index, std::size_t topic,
                                                          std::span<const PoolSentence> pool, std::size_t n_c,
                                                          Rng& rng) {
    if (sentence_index >= transcript.sentences.size()) {
        throw DimensionError("generate_perturbations: sentence index out of range");
    }
    for (const auto& s : pool) {
        if (s.topic != topic) {
            throw ConfigError("generate_perturbations: pool sentence " + s.id + " has topic " + std::to_string(s.topic) +
                              ", expected " + std::to_string(topic));
        }
        if (!session_compatible(s.session, transcript.session)) {
            throw ConfigError("generate_perturbations: pool sentence " + s.id + " belongs to the other session");
        }
    }
    if (pool.empty()) {
        warn("no replacement sentences for topic " + std::to_string(topic) + "; skipping " +
             sentence_id(transcript.id, sentence_index));
        return {};
    }
    const auto picks = rng.sample_without_replacement(pool.size(), std::min(n_c, pool.size()));
    std::vector<PerturbationCandidate> out;
    out.reserve(picks.size());
    for (std::size_t k = 0; k < picks.size(); ++k) out.push_back({k, sentence_index, pool[picks[k]].id, topic});
    return out;
}

Selection select_augmentations(std::span<const ScoredCandidate> scored, std::size_t k_p, std::size_t k_n) {
    std::vector<ScoredCandidate> ranked(scored.begin(), scored.end());
    std::sort(ranked.begin(), ranked.end(), [](const ScoredCandidate& a, const ScoredCandidate& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.id < b.id;
    });
    Selection out;
    const std::size_t positives = std::min(k_p, ranked.size());
    const std::size_t negatives = std::min(k_n, ranked.size() - positives);
    for (std::size_t i = 0; i < positives; ++i) out.positive.push_back(ranked[i].id);
    for (std::size_t i = 0; i < negatives; ++i) out.negative.push_back(ranked[ranked.size() - 1 - i].id);
    return out;
}

std::string_view polarity_name(Polarity p) { return p == Polarity::Positive ? "positive" : "negative"; }

std::string format_record(const PerturbationRecord& r) {
    std::string s = "{\"transcript_id\":" + quoted(r.transcript_id);
    s += ",\"sentence_index\":" + std::to_string(r.sentence_index);
    s += ",\"replacement_id\":" + quoted(r.replacement_id);
    s += ",\"topic\":" + std::to_string(r.topic);
    s += ",\"score\":" + fixed6(r.score);
    s += ",\"polarity\":" + quoted(std::string(polarity_name(r.polarity)));
    s += ",\"target\":" + nlohmann::json(r.target).dump() + "}";
    return s;
}

std::string format_records(std::span<const PerturbationRecord> records) {
    std::string out;
    for (const auto& r : records) out += format_record(r) + '\n';
    return out;
}

std::vector<PerturbationRecord> parse_records_text(std::string_view text) {
    std::vector<PerturbationRecord> out;
    for_each_line(text, [&](std::size_t line_no, const std::string& line) {
        out.push_back(with_line_context(line_no, "perturbation record", [&] {
            const auto j = nlohmann::json::parse(line);
            PerturbationRecord r;
            r.transcript_id = j.at("transcript_id").get<std::string>();
            r.sentence_index = j.at("sentence_index").get<std::size_t>();
            r.replacement_id = j.at("replacement_id").get<std::string>();
            r.topic = j.at("topic").get<std::size_t>();
            r.score = j.at("score").get<double>();
            const auto polarity = j.at("polarity").get<std::string>();
            if (polarity == "positive") {
                r.polarity = Polarity::Positive;
            } else if (polarity == "negative") {
                r.polarity = Polarity::Negative;
            } else {
                throw FormatError("perturbation record line " + std::to_string(line_no) + ": unknown polarity '" +
                                  polarity + "'");
            }
            r.target = j.at("target").get<std::vector<double>>();
            return r;
        }));
    });
    return out;
}

std::string_view scope_name(AugmentScope s) { return s == AugmentScope::Sentence ? "sentence" : "transcript"; }

AugmentScope parse_scope(std::string_view text) {
    if (text == "sentence") return AugmentScope::Sentence;
    if (text == "transcript") return AugmentScope::Transcript;
    throw ConfigError("unknown augmentation scope '" + std::string(text) + "' (expected sentence or transcript)");
}

void AugmentConfig::validate() const {
    if (candidates == 0) throw ConfigError("augment: candidates (N_c) must be positive");
    if (k_pos == 0 && k_neg == 0) throw ConfigError("augment: k_pos and k_neg cannot both be zero");
}

std::vector<PerturbationRecord> augment_transcript(const TranscriptRecord& transcript, const Encoder& model,
                                                   const CheckpointTrace& trace, const AugmentContext& context,
                                                   const AugmentConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (!context.embeddings || !context.pool || !context.sentence_topics) {
        throw ConfigError("augment: incomplete context");
    }
    const auto base = encode_record(transcript, *context.embeddings);
    const std::uint64_t transcript_seed = derive_seed(seed, {fnv1a64(transcript.id)});

    // Candidate groups that each receive one selection.
    std::vector<std::vector<PerturbationCandidate>> groups;
    std::vector<PerturbationCandidate> pooled;
    for (std::size_t i = 0; i < transcript.sentences.size(); ++i) {
        const auto sid = sentence_id(transcript.id, i);
        const auto it = context.sentence_topics->find(sid);
        if (it == context.sentence_topics->end()) throw FormatError("augment: no topic assignment for " + sid);
        const std::size_t topic = it->second;
        if (topic == context.no_topic) continue;
        const auto pool = context.pool->compatible(topic, transcript.session);
        if (cfg.scope == AugmentScope::Sentence) {
            Rng rng(derive_seed(transcript_seed, {i}));
            auto cands = generate_perturbations(transcript, i, topic, pool, cfg.candidates, rng);
            if (!cands.empty()) groups.push_back(std::move(cands));
        } else {
            if (pool.empty()) {
                warn("no replacement sentences for topic " + std::to_string(topic) + "; skipping " + sid);
            }
            for (const auto& s : pool) pooled.push_back({0, i, s.id, topic});
        }
    }
    if (cfg.scope == AugmentScope::Transcript && !pooled.empty()) {
        Rng rng(transcript_seed);
        const auto picks = rng.sample_without_replacement(pooled.size(), std::min(cfg.candidates, pooled.size()));
        std::vector<PerturbationCandidate> cands;
        for (std::size_t k = 0; k < picks.size(); ++k) {
            cands.push_back(pooled[picks[k]]);
            cands.back().id = k;
        }
        groups.push_back(std::move(cands));
    }

    std::vector<PerturbationRecord> records;
    for (const auto& cands : groups) {
        std::vector<EncodedTranscript> inputs;
        inputs.reserve(cands.size());
        for (const auto& c : cands) {
            inputs.push_back(replace_sentence(base, c.sentence_index, context.embeddings->vector(c.replacement_id)));
        }
        const auto scores = score_candidates(base, inputs, trace, cfg.subset);
        std::vector<ScoredCandidate> scored;
        for (std::size_t k = 0; k < cands.size(); ++k) scored.push_back({cands[k].id, scores[k]});
        const auto selection = select_augmentations(scored, cfg.k_pos, cfg.k_neg);
        auto emit = [&](std::size_t k, Polarity polarity) {
            const auto& c = cands[k];
            PerturbationRecord r{transcript.id, c.sentence_index, c.replacement_id, c.topic, scores[k], polarity, {}};
            const std::size_t classes = model.config().num_classes;
            r.target = polarity == Polarity::Positive ? one_hot(argmax(model.predict(inputs[k])), classes)
                                                      : uniform_target(classes);
            records.push_back(std::move(r));
        };
        for (auto k : selection.positive) emit(k, Polarity::Positive);
        for (auto k : selection.negative) emit(k, Polarity::Negative);
    }
    return records;
}

EncodedTranscript perturbed_input(const TranscriptRecord& transcript, const PerturbationRecord& record,
                                  const EmbeddingTable& embeddings) {
    if (record.transcript_id != transcript.id) throw ConfigError("perturbation record belongs to another transcript");
    return replace_sentence(encode_record(transcript, embeddings), record.sentence_index,
                            embeddings.vector(record.replacement_id));
}

ExplanationReport explain(const TranscriptRecord& transcript, const Encoder& model,
                          std::span<const PerturbationRecord> records, const EmbeddingTable& embeddings,
                          const std::unordered_map<std::string, std::string>& replacement_texts) {
    ExplanationReport report{transcript.id, {}};
    const auto base = encode_record(transcript, embeddings);
    const auto decided = decision_label(model.predict(base));
    if (!decided) return report;
    if (transcript.label && static_cast<std::size_t>(*transcript.label) != *decided) return report;

    for (const auto& r : records) {
        if (r.transcript_id != transcript.id || r.polarity != Polarity::Negative) continue;
        if (r.sentence_index >= transcript.sentences.size()) {
            throw DimensionError("explain: sentence index out of range in record for " + transcript.id);
        }
        const auto probs = model.predict(
            replace_sentence(base, r.sentence_index, embeddings.vector(r.replacement_id)));
        const std::size_t after = argmax(probs);
        if (after == *decided) continue;
        const auto text = replacement_texts.find(r.replacement_id);
        if (text == replacement_texts.end()) throw FormatError("explain: no text for replacement " + r.replacement_id);
        const auto& original = transcript.sentences[r.sentence_index];
        report.entries.push_back({r.sentence_index, original, r.replacement_id, text->second, r.topic, r.score, *decided,
                                  after, jaccard_similarity(original, text->second)});
    }
    std::stable_sort(report.entries.begin(), report.entries.end(),
                     [](const ExplanationEntry& a, const ExplanationEntry& b) { return a.score < b.score; });
    return report;
}

std::string format_report(const ExplanationReport& r) {
    std::string s = "{\"transcript_id\":" + quoted(r.transcript_id) + ",\"entries\":[";
    for (std::size_t i = 0; i < r.entries.size(); ++i) {
        const auto& e = r.entries[i];
        if (i) s += ',';
        s += "{\"sentence_index\":" + std::to_string(e.sentence_index);
        s += ",\"original_sentence\":" + quoted(e.original_sentence);
        s += ",\"replacement_id\":" + quoted(e.replacement_id);
        s += ",\"replacement_sentence\":" + quoted(e.replacement_sentence);
        s += ",\"topic\":" + std::to_string(e.topic);
        s += ",\"score\":" + fixed6(e.score);
        s += ",\"original_label\":" + std::to_string(e.original_label);
        s += ",\"perturbed_label\":" + std::to_string(e.perturbed_label);
        s += ",\"closeness\":" + fixed6(e.closeness) + "}";
    }
    return s + "]}";
}

std::string format_reports(std::span<const ExplanationReport> reports) {
    std::string out;
    for (const auto& r : reports) out += format_report(r) + '\n';
    return out;
}

std::vector<ExplanationReport> parse_reports_text(std::string_view text) {
    std::vector<ExplanationReport> out;
    for_each_line(text, [&](std::size_t line_no, const std::string& line) {
        out.push_back(with_line_context(line_no, "explanation report", [&] {
            const auto j = nlohmann::json::parse(line);
            ExplanationReport r{j.at("transcript_id").get<std::string>(), {}};
            for (const auto& e : j.at("entries")) {
                r.entries.push_back({e.at("sentence_index").get<std::size_t>(),
                                     e.at("original_sentence").get<std::string>(),
                                     e.at("replacement_id").get<std::string>(),
                                     e.at("replacement_sentence").get<std::string>(), e.at("topic").get<std::size_t>(),
                                     e.at("score").get<double>(), e.at("original_label").get<std::size_t>(),
                                     e.at("perturbed_label").get<std::size_t>(), e.at("closeness").get<double>()});
            }
            return r;
        }));
    });
    return out;
}

}  // namespace mtca
