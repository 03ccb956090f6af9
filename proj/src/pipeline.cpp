#include "mtca/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <map>
#include <set>
#include <tuple>
#include <unordered_set>

#include <json.hpp>

#include "mtca/binary_io.hpp"
#include "mtca/digest.hpp"
#include "mtca/error.hpp"
#include "mtca/log.hpp"
#include "mtca/parallel.hpp"

namespace mtca {

namespace {

constexpr std::uint64_t kInitStream = 21;
constexpr std::uint64_t kAugmentStream = 22;
constexpr std::uint64_t kExplainStream = 23;
constexpr std::uint64_t kBaselineStream = 24;
constexpr std::uint64_t kTopicStream = 25;

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void PipelineConfig::validate() const {
    model_config().validate();
    train.validate();
    augment.validate();
    if (topics.top_n == 0) throw ConfigError("topic_top_n must be positive");
    if (horizon_days < 2) throw ConfigError("horizon_days must be at least 2");
}

EncoderConfig PipelineConfig::model_config() const {
    EncoderConfig c = encoder;
    c.dropout = train.dropout;
    return c;
}

PipelineConfig read_pipeline_config(KeyValueFile& kv) {
    PipelineConfig c;
    auto& e = c.encoder;
    e.d = kv.get_size("d", e.d);
    e.max_sentences = kv.get_size("max_sentences", e.max_sentences);
    e.heads = kv.get_size("heads", e.heads);
    e.top_queries = kv.get_size("top_queries", e.top_queries);
    e.num_classes = kv.get_size("num_classes", e.num_classes);
    e.stacked_layers = kv.get_size("stacked_layers", e.stacked_layers);
    e.conv_width = kv.get_size("conv_width", e.conv_width);

    auto& t = c.train;
    t.lr = kv.get_double("lr", t.lr);
    t.batch = kv.get_size("batch", t.batch);
    t.weight_decay = kv.get_double("weight_decay", t.weight_decay);
    t.dropout = kv.get_double("dropout", t.dropout);
    t.alpha = kv.get_double("alpha", t.alpha);
    t.rounds = kv.get_size("rounds", t.rounds);
    t.epochs_per_round = kv.get_size("epochs_per_round", t.epochs_per_round);
    t.seed = kv.get_u64("seed", t.seed);
    t.checkpoint_every = kv.get_size("checkpoint_every", t.checkpoint_every);
    t.average_passes = kv.get_bool("average_passes", t.average_passes);
    t.early_stop = kv.get_bool("early_stop", t.early_stop);
    t.early_stop_delta = kv.get_double("early_stop_delta", t.early_stop_delta);

    auto& a = c.augment;
    a.candidates = kv.get_size("candidates", a.candidates);
    a.k_pos = kv.get_size("k_pos", a.k_pos);
    a.k_neg = kv.get_size("k_neg", a.k_neg);
    a.scope = parse_scope(kv.get_string("scope", std::string(scope_name(a.scope))));
    a.subset = parse_subset(kv.get_string("gradient_subset", std::string(subset_name(a.subset))));

    auto& tp = c.topics;
    tp.top_n = kv.get_size("topic_top_n", tp.top_n);
    tp.bm25.k1 = kv.get_double("bm25_k1", tp.bm25.k1);
    tp.bm25.b = kv.get_double("bm25_b", tp.bm25.b);
    tp.train.epochs = kv.get_size("topic_epochs", tp.train.epochs);
    tp.train.lr = kv.get_double("topic_lr", tp.train.lr);

    c.horizon_days = kv.get_size("horizon_days", c.horizon_days);
    kv.finish();
    c.validate();
    return c;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
    auto kv = KeyValueFile::load(path);
    return read_pipeline_config(kv);
}

std::string format_pipeline_config(const PipelineConfig& c) {
    std::string s;
    auto line = [&](const char* key, const std::string& value) { s += std::string(key) + " = " + value + "\n"; };
    auto size = [&](const char* key, std::size_t v) { line(key, std::to_string(v)); };
    auto real = [&](const char* key, double v) { line(key, format_double(v)); };
    auto flag = [&](const char* key, bool v) { line(key, v ? "true" : "false"); };

    s += "# encoder\n";
    size("d", c.encoder.d);
    size("max_sentences", c.encoder.max_sentences);
    size("heads", c.encoder.heads);
    size("top_queries", c.encoder.top_queries);
    size("num_classes", c.encoder.num_classes);
    size("stacked_layers", c.encoder.stacked_layers);
    size("conv_width", c.encoder.conv_width);
    s += "# training\n";
    real("lr", c.train.lr);
    size("batch", c.train.batch);
    real("weight_decay", c.train.weight_decay);
    real("dropout", c.train.dropout);
    real("alpha", c.train.alpha);
    size("rounds", c.train.rounds);
    size("epochs_per_round", c.train.epochs_per_round);
    line("seed", std::to_string(c.train.seed));
    size("checkpoint_every", c.train.checkpoint_every);
    flag("average_passes", c.train.average_passes);
    flag("early_stop", c.train.early_stop);
    real("early_stop_delta", c.train.early_stop_delta);
    s += "# augmentation\n";
    size("candidates", c.augment.candidates);
    size("k_pos", c.augment.k_pos);
    size("k_neg", c.augment.k_neg);
    line("scope", std::string(scope_name(c.augment.scope)));
    line("gradient_subset", std::string(subset_name(c.augment.subset)));
    s += "# topics and labels\n";
    size("topic_top_n", c.topics.top_n);
    real("bm25_k1", c.topics.bm25.k1);
    real("bm25_b", c.topics.bm25.b);
    size("topic_epochs", c.topics.train.epochs);
    real("topic_lr", c.topics.train.lr);
    size("horizon_days", c.horizon_days);
    return s;
}

const std::vector<TranscriptRecord>& PreparedData::records(std::string_view split_name) const {
    if (split_name == "train") return split.train;
    if (split_name == "val") return split.val;
    if (split_name == "test") return split.test;
    throw ConfigError("unknown split '" + std::string(split_name) + "' (expected train, val or test)");
}

PreparedData prepare_data(std::vector<TranscriptRecord> transcripts, std::vector<CrossDomainSentence> cross_domain,
                          EmbeddingTable embeddings, TopicSet topics, const PriceTable* prices,
                          const PipelineConfig& cfg) {
    topics.validate();
    {
        std::set<std::string> ids;
        for (const auto& t : transcripts) {
            if (!ids.insert(t.id).second) throw FormatError("duplicate transcript id " + t.id);
        }
    }
    auto missing = missing_sentence_ids(transcripts, embeddings);
    for (const auto& s : cross_domain) {
        if (!embeddings.contains(s.id)) missing.push_back(s.id);
    }
    if (!missing.empty()) {
        std::string list;
        for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
        throw FormatError("missing sentence embeddings (" + std::to_string(missing.size()) + "): " + list);
    }

    if (prices) {
        for (auto& t : transcripts) {
            const auto it = prices->find(t.ticker);
            if (it == prices->end()) throw FormatError("no prices for ticker " + t.ticker + " (transcript " + t.id + ")");
            t.volatility = log_volatility(it->second, t.date, cfg.horizon_days);
        }
    }

    PreparedData d;
    d.split = chronological_split(std::move(transcripts));
    const bool have_volatility = std::all_of(d.split.train.begin(), d.split.train.end(),
                                             [](const auto& t) { return t.volatility.has_value(); });
    auto all_records = [&](auto&& fn) {
        for (auto* part : {&d.split.train, &d.split.val, &d.split.test})
            for (auto& t : *part) fn(t);
    };
    if (have_volatility && !d.split.train.empty()) {
        std::vector<double> values;
        for (const auto& t : d.split.train) values.push_back(*t.volatility);
        const auto thresholds = fit_thresholds(values);
        all_records([&](TranscriptRecord& t) {
            if (!t.volatility) throw FormatError("transcript " + t.id + " has no volatility");
            t.label = assign_label(*t.volatility, thresholds);
        });
    } else {
        all_records([&](TranscriptRecord& t) {
            if (!t.label) throw FormatError("transcript " + t.id + " has neither a label nor a volatility");
        });
    }

    std::vector<std::string> texts;
    std::vector<std::string> ids;
    all_records([&](TranscriptRecord& t) {
        for (std::size_t i = 0; i < t.sentences.size(); ++i) {
            texts.push_back(t.sentences[i]);
            ids.push_back(sentence_id(t.id, i));
        }
    });
    for (const auto& s : cross_domain) {
        texts.push_back(s.text);
        ids.push_back(s.id);
    }
    std::vector<std::vector<double>> vectors;
    vectors.reserve(ids.size());
    for (const auto& id : ids) vectors.push_back(embeddings.vector(id));

    if (texts.empty()) {
        const std::size_t labels = topics.size() + 1;
        d.topic_head.weight = Tensor::matrix(labels, embeddings.dim(), std::vector<double>(labels * embeddings.dim(), 0.0));
        d.topic_head.bias.assign(labels, 0.0);
    } else {
        d.topic_head = fit_topic_model(topics, texts, vectors, cfg.topics, derive_seed(cfg.train.seed, {kTopicStream})).head;
    }
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto a = assign_topic(vectors[i], d.topic_head);
        d.assignments.push_back({ids[i], a.label, a.confidence});
    }
    d.cross_domain = std::move(cross_domain);
    d.embeddings = std::move(embeddings);
    d.topics = std::move(topics);
    return d;
}

std::vector<std::string> write_prepared(const std::filesystem::path& dir, const PreparedData& data) {
    namespace pf = prepared_files;
    std::filesystem::create_directories(dir);
    write_transcripts(dir / pf::kTrain, data.split.train);
    write_transcripts(dir / pf::kVal, data.split.val);
    write_transcripts(dir / pf::kTest, data.split.test);
    write_text_file(dir / pf::kCrossDomain, format_cross_domain(data.cross_domain));
    write_embeddings(dir / pf::kEmbeddings, data.embeddings);
    write_text_file(dir / pf::kTopics, format_topics(data.topics));
    write_file_bytes(dir / pf::kTopicHead, serialize_topic_head(data.topic_head));
    write_text_file(dir / pf::kAssignments, format_assignments(data.assignments));
    return {pf::kTrain, pf::kVal, pf::kTest, pf::kCrossDomain, pf::kEmbeddings, pf::kTopics, pf::kTopicHead,
            pf::kAssignments};
}

PreparedData read_prepared(const std::filesystem::path& dir) {
    namespace pf = prepared_files;
    PreparedData d;
    d.split.train = parse_transcripts(dir / pf::kTrain);
    d.split.val = parse_transcripts(dir / pf::kVal);
    d.split.test = parse_transcripts(dir / pf::kTest);
    d.cross_domain = parse_cross_domain(dir / pf::kCrossDomain);
    d.embeddings = read_embeddings(dir / pf::kEmbeddings);
    d.topics = parse_topics(dir / pf::kTopics);
    d.topic_head = deserialize_topic_head(read_file_bytes(dir / pf::kTopicHead));
    d.assignments = parse_assignments_text(read_text_file(dir / pf::kAssignments));
    if (d.topic_head.labels() != d.topics.size() + 1) {
        throw FormatError("topic head has " + std::to_string(d.topic_head.labels()) + " labels for " +
                          std::to_string(d.topics.size()) + " topics");
    }
    for (auto* part : {&d.split.train, &d.split.val, &d.split.test})
        for (const auto& t : *part)
            if (!t.label) throw FormatError("prepared transcript " + t.id + " has no label");
    return d;
}

AugmentContext TopicIndex::context(const EmbeddingTable& embeddings) const {
    return {&embeddings, &pool, &sentence_topics, no_topic};
}

TopicIndex build_topic_index(const PreparedData& data) {
    TopicIndex index;
    index.no_topic = data.topics.no_topic();
    std::unordered_map<std::string, std::size_t> topic_of;
    for (const auto& row : data.assignments) {
        if (row.topic > index.no_topic) throw FormatError("assignment for " + row.sentence_id + " has unknown topic");
        topic_of[row.sentence_id] = row.topic;
    }
    std::vector<PoolSentence> pool;
    for (const auto& s : data.cross_domain) {
        const auto it = topic_of.find(s.id);
        if (it == topic_of.end()) throw FormatError("no topic assignment for " + s.id);
        index.texts[s.id] = s.text;
        if (it->second != index.no_topic) pool.push_back({s.id, it->second, s.session});
    }
    index.pool = TopicPool(std::move(pool));
    for (auto* part : {&data.split.train, &data.split.val, &data.split.test}) {
        for (const auto& t : *part) {
            for (std::size_t i = 0; i < t.sentences.size(); ++i) {
                const auto id = sentence_id(t.id, i);
                const auto it = topic_of.find(id);
                if (it == topic_of.end()) throw FormatError("no topic assignment for " + id);
                index.sentence_topics[id] = it->second;
            }
        }
    }
    return index;
}

std::vector<LabeledInput> labeled_inputs(std::span<const TranscriptRecord> records, const EmbeddingTable& embeddings) {
    std::vector<LabeledInput> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        if (!r.label) throw FormatError("transcript " + r.id + " has no label");
        out.push_back({encode_record(r, embeddings), *r.label});
    }
    return out;
}

std::vector<int> predict_labels(const Encoder& model, std::span<const TranscriptRecord> records,
                                const EmbeddingTable& embeddings) {
    std::vector<int> out(records.size());
    parallel_for(records.size(), [&](std::size_t i) {
        out[i] = static_cast<int>(argmax(model.predict(encode_record(records[i], embeddings))));
    });
    return out;
}

EvalReport evaluate_model(const Encoder& model, const PreparedData& data, std::string_view split,
                          std::uint64_t seed) {
    const auto& records = data.records(split);
    const auto predictions = predict_labels(model, records, data.embeddings);
    std::vector<int> labels;
    for (const auto& r : records) labels.push_back(*r.label);
    std::vector<TickerObservation> history;
    for (const std::string_view name : {"train", "val", "test"}) {
        for (const auto& r : data.records(name)) history.push_back({r.ticker, r.date, *r.label, name == split});
    }
    return make_eval_report(std::string(split), predictions, labels, history, derive_seed(seed, {kBaselineStream}));
}

std::vector<PerturbationRecord> augment_records(std::span<const TranscriptRecord> records, const Encoder& model,
                                                const CheckpointTrace& trace, const AugmentContext& context,
                                                const AugmentConfig& cfg, std::uint64_t seed) {
    std::vector<PerturbationRecord> out;
    for (const auto& r : records) {
        auto part = augment_transcript(r, model, trace, context, cfg, seed);
        out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
    return out;
}

std::uint64_t augmentation_seed(const TrainConfig& cfg, std::size_t round) {
    return derive_seed(cfg.seed, {kAugmentStream, round});
}

std::uint64_t explanation_seed(const TrainConfig& cfg) { return derive_seed(cfg.seed, {kExplainStream}); }

AugmentConfig explanation_config(const AugmentConfig& cfg) {
    AugmentConfig c = cfg;
    c.scope = AugmentScope::Sentence;
    c.k_pos = 0;
    c.k_neg = std::max<std::size_t>(cfg.k_neg, 1);
    return c;
}

std::vector<ExplanationReport> explain_records(std::span<const TranscriptRecord> records, const Encoder& model,
                                               std::span<const PerturbationRecord> perturbations,
                                               const EmbeddingTable& embeddings,
                                               const std::unordered_map<std::string, std::string>& texts) {
    std::map<std::string, std::vector<PerturbationRecord>> by_transcript;
    for (const auto& p : perturbations) by_transcript[p.transcript_id].push_back(p);
    std::vector<ExplanationReport> out(records.size());
    parallel_for(records.size(), [&](std::size_t i) {
        const auto it = by_transcript.find(records[i].id);
        const std::span<const PerturbationRecord> mine =
            it == by_transcript.end() ? std::span<const PerturbationRecord>{} : std::span(it->second);
        out[i] = explain(records[i], model, mine, embeddings, texts);
    });
    return out;
}

std::string round_dir_name(std::size_t round) { return "round" + std::to_string(round); }

namespace {

using PairKey = std::tuple<std::string, std::size_t, std::string>;

struct PersistedRound {
    Encoder model;
    CheckpointTrace trace;
    std::vector<MetricRecord> metrics;
    RoundSummary summary;
    bool augmented = false;
    std::vector<PerturbationRecord> augmentations;
};

std::string run_key(const PipelineConfig& cfg, const PipelineOptions& options) {
    return sha256_hex(format_pipeline_config(cfg) + (options.augment ? "augment\n" : "no-augment\n"));
}

void write_round(const std::filesystem::path& dir, const PersistedRound& r, const std::string& key) {
    namespace rf = run_files;
    std::filesystem::create_directories(dir);
    save_checkpoint(dir / rf::kModel, r.model);
    save_trace(dir / rf::kTrace, r.trace);
    write_text_file(dir / rf::kMetrics, format_metrics(r.metrics));
    std::vector<std::string> files{rf::kModel, rf::kTrace, rf::kMetrics};
    if (r.augmented) {
        write_text_file(dir / rf::kAugmentations, format_records(r.augmentations));
        files.push_back(rf::kAugmentations);
    } else {
        std::filesystem::remove(dir / rf::kAugmentations);
    }
    nlohmann::ordered_json j;
    j["run_key"] = key;
    j["round"] = r.summary.round;
    j["pool_size"] = r.summary.pool_size;
    j["augmentations"] = r.summary.augmentations;
    j["val_accuracy"] = r.summary.val_accuracy;
    j["test_accuracy"] = r.summary.test_accuracy;
    j["augmented"] = r.augmented;
    auto& digests = j["files"] = nlohmann::ordered_json::object();
    for (const auto& f : files) digests[f] = sha256_file(dir / f);
    write_text_file(dir / rf::kRoundState, j.dump(2) + "\n");
}

std::optional<PersistedRound> read_round(const std::filesystem::path& dir, const std::string& key) {
    namespace rf = run_files;
    if (!std::filesystem::exists(dir / rf::kRoundState)) return std::nullopt;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(dir / rf::kRoundState));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError((dir / rf::kRoundState).string() + ": " + e.what());
    }
    if (j.value("run_key", "") != key) {
        throw ConfigError(dir.string() + " was written with a different config; remove it or use a fresh --out");
    }
    for (const auto& [name, digest] : j.at("files").items()) {
        if (!std::filesystem::exists(dir / name)) throw DigestError((dir / name).string() + " is missing");
        if (sha256_file(dir / name) != digest.get<std::string>()) {
            throw DigestError((dir / name).string() + " does not match its recorded digest");
        }
    }
    PersistedRound r;
    r.model = load_checkpoint(dir / rf::kModel);
    r.trace = load_trace(dir / rf::kTrace);
    r.metrics = parse_metrics_text(read_text_file(dir / rf::kMetrics));
    r.summary = {j.at("round").get<std::size_t>(), j.at("pool_size").get<std::size_t>(),
                 j.at("augmentations").get<std::size_t>(), j.at("val_accuracy").get<double>(),
                 j.at("test_accuracy").get<double>()};
    r.augmented = j.at("augmented").get<bool>();
    if (r.augmented) r.augmentations = parse_records_text(read_text_file(dir / rf::kAugmentations));
    return r;
}

}  // namespace

PipelineResult run_pipeline(const PreparedData& data, const PipelineConfig& cfg, const PipelineOptions& options) {
    namespace rf = run_files;
    cfg.validate();
    if (data.split.train.empty()) throw ConfigError("training split is empty");
    if (data.embeddings.dim() != cfg.encoder.d) {
        throw DimensionError("embedding dim " + std::to_string(data.embeddings.dim()) + " differs from encoder d " +
                             std::to_string(cfg.encoder.d));
    }
    const bool persist = !options.out.empty();
    const std::string key = run_key(cfg, options);
    if (persist) {
        std::filesystem::create_directories(options.out);
        write_text_file(options.out / rf::kConfig, format_pipeline_config(cfg));
    }

    const auto index = build_topic_index(data);
    const auto context = index.context(data.embeddings);
    const auto& emb = data.embeddings;
    const auto val = labeled_inputs(data.split.val, emb);
    const auto test = labeled_inputs(data.split.test, emb);
    std::unordered_map<std::string, const TranscriptRecord*> train_by_id;
    for (const auto& t : data.split.train) train_by_id[t.id] = &t;

    std::vector<TrainingExample> pool;
    for (const auto& t : data.split.train) pool.push_back({encode_record(t, emb), one_hot(*t.label, kClasses)});
    std::set<PairKey> seen;

    PipelineResult res;
    Encoder model = Encoder::initialize(cfg.model_config(), derive_seed(cfg.train.seed, {kInitStream}));
    CheckpointTrace trace;
    double previous_val = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 1; r <= cfg.train.rounds; ++r) {
        const auto dir = options.out / round_dir_name(r);
        std::optional<PersistedRound> round;
        if (persist && options.resume) round = read_round(dir, key);
        const bool loaded = round.has_value();
        if (loaded) {
            if (round->summary.pool_size != pool.size()) throw DigestError(dir.string() + ": pool size differs");
            info("resumed round " + std::to_string(r) + " from " + dir.string());
        } else {
            round.emplace();
            auto trained = train_round(pool, model, cfg.train, r, val);
            round->model = std::move(trained.encoder);
            round->trace = std::move(trained.trace);
            round->metrics = std::move(trained.metrics);
            round->summary.round = r;
            round->summary.pool_size = pool.size();
            round->summary.val_accuracy =
                val.empty() ? 0.0 : evaluate_split(round->model, val, "val", r, cfg.train.epochs_per_round).accuracy;
            if (!test.empty()) {
                auto m = evaluate_split(round->model, test, "test", r, cfg.train.epochs_per_round);
                round->summary.test_accuracy = m.accuracy;
                round->metrics.push_back(std::move(m));
            }
        }
        model = round->model;
        trace = round->trace;
        res.metrics.insert(res.metrics.end(), round->metrics.begin(), round->metrics.end());
        info("round " + std::to_string(r) + ": pool " + std::to_string(pool.size()) + ", val acc " +
             format_double(round->summary.val_accuracy) + ", test acc " + format_double(round->summary.test_accuracy));

        const bool stalled = cfg.train.early_stop && r > 1 &&
                             round->summary.val_accuracy < previous_val + cfg.train.early_stop_delta;
        previous_val = round->summary.val_accuracy;
        const bool last = r == cfg.train.rounds || stalled;
        if (stalled) info("early stop after round " + std::to_string(r));

        bool dirty = !loaded;
        if (!last && options.augment) {
            if (!round->augmented) {
                round->augmentations = augment_records(data.split.train, model, trace, context, cfg.augment,
                                                       augmentation_seed(cfg.train, r));
                round->augmented = true;
                round->summary.augmentations = round->augmentations.size();
                dirty = true;
            }
            for (const auto& rec : round->augmentations) {
                if (!seen.insert({rec.transcript_id, rec.sentence_index, rec.replacement_id}).second) continue;
                const auto it = train_by_id.find(rec.transcript_id);
                if (it == train_by_id.end()) throw FormatError("augmentation for unknown transcript " + rec.transcript_id);
                pool.push_back({perturbed_input(*it->second, rec, emb), rec.target});
            }
            res.augmentations.push_back(round->augmentations);
        }
        if (persist && dirty) write_round(dir, *round, key);
        res.rounds.push_back(round->summary);
        if (last) break;
    }
    res.model = model;
    res.trace = trace;

    if (!data.split.test.empty()) res.test_report = evaluate_model(model, data, "test", cfg.train.seed);
    if (options.explain && !data.split.test.empty()) {
        res.explanation_records = augment_records(data.split.test, model, trace, context,
                                                  explanation_config(cfg.augment),
                                                  explanation_seed(cfg.train));
        res.explanations = explain_records(data.split.test, model, res.explanation_records, emb, index.texts);
    }

    if (persist) {
        save_checkpoint(options.out / rf::kModel, res.model);
        save_trace(options.out / rf::kTrace, res.trace);
        write_text_file(options.out / rf::kMetrics, format_metrics(res.metrics));
        if (!data.split.test.empty()) write_text_file(options.out / rf::kEvalTest, format_eval_json(res.test_report));
        if (options.explain) {
            write_text_file(options.out / rf::kExplainRecords, format_records(res.explanation_records));
            write_text_file(options.out / rf::kExplanations, format_reports(res.explanations));
        }
    }
    return res;
}

std::vector<std::string> list_run_files(const std::filesystem::path& out) {
    std::vector<std::string> files;
    for (const auto& e : std::filesystem::recursive_directory_iterator(out)) {
        if (e.is_regular_file()) files.push_back(std::filesystem::relative(e.path(), out).generic_string());
    }
    std::sort(files.begin(), files.end());
    return files;
}

Localization explanation_localization(std::span<const TranscriptRecord> records, std::span<const int> predictions,
                                      std::span<const ExplanationReport> reports,
                                      std::span<const GroundTruth> ground_truth) {
    if (records.size() != predictions.size()) throw DimensionError("localization: one prediction per record");
    std::unordered_map<std::string, std::size_t> decisive;
    for (const auto& g : ground_truth) decisive[g.transcript_id] = g.decisive_index;
    std::unordered_map<std::string, const ExplanationReport*> report_of;
    for (const auto& r : reports) report_of[r.transcript_id] = &r;
    Localization out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (!records[i].label || predictions[i] != *records[i].label) continue;
        const auto g = decisive.find(records[i].id);
        if (g == decisive.end()) throw FormatError("no ground truth for " + records[i].id);
        ++out.correct;
        const auto rep = report_of.find(records[i].id);
        if (rep != report_of.end() && !rep->second->entries.empty() &&
            rep->second->entries.front().sentence_index == g->second) {
            ++out.hits;
        }
    }
    return out;
}

}  // namespace mtca
