#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

#include "mtca/binary_io.hpp"
#include "mtca/error.hpp"
#include "mtca/log.hpp"
#include "mtca/manifest.hpp"
#include "mtca/parallel.hpp"
#include "mtca/pipeline.hpp"
#include "mtca/synth.hpp"

namespace fs = std::filesystem;
using namespace mtca;

namespace {

enum ExitCode : int {
    kOk = 0,
    kUnexpected = 1,
    kUsage = 2,
    kConfig = 3,
    kFormat = 4,
    kDimension = 5,
    kNumeric = 6,
    kIo = 7,
    kDigest = 8,
};

std::string format_spec(const SyntheticSpec& s) {
    std::string out;
    auto line = [&](const char* key, const std::string& v) { out += std::string(key) + " = " + v + "\n"; };
    auto real = [](double v) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    line("transcripts", std::to_string(s.transcripts));
    line("sentences", std::to_string(s.sentences));
    line("topical_sentences", std::to_string(s.topical_sentences));
    line("topics", std::to_string(s.topics));
    line("topic_words", std::to_string(s.topic_words));
    line("polarity_words", std::to_string(s.polarity_words));
    line("neutral_words", std::to_string(s.neutral_words));
    line("pool_per_topic", std::to_string(s.pool_per_topic));
    line("polar_fraction", real(s.polar_fraction));
    line("noise", real(s.noise));
    line("tickers", std::to_string(s.tickers));
    line("dim", std::to_string(s.dim));
    line("seed", std::to_string(s.seed));
    return out;
}

// Checks `file` against the manifest of the directory holding it, when there
// is one that lists it.
void verify_input(const fs::path& file) {
    const auto dir = file.parent_path().empty() ? fs::path(".") : file.parent_path();
    const auto m = read_manifest(dir);
    if (!m) return;
    for (const auto& a : m->artifacts) {
        if (a.path != file.filename().generic_string()) continue;
        RunManifest one;
        one.artifacts.push_back(a);
        verify_artifacts(dir, one);
    }
}

// Verifies every artifact of an upstream output directory.
std::optional<ManifestEntry> verify_directory(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
    const auto m = read_manifest(dir);
    if (!m) {
        warn(dir.string() + " has no manifest; inputs are not digest-verified");
        return std::nullopt;
    }
    verify_artifacts(dir, *m);
    return digest_entry(dir / kManifestFile, (dir / kManifestFile).generic_string());
}

void finish(const fs::path& out, RunManifest m, const std::vector<std::string>& artifacts) {
    for (const auto& a : artifacts) m.artifacts.push_back(digest_entry(out / a, a));
    m.finished = utc_timestamp();
    write_manifest(out, m);
}

RunManifest start(std::string command) {
    RunManifest m;
    m.command = std::move(command);
    m.started = utc_timestamp();
    return m;
}

PipelineConfig config_or_default(const std::string& path) {
    return path.empty() ? PipelineConfig{} : load_pipeline_config(path);
}

// A model argument is a checkpoint file or a run directory holding one.
struct ModelPaths {
    fs::path model;
    fs::path trace;
    fs::path config;  // run directories carry their config
};

ModelPaths resolve_model(const std::string& model, const std::string& trace) {
    ModelPaths p;
    const fs::path m(model);
    if (fs::is_directory(m)) {
        verify_directory(m);
        p.model = m / run_files::kModel;
        p.trace = m / run_files::kTrace;
        if (fs::exists(m / run_files::kConfig)) p.config = m / run_files::kConfig;
    } else {
        verify_input(m);
        p.model = m;
    }
    if (!trace.empty()) {
        verify_input(trace);
        p.trace = trace;
    }
    return p;
}

int cmd_synth(const std::string& spec_path, const fs::path& out, std::optional<std::uint64_t> seed) {
    auto m = start("synth");
    SyntheticSpec spec;
    if (!spec_path.empty()) {
        auto kv = KeyValueFile::load(spec_path);
        spec = read_synthetic_spec(kv);
        kv.finish();
        m.inputs.push_back(digest_entry(spec_path, spec_path));
    }
    if (seed) spec.seed = *seed;
    spec.validate();
    m.config = format_spec(spec);
    m.seeds["seed"] = spec.seed;
    fs::create_directories(out);
    const auto corpus = synth_generate(spec);
    write_synthetic_corpus(out, corpus);
    write_text_file(out / "spec.txt", m.config);
    finish(out, m,
           {corpus_files::kTranscripts, corpus_files::kCrossDomain, corpus_files::kEmbeddings, corpus_files::kTopics,
            corpus_files::kGroundTruth, "spec.txt"});
    std::cout << "wrote " << corpus.transcripts.size() << " transcripts and " << corpus.cross_domain.size()
              << " cross-domain sentences to " << out.string() << "\n";
    return kOk;
}

struct PrepareArgs {
    std::string transcripts, embeddings, topics, prices, source, config;
    fs::path out;
};

int cmd_prepare(const PrepareArgs& a) {
    auto m = start("prepare");
    const auto cfg = config_or_default(a.config);
    m.config = format_pipeline_config(cfg);
    m.seeds["seed"] = cfg.train.seed;
    for (const auto* p : {&a.transcripts, &a.embeddings, &a.topics, &a.prices, &a.source, &a.config}) {
        if (p->empty()) continue;
        verify_input(*p);
        m.inputs.push_back(digest_entry(*p, *p));
    }
    auto transcripts = parse_transcripts(a.transcripts, cfg.encoder.max_sentences);
    auto embeddings = read_embeddings(a.embeddings);
    auto topics = parse_topics(a.topics);
    std::vector<CrossDomainSentence> cross;
    if (!a.source.empty()) cross = parse_cross_domain(a.source);
    std::optional<PriceTable> prices;
    if (!a.prices.empty()) prices = parse_prices(a.prices);
    const auto data = prepare_data(std::move(transcripts), std::move(cross), std::move(embeddings), std::move(topics),
                                   prices ? &*prices : nullptr, cfg);
    const auto files = write_prepared(a.out, data);
    finish(a.out, m, files);
    std::cout << "split sizes: train " << data.split.train.size() << ", val " << data.split.val.size() << ", test "
              << data.split.test.size() << "\n";
    return kOk;
}

int cmd_train(const std::string& config, const fs::path& data_dir, const fs::path& out, bool resume) {
    auto m = start("train");
    const auto cfg = load_pipeline_config(config);
    m.config = format_pipeline_config(cfg);
    m.seeds["seed"] = cfg.train.seed;
    m.inputs.push_back(digest_entry(config, config));
    if (auto e = verify_directory(data_dir)) m.inputs.push_back(*e);
    const auto data = read_prepared(data_dir);
    fs::create_directories(out);
    const auto result = run_pipeline(data, cfg, {.out = out, .resume = resume});
    auto files = list_run_files(out);
    std::erase(files, kManifestFile);
    finish(out, m, files);
    for (const auto& r : result.rounds) {
        std::printf("round %zu: pool %zu, augmentations %zu, val accuracy %.4f, test accuracy %.4f\n", r.round,
                    r.pool_size, r.augmentations, r.val_accuracy, r.test_accuracy);
    }
    if (!data.split.test.empty()) std::cout << "\n" << format_eval_table(result.test_report);
    return kOk;
}

struct AugmentArgs {
    std::string model, trace, source, config, split = "train";
    std::size_t round = 1;
    bool explanation = false;
    fs::path out;
};

int cmd_augment(const AugmentArgs& a) {
    auto m = start("augment");
    const auto paths = resolve_model(a.model, a.trace);
    if (paths.trace.empty()) throw ConfigError("augment needs --trace unless --model is a run directory");
    const auto config = !a.config.empty() ? fs::path(a.config) : paths.config;
    const auto cfg = config.empty() ? PipelineConfig{} : load_pipeline_config(config);
    m.config = format_pipeline_config(cfg);
    for (const auto& p : {paths.model, paths.trace, config}) {
        if (!p.empty()) m.inputs.push_back(digest_entry(p, p.generic_string()));
    }
    if (auto e = verify_directory(a.source)) m.inputs.push_back(*e);

    const auto data = read_prepared(a.source);
    const auto model = load_checkpoint(paths.model);
    const auto trace = load_trace(paths.trace);
    const auto index = build_topic_index(data);
    const auto acfg = a.explanation ? explanation_config(cfg.augment) : cfg.augment;
    const auto seed = a.explanation ? explanation_seed(cfg.train) : augmentation_seed(cfg.train, a.round);
    m.seeds["seed"] = seed;
    if (index.pool.size() == 0) warn("every topic pool is empty; no perturbations can be generated");
    const auto records = augment_records(data.records(a.split), model, trace, index.context(data.embeddings), acfg, seed);
    if (records.empty()) warn("no augmentation records were produced");
    fs::create_directories(a.out);
    write_text_file(a.out / run_files::kAugmentations, format_records(records));
    finish(a.out, m, {run_files::kAugmentations});
    std::cout << "wrote " << records.size() << " records to " << (a.out / run_files::kAugmentations).string() << "\n";
    return kOk;
}

int cmd_explain(const std::string& model_arg, const std::string& records_path, const fs::path& data_dir,
                const std::string& split, const fs::path& out) {
    auto m = start("explain");
    const auto paths = resolve_model(model_arg, "");
    verify_input(records_path);
    m.inputs.push_back(digest_entry(paths.model, paths.model.generic_string()));
    m.inputs.push_back(digest_entry(records_path, records_path));
    if (auto e = verify_directory(data_dir)) m.inputs.push_back(*e);
    const auto data = read_prepared(data_dir);
    const auto model = load_checkpoint(paths.model);
    const auto records = parse_records_text(read_text_file(records_path));
    const auto index = build_topic_index(data);
    const auto reports = explain_records(data.records(split), model, records, data.embeddings, index.texts);
    fs::create_directories(out);
    write_text_file(out / run_files::kExplanations, format_reports(reports));
    finish(out, m, {run_files::kExplanations});
    std::size_t explained = 0;
    for (const auto& r : reports) explained += !r.entries.empty();
    std::cout << explained << " of " << reports.size() << " transcripts have an explanation\n";
    return kOk;
}

int cmd_evaluate(const std::string& model_arg, const fs::path& data_dir, const std::string& split,
                 const fs::path& out, std::optional<std::uint64_t> seed_arg) {
    auto m = start("evaluate");
    const auto paths = resolve_model(model_arg, "");
    std::uint64_t seed = 0;
    if (seed_arg) {
        seed = *seed_arg;
    } else if (!paths.config.empty()) {
        seed = load_pipeline_config(paths.config).train.seed;
    }
    m.seeds["seed"] = seed;
    m.inputs.push_back(digest_entry(paths.model, paths.model.generic_string()));
    if (auto e = verify_directory(data_dir)) m.inputs.push_back(*e);
    const auto data = read_prepared(data_dir);
    const auto model = load_checkpoint(paths.model);
    const auto report = evaluate_model(model, data, split, seed);
    fs::create_directories(out);
    const std::string json = "eval_" + split + ".json";
    const std::string table = "eval_" + split + ".txt";
    write_text_file(out / json, format_eval_json(report));
    write_text_file(out / table, format_eval_table(report));
    finish(out, m, {json, table});
    std::cout << format_eval_table(report);
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Counterfactual-augmented volatility classification from earnings call transcripts"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "Progress messages on stderr");

    std::string spec_path;
    fs::path out;
    std::optional<std::uint64_t> seed;
    auto* synth = app.add_subcommand("synth", "Generate a planted-signal synthetic corpus");
    synth->add_option("--spec", spec_path, "Synthetic spec (key = value)")->check(CLI::ExistingFile);
    synth->add_option("--out", out, "Output directory")->required();
    synth->add_option("--seed", seed, "Overrides the spec seed");

    PrepareArgs prep;
    auto* prepare = app.add_subcommand("prepare", "Validate, label, split and assign topics");
    prepare->add_option("--transcripts", prep.transcripts, "Transcripts JSONL")->required()->check(CLI::ExistingFile);
    prepare->add_option("--embeddings", prep.embeddings, "Embedding file")->required()->check(CLI::ExistingFile);
    prepare->add_option("--topics", prep.topics, "Topic queries TSV")->required()->check(CLI::ExistingFile);
    prepare->add_option("--prices", prep.prices, "Daily closes CSV (ticker,date,close)")->check(CLI::ExistingFile);
    prepare->add_option("--source", prep.source, "Cross-domain sentences JSONL")->check(CLI::ExistingFile);
    prepare->add_option("--config", prep.config, "Pipeline config")->check(CLI::ExistingFile);
    prepare->add_option("--out", prep.out, "Output directory")->required();

    std::string config;
    fs::path data_dir;
    bool resume = false;
    auto* train = app.add_subcommand("train", "Run the training rounds, evaluation and explanations");
    train->add_option("--config", config, "Pipeline config")->required()->check(CLI::ExistingFile);
    train->add_option("--data", data_dir, "Prepared data directory")->required()->check(CLI::ExistingDirectory);
    train->add_option("--out", out, "Run directory")->required();
    train->add_flag("--resume", resume, "Reuse rounds already completed under --out");

    AugmentArgs aug;
    auto* augment = app.add_subcommand("augment", "Score and select counterfactual perturbations");
    augment->add_option("--model", aug.model, "Checkpoint or run directory")->required()->check(CLI::ExistingPath);
    augment->add_option("--trace", aug.trace, "Checkpoint trace")->check(CLI::ExistingFile);
    augment->add_option("--source,--data", aug.source, "Prepared data directory")
        ->required()
        ->check(CLI::ExistingDirectory);
    augment->add_option("--config", aug.config, "Pipeline config")->check(CLI::ExistingFile);
    augment->add_option("--split", aug.split, "Split to perturb")->check(CLI::IsMember({"train", "val", "test"}));
    augment->add_option("--round", aug.round, "Round the model finished (selects the seed)");
    augment->add_flag("--explanation", aug.explanation, "Sentence-scope negatives as used for explanations");
    augment->add_option("--out", aug.out, "Output directory")->required();

    std::string model_arg, records_path, split = "test";
    auto* explain = app.add_subcommand("explain", "Explain predictions with negative perturbations");
    explain->add_option("--model", model_arg, "Checkpoint or run directory")->required()->check(CLI::ExistingPath);
    explain->add_option("--records", records_path, "Perturbation records JSONL")->required()->check(CLI::ExistingFile);
    explain->add_option("--data", data_dir, "Prepared data directory")->required()->check(CLI::ExistingDirectory);
    explain->add_option("--split", split, "Split to explain")->check(CLI::IsMember({"train", "val", "test"}));
    explain->add_option("--out", out, "Output directory")->required();

    auto* evaluate = app.add_subcommand("evaluate", "Accuracy, per-class metrics and baselines");
    evaluate->add_option("--model", model_arg, "Checkpoint or run directory")->required()->check(CLI::ExistingPath);
    evaluate->add_option("--data", data_dir, "Prepared data directory")->required()->check(CLI::ExistingDirectory);
    evaluate->add_option("--split", split, "Split to evaluate")->check(CLI::IsMember({"train", "val", "test"}));
    evaluate->add_option("--seed", seed, "Random-baseline seed (default: the run's seed)");
    evaluate->add_option("--out", out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }
    set_progress(verbose);

    try {
        if (*synth) return cmd_synth(spec_path, out, seed);
        if (*prepare) return cmd_prepare(prep);
        if (*train) return cmd_train(config, data_dir, out, resume);
        if (*augment) return cmd_augment(aug);
        if (*explain) return cmd_explain(model_arg, records_path, data_dir, split, out);
        if (*evaluate) return cmd_evaluate(model_arg, data_dir, split, out, seed);
    } catch (const DigestError& e) {
        std::cerr << "digest error: " << e.what() << "\n";
        return kDigest;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return kFormat;
    } catch (const DimensionError& e) {
        std::cerr << "dimension error: " << e.what() << "\n";
        return kDimension;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kNumeric;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUnexpected;
    }
    return kUsage;
}
