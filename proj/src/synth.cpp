#include "mtca/synth.hpp"

#include <algorithm>
#include <cstdio>

#include "mtca/binary_io.hpp"
#include "mtca/error.hpp"
#include "mtca/rng.hpp"

namespace mtca {

namespace {

std::string topic_word(std::size_t t, std::size_t k) { return "t" + std::to_string(t) + "w" + std::to_string(k); }
std::string polarity_word(std::size_t c, std::size_t k) { return "c" + std::to_string(c) + "p" + std::to_string(k); }
std::string neutral_word(std::size_t k) { return "nw" + std::to_string(k); }

std::string join(std::vector<std::string> words, Rng& rng) {
    rng.shuffle(words);
    std::string s;
    for (const auto& w : words) {
        if (!s.empty()) s += ' ';
        s += w;
    }
    return s + '.';
}

void add_topic_words(std::vector<std::string>& words, const SyntheticSpec& spec, std::size_t topic, Rng& rng) {
    for (auto k : rng.sample_without_replacement(spec.topic_words, 3)) words.push_back(topic_word(topic, k));
}

void add_neutral(std::vector<std::string>& words, const SyntheticSpec& spec, std::size_t count, Rng& rng) {
    for (std::size_t i = 0; i < count; ++i) words.push_back(neutral_word(rng.below(spec.neutral_words)));
}

void add_polarity(std::vector<std::string>& words, const SyntheticSpec& spec, std::size_t cls, Rng& rng) {
    for (auto k : rng.sample_without_replacement(spec.polarity_words, 2)) words.push_back(polarity_word(cls, k));
}

std::string quarter_date(std::size_t quarter, std::size_t offset) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04zu-%02zu-%02zu", 2010 + quarter / 4, 1 + 3 * (quarter % 4), 1 + offset % 28);
    return buf;
}

}  // namespace

void SyntheticSpec::validate() const {
    if (sentences == 0) throw ConfigError("synthetic spec: sentences must be positive");
    if (topical_sentences == 0 || topical_sentences > sentences) {
        throw ConfigError("synthetic spec: topical_sentences must be in [1, sentences]");
    }
    if (topics == 0 || topic_words < 3) throw ConfigError("synthetic spec: need topics and at least 3 topic words");
    if (polarity_words < 2 || neutral_words == 0) throw ConfigError("synthetic spec: vocabulary too small");
    if (!(noise >= 0.0 && noise < 0.5)) throw ConfigError("synthetic spec: noise must be in [0, 0.5)");
    if (!(polar_fraction >= 0.0 && polar_fraction <= 1.0)) throw ConfigError("synthetic spec: polar_fraction in [0, 1]");
    if (tickers == 0 || dim == 0) throw ConfigError("synthetic spec: tickers and dim must be positive");
}

SyntheticSpec read_synthetic_spec(KeyValueFile& kv) {
    SyntheticSpec s;
    s.transcripts = kv.get_size("transcripts", s.transcripts);
    s.sentences = kv.get_size("sentences", s.sentences);
    s.topical_sentences = kv.get_size("topical_sentences", s.topical_sentences);
    s.topics = kv.get_size("topics", s.topics);
    s.topic_words = kv.get_size("topic_words", s.topic_words);
    s.polarity_words = kv.get_size("polarity_words", s.polarity_words);
    s.neutral_words = kv.get_size("neutral_words", s.neutral_words);
    s.pool_per_topic = kv.get_size("pool_per_topic", s.pool_per_topic);
    s.polar_fraction = kv.get_double("polar_fraction", s.polar_fraction);
    s.noise = kv.get_double("noise", s.noise);
    s.tickers = kv.get_size("tickers", s.tickers);
    s.dim = kv.get_size("dim", s.dim);
    s.seed = kv.get_u64("seed", s.seed);
    s.validate();
    return s;
}

SyntheticCorpus synth_generate(const SyntheticSpec& spec) {
    spec.validate();
    SyntheticCorpus corpus;
    for (std::size_t t = 0; t < spec.topics; ++t) {
        char name[32];
        std::snprintf(name, sizeof name, "topic%02zu", t);
        corpus.topics.names.emplace_back(name);
        std::vector<std::string> terms;
        for (std::size_t k = 0; k < spec.topic_words; ++k) terms.push_back(topic_word(t, k));
        corpus.topics.queries.push_back(std::move(terms));
    }
    const std::size_t no_topic = spec.topics;
    const std::uint64_t embed_seed = derive_seed(spec.seed, {0});
    corpus.embeddings = EmbeddingTable(spec.dim, "hash-embed");

    auto embed = [&](const std::string& id, const std::string& text) {
        corpus.embeddings.add(id, hash_embed(text, spec.dim, embed_seed).vector);
    };

    for (std::size_t i = 0; i < spec.transcripts; ++i) {
        Rng rng(derive_seed(spec.seed, {1, i}));
        char id[32];
        std::snprintf(id, sizeof id, "T%05zu", i);
        char ticker[48];
        std::snprintf(ticker, sizeof ticker, "TK%03zu", i % spec.tickers);

        TranscriptRecord r;
        r.id = id;
        r.ticker = ticker;
        r.date = quarter_date(i / spec.tickers, i % spec.tickers);
        r.session = rng.below(2) == 0 ? Session::OP : Session::QA;
        const auto cls = static_cast<int>(rng.below(3));
        int label = cls;
        if (rng.uniform() < spec.noise) label = static_cast<int>((cls + 1 + rng.below(2)) % 3);
        r.label = label;

        auto topical = rng.sample_without_replacement(spec.sentences, spec.topical_sentences);
        const std::size_t decisive = topical[0];
        std::vector<std::size_t> topic_of(spec.sentences, no_topic);
        for (auto pos : topical) topic_of[pos] = rng.below(spec.topics);

        for (std::size_t pos = 0; pos < spec.sentences; ++pos) {
            std::vector<std::string> words;
            if (topic_of[pos] == no_topic) {
                add_neutral(words, spec, 6, rng);
            } else if (pos == decisive) {
                add_topic_words(words, spec, topic_of[pos], rng);
                add_polarity(words, spec, static_cast<std::size_t>(cls), rng);
            } else {
                add_topic_words(words, spec, topic_of[pos], rng);
                add_neutral(words, spec, 2, rng);
            }
            r.sentences.push_back(join(std::move(words), rng));
            const auto sid = sentence_id(r.id, pos);
            embed(sid, r.sentences.back());
            corpus.planted_topics.emplace_back(sid, topic_of[pos]);
        }
        corpus.ground_truth.push_back({r.id, decisive, cls});
        corpus.transcripts.push_back(std::move(r));
    }

    for (std::size_t t = 0; t < spec.topics; ++t) {
        for (Session session : {Session::OP, Session::QA}) {
            Rng rng(derive_seed(spec.seed, {2, t, static_cast<std::uint64_t>(session)}));
            for (std::size_t k = 0; k < spec.pool_per_topic; ++k) {
                std::vector<std::string> words;
                add_topic_words(words, spec, t, rng);
                if (rng.uniform() < spec.polar_fraction) {
                    add_polarity(words, spec, rng.below(3), rng);
                } else {
                    add_neutral(words, spec, 2, rng);
                }
                char id[48];
                std::snprintf(id, sizeof id, "N%02zu-%s-%03zu", t, std::string(session_name(session)).c_str(), k);
                CrossDomainSentence s{id, "news", session, join(std::move(words), rng)};
                embed(s.id, s.text);
                corpus.planted_topics.emplace_back(s.id, t);
                corpus.cross_domain.push_back(std::move(s));
            }
        }
    }
    return corpus;
}

void write_synthetic_corpus(const std::filesystem::path& dir, const SyntheticCorpus& corpus) {
    write_transcripts(dir / corpus_files::kTranscripts, corpus.transcripts);
    write_text_file(dir / corpus_files::kCrossDomain, format_cross_domain(corpus.cross_domain));
    write_embeddings(dir / corpus_files::kEmbeddings, corpus.embeddings);
    write_text_file(dir / corpus_files::kTopics, format_topics(corpus.topics));
    write_text_file(dir / corpus_files::kGroundTruth, format_ground_truth(corpus.ground_truth));
}

}  // namespace mtca
