#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mtca/binary_io.hpp"
#include "mtca/counterfactual.hpp"
#include "mtca/manifest.hpp"

namespace fs = std::filesystem;

namespace mtca {
namespace {

const fs::path kBinary = MTCA_CLI_PATH;

struct Result {
    int code;
    std::string out;
    std::string err;
};

class CliTest : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        root_ = fs::temp_directory_path() / ("mtca_cli_test_" + std::to_string(::getpid()));
        fs::remove_all(root_);
        fs::create_directories(root_);
        write_text_file(root_ / "spec.txt",
                        "transcripts = 40\nsentences = 6\ntopical_sentences = 2\ntopics = 3\npool_per_topic = 4\n"
                        "polarity_words = 2\ndim = 16\nnoise = 0\nseed = 3\n");
        write_text_file(root_ / "cfg.txt",
                        "d = 16\nmax_sentences = 6\nheads = 2\ntop_queries = 3\nlr = 0.01\nbatch = 8\n"
                        "epochs_per_round = 2\ncheckpoint_every = 1\nrounds = 2\ncandidates = 3\n"
                        "topic_top_n = 5\ntopic_epochs = 100\nseed = 5\n");
        ASSERT_EQ(run("synth --spec spec.txt --out corpus").code, 0);
        ASSERT_EQ(run(prepare_args("data", true)).code, 0);
        ASSERT_EQ(run("train --config cfg.txt --data data --out run").code, 0);
    }

    static void TearDownTestSuite() { fs::remove_all(root_); }

    static std::string prepare_args(const std::string& out, bool source) {
        std::string a = "prepare --transcripts corpus/transcripts.jsonl --embeddings corpus/embeddings.memb "
                        "--topics corpus/topics.tsv --config cfg.txt --out " +
                        out;
        if (source) a += " --source corpus/cross_domain.jsonl";
        return a;
    }

    static Result run(const std::string& args) {
        const auto out = root_ / "stdout.txt";
        const auto err = root_ / "stderr.txt";
        const std::string cmd = "cd '" + root_.string() + "' && '" + kBinary.string() + "' " + args + " > '" +
                                out.string() + "' 2> '" + err.string() + "'";
        const int status = std::system(cmd.c_str());
        return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_text_file(out), read_text_file(err)};
    }

    static std::string digest_of(const fs::path& dir) {
        const auto m = read_manifest(root_ / dir);
        return m ? m->digest() : std::string{};
    }

    static fs::path root_;
};

fs::path CliTest::root_;

TEST_F(CliTest, WalkthroughProducesManifestedArtifacts) {
    for (const char* dir : {"corpus", "data", "run"}) {
        const auto m = read_manifest(root_ / dir);
        ASSERT_TRUE(m.has_value()) << dir;
        EXPECT_FALSE(m->artifacts.empty());
        EXPECT_NO_THROW(verify_artifacts(root_ / dir, *m));
    }
    EXPECT_TRUE(fs::exists(root_ / "run" / "round1" / "state.json"));
    EXPECT_TRUE(fs::exists(root_ / "run" / "eval_test.json"));

    const auto aug = run("augment --model run --source data --round 1 --out aug");
    EXPECT_EQ(aug.code, 0) << aug.err;
    EXPECT_TRUE(fs::exists(root_ / "aug" / "augmentations.jsonl"));
    EXPECT_NO_THROW(parse_records_text(read_text_file(root_ / "aug" / "augmentations.jsonl")));

    const auto ex = run("explain --model run --records run/explain_records.jsonl --data data --out ex");
    EXPECT_EQ(ex.code, 0) << ex.err;
    EXPECT_EQ(read_text_file(root_ / "ex" / "explanations.jsonl"),
              read_text_file(root_ / "run" / "explanations.jsonl"));

    const auto ev = run("evaluate --model run --data data --split test --out ev");
    EXPECT_EQ(ev.code, 0) << ev.err;
    EXPECT_NE(ev.out.find("MTCA"), std::string::npos);
    EXPECT_EQ(read_text_file(root_ / "ev" / "eval_test.json"), read_text_file(root_ / "run" / "eval_test.json"));
}

TEST_F(CliTest, RerunGivesSameDigest) {
    const auto before = digest_of("run");
    ASSERT_FALSE(before.empty());
    ASSERT_EQ(run("train --config cfg.txt --data data --out run_again").code, 0);
    EXPECT_EQ(digest_of("run_again"), before);
    ASSERT_EQ(run("train --config cfg.txt --data data --out run_again --resume").code, 0);
    EXPECT_EQ(digest_of("run_again"), before);
}

TEST_F(CliTest, EmptyPoolsGiveEmptyAugmentationFile) {
    ASSERT_EQ(run(prepare_args("data_nosource", false)).code, 0);
    const auto r = run("augment --model run/model.ckpt --trace run/trace.bin --source data_nosource --out aug_empty");
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.err.find("warning"), std::string::npos);
    EXPECT_EQ(read_text_file(root_ / "aug_empty" / "augmentations.jsonl"), "");
}

TEST_F(CliTest, ExitCodes) {
    EXPECT_EQ(run("").code, 2);
    EXPECT_EQ(run("train --data data --out x").code, 2);
    EXPECT_EQ(run("evaluate --model run --data data --split holdout --out x").code, 2);

    write_text_file(root_ / "bad_cfg.txt", "d = 16\nunknown_key = 1\n");
    EXPECT_EQ(run("train --config bad_cfg.txt --data data --out x").code, 3);

    write_text_file(root_ / "bad.jsonl", "{not json\n");
    EXPECT_EQ(run("prepare --transcripts bad.jsonl --embeddings corpus/embeddings.memb --topics corpus/topics.tsv "
                  "--out x")
                  .code,
              4);

    write_text_file(root_ / "wrong_d.txt", "d = 32\nmax_sentences = 6\nheads = 2\ntop_queries = 3\n");
    EXPECT_EQ(run("train --config wrong_d.txt --data data --out x").code, 5);

    fs::copy(root_ / "data", root_ / "data_tampered", fs::copy_options::recursive);
    {
        std::ofstream f(root_ / "data_tampered" / "train.jsonl", std::ios::app);
        f << "\n";
    }
    EXPECT_EQ(run("train --config cfg.txt --data data_tampered --out x").code, 8);
}

}  // namespace
}  // namespace mtca
