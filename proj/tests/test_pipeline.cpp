#include "test_util.hpp"

#include "bsdgan/errors.hpp"
#include "bsdgan/io.hpp"
#include "bsdgan/pipeline.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <sys/wait.h>

using namespace bsdgan;
using namespace testing_util;
namespace fs = std::filesystem;

namespace {

const std::string mini_ini = R"([toy]
length = 16
train_counts = 6,12,8
val_per_class = 4
test_per_class = 4
[model]
conv_filters = 4,6
latent_dim = 4
label_embedding_dim = 3
fusion_width = 8
[pretrain]
epochs = 2
batch_size = 8
[train]
epochs = 2
batch_size = 8
[balance]
gen_batch = 4
[benchmark]
models = DT,KNN
)";

EnvLookup no_env()
{
    return [](const std::string&) { return std::optional<std::string>{}; };
}

PipelineConfig mini_config(const fs::path& out)
{
    PipelineConfig c = parse_config(mini_ini, no_env());
    c.out_dir = out.string();
    c.seed = 3;
    return c;
}

void run_all(const PipelineConfig& config)
{
    std::ostringstream log;
    Pipeline p(config, log);
    for (const auto& s : Pipeline::stages)
        p.run(s);
}

/// Output hashes of every stage, keyed by path.
std::map<std::string, std::string> output_hashes(const PipelineConfig& config)
{
    std::ostringstream log;
    Pipeline p(config, log);
    std::map<std::string, std::string> out;
    for (const auto& s : Pipeline::stages)
        for (const auto& h : p.verified_manifest(s).outputs)
            out[h.path] = h.sha256;
    return out;
}

int run_cli(const std::string& args)
{
    const std::string cmd = std::string(BSDGAN_CLI) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

// Config ------------------------------------------------------------------------------------

TEST(Config, DefaultsValidateAndEveryKeyIsEchoed)
{
    const PipelineConfig c = parse_config("", no_env());
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.train.epochs, 100);
    EXPECT_EQ(c.model.latent_dim, 100);
    EXPECT_EQ(c.balance.gen_batch, 128);
    const std::string text = c.canonical();
    for (const auto& key : config_keys()) {
        const auto dot = key.find('.');
        EXPECT_NE(text.find("[" + key.substr(0, dot) + "]"), std::string::npos) << key;
        EXPECT_NE(text.find("\n" + key.substr(dot + 1) + " = "), std::string::npos) << key;
    }
}

TEST(Config, CanonicalTextRoundTrips)
{
    const PipelineConfig c = mini_config("/tmp/x");
    const PipelineConfig back = parse_config(c.canonical(), no_env());
    EXPECT_EQ(back.canonical(), c.canonical());
    EXPECT_EQ(back.hash(), c.hash());
    PipelineConfig changed = c;
    changed.train.lambda_gp = 5;
    EXPECT_NE(changed.hash(), c.hash());
}

TEST(Config, UnknownOrMalformedEntriesAreRejected)
{
    EXPECT_THROW(parse_config("[train]\nepoch = 3\n", no_env()), ConfigError);
    EXPECT_THROW(parse_config("[nonsense]\nx = 1\n", no_env()), ConfigError);
    EXPECT_THROW(parse_config("epochs = 3\n", no_env()), ConfigError);
    EXPECT_THROW(parse_config("[train]\nepochs = three\n", no_env()), ConfigError);
    EXPECT_THROW(parse_config("[train]\nbalanced_real_batches = maybe\n", no_env()), ConfigError);
    EXPECT_THROW(parse_config("[benchmark]\nmodels = DT,SVM\n", no_env()), ConfigError);
    EXPECT_THROW(parse_config("[data]\nkind = mnist\n", no_env()), ConfigError);
    EXPECT_THROW(parse_config("[toy]\ntrain_counts = 1,2\n", no_env()), ConfigError);
}

TEST(Config, OutOfRangeValuesAreRejectedBeforeAnyStage)
{
    auto rejected = [](const std::string& ini) {
        const PipelineConfig c = parse_config(ini, no_env());
        EXPECT_THROW(c.validate(), ConfigError) << ini;
        std::ostringstream log;
        EXPECT_THROW(Pipeline(c, log), ConfigError) << ini;
    };
    rejected("[train]\nbatch_size = 1\n");
    rejected("[train]\nlambda_gp = -1\n");
    rejected("[balance]\ngen_batch = 0\n");
    rejected("[data]\ntrain_fraction = 0.9\n");
    rejected("[data]\nkind = wisdm\n");
    rejected("[pretrain]\nepochs = -1\n");
    EXPECT_THROW(load_config("/nonexistent/bsdgan.ini", no_env()), ConfigError);
    EXPECT_THROW(parse_config("[train]\nepochs = 1\n[train]\nepochs = 2\n", no_env()), ConfigError);
}

TEST(Config, TypedValuesParse)
{
    const PipelineConfig c = parse_config(
        "[train]\nbalanced_real_batches = true\ncritic_steps = 3\n[benchmark]\nmodels = cnn-lstm,KNN\n"
        "dt_depths = 4,none\n[model]\nconv_filters = 8,16\nconv_kernel = 3\n",
        no_env());
    EXPECT_TRUE(c.train.balanced_real_batches);
    EXPECT_EQ(c.train.critic_steps, 3);
    EXPECT_EQ(c.benchmark_models, (std::vector<ModelKind>{ModelKind::cnn_lstm, ModelKind::knn}));
    EXPECT_EQ(c.classifier.dt_depths, (std::vector<int>{4, 0}));
    EXPECT_EQ(c.model.conv_blocks, (std::vector<ConvBlock>{{8, 3, 2}, {16, 3, 2}}));
}

TEST(Config, EnvironmentOverridesFile)
{
    std::map<std::string, std::string> env{{"BSDGAN_TRAIN_EPOCHS", "7"}, {"BSDGAN_RUN_SEED", "11"}};
    auto lookup = [&env](const std::string& k) -> std::optional<std::string> {
        const auto it = env.find(k);
        return it == env.end() ? std::nullopt : std::optional<std::string>(it->second);
    };
    const PipelineConfig c = parse_config("[train]\nepochs = 3\n", lookup);
    EXPECT_EQ(c.train.epochs, 7);
    EXPECT_EQ(c.seed, 11u);
    EXPECT_EQ(c.gan_seed(), 13u);
    env["BSDGAN_TRAIN_EPOCHS"] = "lots";
    EXPECT_THROW(parse_config("", lookup), ConfigError);
}

TEST(Config, SeedsDeriveFromMasterSeed)
{
    PipelineConfig c;
    c.seed = 10;
    EXPECT_EQ(c.split_seed(), 10u);
    EXPECT_EQ(c.pretrain_seed(), 11u);
    EXPECT_EQ(c.gan_seed(), 12u);
    EXPECT_EQ(c.balance_seed(), 13u);
    EXPECT_EQ(c.fid_seed(), 14u);
}

TEST(ExitCodes, MapErrorKinds)
{
    EXPECT_EQ(exit_code_for(ConfigError("x")), exit_code::config);
    EXPECT_EQ(exit_code_for(DescriptorError("x")), exit_code::config);
    EXPECT_EQ(exit_code_for(MissingArtifactError("x")), exit_code::missing_artifact);
    EXPECT_EQ(exit_code_for(TrainingError("x")), exit_code::training);
    EXPECT_EQ(exit_code_for(FormatError("x")), exit_code::failure);
    EXPECT_EQ(exit_code_for(std::runtime_error("x")), exit_code::failure);
}

// Stages ------------------------------------------------------------------------------------

TEST(Pipeline, FullMiniRunIsDeterministic)
{
    TempDir tmp;
    const PipelineConfig c = mini_config(tmp.path / "run");
    run_all(c);
    for (const char* f : {"prepare/dataset.json", "pretrain/encoder.f32", "pretrain/prior.json", "train/generator.f32",
                          "train/loss_curve.tsv", "balance/dataset.json", "evaluate-fid/fid_report.json",
                          "benchmark/benchmark_report.json", "report/report.md"})
        EXPECT_TRUE(fs::exists(tmp.path / "run" / f)) << f;
    EXPECT_FALSE(fs::exists(tmp.path / "run" / ".lock"));
    const auto first = output_hashes(c);
    EXPECT_GT(first.size(), 20u);

    // Same config and seed into the same directory: identical artifacts.
    fs::rename(tmp.path / "run", tmp.path / "first");
    run_all(c);
    EXPECT_EQ(output_hashes(c), first);

    // The balanced container only differs from the prepared one in its train split.
    const auto prepared = load_container(tmp.path / "run" / "prepare");
    const auto balanced = load_container(tmp.path / "run" / "balance");
    EXPECT_EQ(balanced.split(Split::test).size(), prepared.split(Split::test).size());
    for (const auto& w : balanced.split(Split::test).windows)
        EXPECT_FALSE(w.synthetic);
    EXPECT_GE(balanced.split(Split::train).size(), prepared.split(Split::train).size());
}

TEST(Pipeline, StagesRefuseMissingOrTamperedInputs)
{
    TempDir tmp;
    const PipelineConfig c = mini_config(tmp.path / "run");
    std::ostringstream log;
    Pipeline p(c, log);
    EXPECT_THROW(p.run("pretrain"), MissingArtifactError);
    try {
        p.run("report");
        FAIL() << "expected MissingArtifactError";
    } catch (const MissingArtifactError& e) {
        const std::string msg = e.what();
        for (const char* s : {"prepare", "pretrain", "train", "balance", "evaluate-fid", "benchmark"})
            EXPECT_NE(msg.find(s), std::string::npos) << msg;
    }
    p.run("prepare");
    p.run("pretrain");
    EXPECT_THROW(p.run("balance"), MissingArtifactError);
    {
        std::ofstream f(tmp.path / "run" / "prepare" / "train.f32", std::ios::app | std::ios::binary);
        f << "x";
    }
    EXPECT_THROW(p.verified_manifest("prepare"), MissingArtifactError);
    EXPECT_THROW(p.run("train"), MissingArtifactError);
    EXPECT_THROW(p.run("frobnicate"), ConfigError);
}

TEST(Pipeline, ResumedTrainingMatchesUninterrupted)
{
    TempDir tmp;
    const PipelineConfig two = mini_config(tmp.path / "a");
    run_all(two);
    const std::string expected = io::sha256_file(tmp.path / "a" / "train" / "generator.f32");
    const std::string expected_d = io::sha256_file(tmp.path / "a" / "train" / "discriminator.f32");

    PipelineConfig one = mini_config(tmp.path / "b");
    one.train.epochs = 1;
    PipelineConfig two_b = mini_config(tmp.path / "b");
    std::ostringstream log;
    Pipeline first(one, log);
    first.run("prepare");
    first.run("pretrain");
    first.run("train");
    Pipeline second(two_b, log);
    second.run("train", true);
    EXPECT_EQ(io::sha256_file(tmp.path / "b" / "train" / "generator.f32"), expected);
    EXPECT_EQ(io::sha256_file(tmp.path / "b" / "train" / "discriminator.f32"), expected_d);
    EXPECT_EQ(second.verified_manifest("train").summary.at("resumed"), true);
    EXPECT_EQ(second.verified_manifest("train").summary.at("epochs"), 2);
}

TEST(Pipeline, BalancingABalancedDatasetIsANoOp)
{
    TempDir tmp;
    PipelineConfig c = mini_config(tmp.path / "run");
    c.toy.train_counts = {8, 8, 8};
    std::ostringstream log;
    Pipeline p(c, log);
    for (const char* s : {"prepare", "pretrain", "train", "balance"})
        p.run(s);
    const auto prepared = load_container(tmp.path / "run" / "prepare");
    const auto balanced = load_container(tmp.path / "run" / "balance");
    const auto& a = prepared.split(Split::train);
    const auto& b = balanced.split(Split::train);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        EXPECT_EQ(a.windows[i].values, b.windows[i].values);
}

TEST(Pipeline, ConcurrentRunsOnOneDirectoryAreRejected)
{
    TempDir tmp;
    const PipelineConfig c = mini_config(tmp.path / "run");
    {
        DirectoryLock held(c.out_dir);
        EXPECT_THROW(DirectoryLock(c.out_dir), Error);
        std::ostringstream log;
        Pipeline p(c, log);
        EXPECT_THROW(p.run("prepare"), Error);
    }
    std::ostringstream log;
    Pipeline p(c, log);
    EXPECT_NO_THROW(p.run("prepare"));
}

// Command line -------------------------------------------------------------------------------

TEST(Cli, ExitCodes)
{
    TempDir tmp;
    const fs::path ini = tmp.path / "mini.ini";
    {
        std::ofstream f(ini);
        f << mini_ini;
    }
    const std::string out = " --out " + (tmp.path / "run").string();
    EXPECT_EQ(run_cli("--help"), 0);
    EXPECT_EQ(run_cli(""), exit_code::config);
    EXPECT_EQ(run_cli("launch"), exit_code::config);
    EXPECT_EQ(run_cli("prepare --config " + (tmp.path / "missing.ini").string() + out), exit_code::config);
    EXPECT_EQ(run_cli("pretrain --config " + ini.string() + out), exit_code::missing_artifact);
    EXPECT_EQ(run_cli("toy-data --config " + ini.string() + out + " --seed 5"), 0);
    EXPECT_TRUE(fs::exists(tmp.path / "run" / "prepare" / "manifest.json"));
    EXPECT_EQ(manifest_from_json(nlohmann::json::parse(io::read_file(tmp.path / "run" / "prepare" / "manifest.json"))).seed,
              5u);
    {
        std::ofstream f(ini, std::ios::app);
        f << "[train]\nlambda_gp = -3\n";
    }
    EXPECT_EQ(run_cli("train --config " + ini.string() + out), exit_code::config);
}
