#pragma once

#include "bsdgan/adversarial.hpp"
#include "bsdgan/autoencoder.hpp"
#include "bsdgan/balancer.hpp"
#include "bsdgan/benchmark.hpp"
#include "bsdgan/fid.hpp"
#include "bsdgan/network.hpp"
#include "bsdgan/toy.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace bsdgan {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int failure = 1;
inline constexpr int config = 2;
inline constexpr int missing_artifact = 3;
inline constexpr int training = 4;
} // namespace exit_code

/// Maps an exception thrown by a stage to the process exit code.
int exit_code_for(const std::exception& e);

enum class DataKind { wisdm, unimib, toy };

struct PipelineConfig {
    std::uint64_t seed = 0;
    std::string out_dir = "run";

    DataKind data_kind = DataKind::toy;
    std::string data_path;
    int window_length = 20;
    int window_stride = 20;
    std::array<double, 3> split_fractions{0.8, 0.1, 0.1};

    ToyConfig toy;
    ArchitectureDescriptor model;
    PretrainConfig pretrain;
    TrainConfig train;
    BalanceConfig balance;

    bool fid_verify = true;
    FidProtocolConfig fid;

    std::vector<ModelKind> benchmark_models = all_models();
    int benchmark_repeats = 1;
    ClassifierOptions classifier;

    /// Throws ConfigError on any out-of-range value.
    void validate() const;
    /// Sorted `[section]` / `key = value` text of every effective setting.
    std::string canonical() const;
    std::string hash() const;

    /// Seeds derived from the master seed.
    std::uint64_t split_seed() const { return seed; }
    std::uint64_t pretrain_seed() const { return seed + 1; }
    std::uint64_t gan_seed() const { return seed + 2; }
    std::uint64_t balance_seed() const { return seed + 3; }
    std::uint64_t fid_seed() const { return seed + 4; }
    std::vector<std::uint64_t> benchmark_seeds() const;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

/// Process environment.
std::optional<std::string> process_env(const std::string& name);

/**
 * Reads an INI document over the defaults. Unknown sections or keys are
 * rejected; afterwards every known key can be overridden by an environment
 * variable BSDGAN_<SECTION>_<KEY>.
 */
PipelineConfig parse_config(const std::string& ini_text, const EnvLookup& env = process_env);
PipelineConfig load_config(const std::filesystem::path& path, const EnvLookup& env = process_env);

/// Every recognised `section.key`.
std::vector<std::string> config_keys();

// Run manifests ----------------------------------------------------------------------------

struct ArtifactHash {
    std::string path;
    std::string sha256;
};

struct RunManifest {
    std::string stage;
    std::string status = "ok";
    std::string config_hash;
    std::string config_text;
    std::uint64_t seed = 0;
    std::vector<ArtifactHash> inputs;
    std::vector<ArtifactHash> outputs;
    double wall_seconds = 0;
    nlohmann::json summary;
};

inline constexpr const char* manifest_file = "manifest.json";

nlohmann::json to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);

/// Exclusive lock on an output directory, released on destruction.
class DirectoryLock {
public:
    explicit DirectoryLock(const std::filesystem::path& dir);
    ~DirectoryLock();
    DirectoryLock(const DirectoryLock&) = delete;
    DirectoryLock& operator=(const DirectoryLock&) = delete;

private:
    std::filesystem::path path_;
};

class Pipeline {
public:
    static inline const std::vector<std::string> stages{"prepare",      "pretrain",  "train", "balance",
                                                        "evaluate-fid", "benchmark", "report"};

    Pipeline(PipelineConfig config, std::ostream& log);

    const PipelineConfig& config() const { return config_; }
    std::filesystem::path out() const { return config_.out_dir; }
    std::filesystem::path stage_dir(const std::string& stage) const { return out() / stage; }

    void prepare();
    /// Writes the built-in waveform dataset as the prepare stage's output.
    void toy_data();
    void pretrain();
    void train(bool resume);
    void balance();
    void evaluate_fid();
    void benchmark();
    void report();

    /// Runs a stage by command name.
    void run(const std::string& command, bool resume = false);

    /// Loads a stage manifest after checking every listed output against its hash.
    RunManifest verified_manifest(const std::string& stage) const;

private:
    void publish_dataset(const DatasetContainer& container, const Warnings& warnings);

    PipelineConfig config_;
    std::ostream& log_;
};

} // namespace bsdgan
