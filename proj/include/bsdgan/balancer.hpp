#pragma once

#include "bsdgan/container.hpp"
#include "bsdgan/dataset.hpp"
#include "bsdgan/network.hpp"

#include <json.hpp>

#include <functional>
#include <string>
#include <vector>

namespace bsdgan {

/// Synthetic windows are numbered from here so they never collide with real ids of any split.
inline constexpr std::uint64_t synthetic_id_base = std::uint64_t{1} << 62;

/// True iff `probs` (K + 1 entries) has a strict maximum at `target`. Ties and FAKE reject.
bool verify(const Eigen::Ref<const Vector>& probs, int target);
bool verify(const NetworkParams& discriminator, const Matrix& window, int target);

/// Produces `count` windows of class `label` as a [channels, count * length] batch.
using WindowGenerator = std::function<Tensor(int label, int count, Rng& rng)>;
/// Accept flag per sample of `batch`, all claimed to be of class `label`.
using WindowVerifier = std::function<std::vector<bool>(const Tensor& batch, int label)>;

WindowGenerator network_generator(const NetworkParams& generator);
WindowVerifier network_verifier(const NetworkParams& discriminator);

struct VerifiedBatch {
    std::vector<Matrix> windows;
    std::int64_t attempts = 0;
};

/// Generates batches of up to `gen_batch` until `wanted` windows pass or `budget` samples have been drawn.
VerifiedBatch generate_verified(const WindowGenerator& generate, const WindowVerifier& verify, int label,
                                std::int64_t wanted, std::int64_t budget, int gen_batch, Rng& rng);

/// Per-class stream derived from a master seed.
Rng class_rng(std::uint64_t seed, int label);

struct BalanceConfig {
    int gen_batch = 128;
    /// Per-class budget of generated samples; 0 means attempts_per_deficit * deficit.
    std::int64_t max_attempts_per_class = 0;
    int attempts_per_deficit = 50;
    double acceptance_floor = 0.01;
    std::uint64_t seed = 0;

    void validate() const;
};

struct ClassBalance {
    int label = 0;
    std::string name;
    std::int64_t initial = 0;
    std::int64_t requested = 0;
    std::int64_t generated = 0;
    std::int64_t attempts = 0;
    std::int64_t budget = 0;
    double acceptance_rate = 0;
    bool failed = false;
    std::string note;
};

struct BalanceReport {
    std::int64_t target = 0;
    int gen_batch = 0;
    std::vector<ClassBalance> classes;
    ClassHistogram final_histogram;
    double wall_seconds = 0;

    bool success() const;
    std::vector<const ClassBalance*> failures() const;
};

struct BalanceResult {
    LabeledDataset balanced;
    LabeledDataset synthetic;
    BalanceReport report;
};

/**
 * Tops every class of `real` up to the majority count with verified
 * generated windows, drawn in batches of `gen_batch`. Each class has its own
 * RNG stream derived from the seed. Rejected samples are discarded. Real
 * windows come first in the output, unchanged; synthetic windows get fresh
 * ids and synthetic = true. Refuses val and test splits.
 */
BalanceResult balance(const LabeledDataset& real, const WindowGenerator& generate, const WindowVerifier& verify,
                      const BalanceConfig& config);

BalanceResult balance(const LabeledDataset& real, const NetworkParams& generator, const NetworkParams& discriminator,
                      const BalanceConfig& config);

/// Writes `base` with its train split replaced by `balanced`.
std::vector<std::filesystem::path> export_balanced(DatasetContainer base, const LabeledDataset& balanced,
                                                   const std::filesystem::path& dir);

nlohmann::json to_json(const BalanceReport& report);
std::string balance_table(const BalanceReport& report);

} // namespace bsdgan
