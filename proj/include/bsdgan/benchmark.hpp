#pragma once

#include "bsdgan/classifiers.hpp"
#include "bsdgan/dataset.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace bsdgan {

/// counts[truth][predicted].
struct ConfusionMatrix {
    std::vector<std::vector<std::int64_t>> counts;

    int class_count() const { return static_cast<int>(counts.size()); }
    std::int64_t total() const;
    /// 0 for a class with no true windows.
    double recall(int label) const;
    double accuracy() const;
};

ConfusionMatrix confusion_matrix(const std::vector<int>& truth, const std::vector<int>& predicted, int class_count);

struct ModelRun {
    ModelKind model = ModelKind::dt;
    std::string variant;
    std::uint64_t seed = 0;
    ConfusionMatrix confusion;
    std::vector<double> recall;
    double accuracy = 0;
    nlohmann::json hyperparameters;
    bool failed = false;
    std::string error;
};

/// Windows handed to the evaluation step, checked for provenance.
struct PurityAudit {
    std::int64_t evaluated = 0;
    std::int64_t synthetic = 0;
    std::int64_t shared_with_train = 0;

    bool clean() const { return synthetic == 0 && shared_with_train == 0; }
};

struct BenchmarkConfig {
    std::vector<ModelKind> models{ModelKind::knn, ModelKind::rf, ModelKind::dt,
                                  ModelKind::cnn, ModelKind::lstm, ModelKind::cnn_lstm};
    std::vector<std::uint64_t> seeds{0};
    ClassifierOptions options;
};

struct BenchmarkReport {
    std::vector<std::string> class_names;
    std::vector<ModelRun> runs;
    std::map<std::string, std::int64_t> split_sizes;
    std::vector<std::uint64_t> seeds;
    PurityAudit audit;

    /// Runs of one (model, variant) pair, in seed order.
    std::vector<const ModelRun*> find(ModelKind model, const std::string& variant) const;
};

/// Throws if `eval` holds synthetic windows or windows whose id also occurs in `train`.
PurityAudit audit_purity(const LabeledDataset& train, const LabeledDataset& eval);

/// Trains every model for every seed on `train` and scores it on the real `test` split.
std::vector<ModelRun> benchmark_variant(const std::string& variant, const LabeledDataset& train,
                                        const LabeledDataset& val, const LabeledDataset& test,
                                        const BenchmarkConfig& config, PurityAudit* audit = nullptr);

/// Before/after comparison: "imbalanced" and "balanced" train variants against one test split.
BenchmarkReport benchmark(const LabeledDataset& imbalanced, const LabeledDataset& balanced, const LabeledDataset& val,
                          const LabeledDataset& test, const BenchmarkConfig& config);

double median(std::vector<double> values);

nlohmann::json to_json(const BenchmarkReport& report);
BenchmarkReport benchmark_from_json(const nlohmann::json& j);
/// Per-class recall and overall accuracy per model, one table per variant, medians over seeds.
std::string benchmark_table(const BenchmarkReport& report);

} // namespace bsdgan
