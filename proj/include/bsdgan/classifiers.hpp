#pragma once

#include "bsdgan/dataset.hpp"
#include "bsdgan/layers.hpp"
#include "bsdgan/optim.hpp"

#include <json.hpp>

#include <memory>
#include <string>
#include <vector>

namespace bsdgan {

enum class ModelKind { knn, rf, dt, cnn, lstm, cnn_lstm };

std::string to_string(ModelKind kind);
/// Accepts KNN, RF, DT, CNN, LSTM, CNN-LSTM in any case.
ModelKind model_from_string(const std::string& name);
const std::vector<ModelKind>& all_models();

/// Windows flattened to one column each: [channels * length, N].
Matrix flatten_windows(const LabeledDataset& ds);

// K nearest neighbours -----------------------------------------------------------------

/// Indices of the `k` nearest reference columns per query column (Euclidean, nearest first, ties by index).
std::vector<std::vector<int>> nearest_neighbours(const Matrix& reference, const Matrix& queries, int k);

/// Majority vote over the first `k` neighbours; ties go to the class whose member appears first.
int knn_vote(const std::vector<int>& neighbours, const std::vector<int>& labels, int k, int class_count);

// Trees ---------------------------------------------------------------------------------

struct TreeConfig {
    /// 0 means unlimited.
    int max_depth = 0;
    int min_samples_split = 2;
    /// Features tried per split; 0 means all.
    int max_features = 0;
};

/// CART classifier with Gini impurity and midpoint thresholds.
class DecisionTree {
public:
    void fit(const Matrix& x, const std::vector<int>& y, int class_count, const TreeConfig& config, Rng& rng,
             const std::vector<int>& rows = {});
    /// Class distribution of the leaf reached by `sample`.
    const Vector& leaf_distribution(const Eigen::Ref<const Vector>& sample) const;
    int predict(const Eigen::Ref<const Vector>& sample) const;
    int depth() const { return depth_; }
    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        int feature = -1;
        double threshold = 0;
        int left = -1;
        int right = -1;
        Vector distribution;
    };
    int grow(const Matrix& x, const std::vector<int>& y, std::vector<int>& rows, int depth, Rng& rng);

    std::vector<Node> nodes_;
    int class_count_ = 0;
    int depth_ = 0;
    TreeConfig config_;
};

class RandomForest {
public:
    /// Bootstrap samples and sqrt(features) candidates per split.
    void fit(const Matrix& x, const std::vector<int>& y, int class_count, int trees, int max_depth,
             std::uint64_t seed);
    int predict(const Eigen::Ref<const Vector>& sample) const;

private:
    std::vector<DecisionTree> trees_;
    int class_count_ = 0;
};

// Deep models ----------------------------------------------------------------------------

struct DeepConfig {
    AdamConfig adam{1e-3, 0.9, 0.999, 1e-7};
    int epochs = 30;
    int batch_size = 64;
    /// Epochs without a val accuracy gain (val loss breaks ties) before stopping; the best epoch is kept.
    int patience = 5;
};

/// CNN: conv 64 x 3 + ReLU + max-pool 2 + dense softmax. LSTM: 100 units + dense. CNN-LSTM: the conv block feeding the LSTM.
nn::Sequential deep_stack(ModelKind kind, int channels, int length, int class_count);

// Common interface ---------------------------------------------------------------------------

struct ClassifierOptions {
    std::vector<int> knn_k{1, 3, 5, 7, 9};
    /// 0 stands for unlimited depth.
    std::vector<int> dt_depths{5, 10, 20, 0};
    std::vector<int> rf_trees{50, 100, 200};
    std::vector<int> rf_depths{10, 20, 0};
    DeepConfig deep;
};

class Classifier {
public:
    virtual ~Classifier() = default;
    /// Fits on `train`, choosing hyperparameters (or the stopping epoch) by accuracy on `val`.
    virtual void fit(const LabeledDataset& train, const LabeledDataset& val, std::uint64_t seed) = 0;
    virtual std::vector<int> predict(const LabeledDataset& ds) const = 0;
    virtual nlohmann::json hyperparameters() const = 0;
};

std::unique_ptr<Classifier> make_classifier(ModelKind kind, const ClassifierOptions& options = {});

double accuracy(const std::vector<int>& truth, const std::vector<int>& predicted);

} // namespace bsdgan
