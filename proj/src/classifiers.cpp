#include "bsdgan/classifiers.hpp"

#include "bsdgan/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>

namespace bsdgan {

using nlohmann::json;

std::string to_string(ModelKind kind)
{
    switch (kind) {
    case ModelKind::knn: return "KNN";
    case ModelKind::rf: return "RF";
    case ModelKind::dt: return "DT";
    case ModelKind::cnn: return "CNN";
    case ModelKind::lstm: return "LSTM";
    case ModelKind::cnn_lstm: return "CNN-LSTM";
    }
    return "?";
}

ModelKind model_from_string(const std::string& name)
{
    std::string up;
    for (char ch : name)
        up += ch == '_' ? '-' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    for (auto kind : all_models())
        if (to_string(kind) == up)
            return kind;
    throw ConfigError("unknown model '" + name + "' (expected KNN, RF, DT, CNN, LSTM or CNN-LSTM)");
}

const std::vector<ModelKind>& all_models()
{
    static const std::vector<ModelKind> models{ModelKind::knn, ModelKind::rf,   ModelKind::dt,
                                               ModelKind::cnn, ModelKind::lstm, ModelKind::cnn_lstm};
    return models;
}

Matrix flatten_windows(const LabeledDataset& ds)
{
    if (ds.empty())
        return Matrix(0, 0);
    const Eigen::Index d = static_cast<Eigen::Index>(ds.channels()) * ds.length();
    Matrix out(d, static_cast<Eigen::Index>(ds.size()));
    for (std::size_t i = 0; i < ds.size(); ++i)
        out.col(static_cast<Eigen::Index>(i)) = ds.windows[i].values.reshaped();
    return out;
}

double accuracy(const std::vector<int>& truth, const std::vector<int>& predicted)
{
    if (truth.size() != predicted.size())
        throw ShapeError("accuracy: label vectors differ in length");
    if (truth.empty())
        return 0.0;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < truth.size(); ++i)
        hit += truth[i] == predicted[i];
    return static_cast<double>(hit) / static_cast<double>(truth.size());
}

namespace {

int argmax(const Eigen::Ref<const Vector>& v)
{
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i)
        if (v(i) > v(best))
            best = i;
    return static_cast<int>(best);
}

} // namespace

// K nearest neighbours ----------------------------------------------------------------

std::vector<std::vector<int>> nearest_neighbours(const Matrix& reference, const Matrix& queries, int k)
{
    if (reference.rows() != queries.rows())
        throw ShapeError("nearest_neighbours: feature dimensions differ");
    const int n = static_cast<int>(reference.cols());
    k = std::min(k, n);
    const Vector ref_norms = reference.colwise().squaredNorm().transpose();
    std::vector<std::vector<int>> out(static_cast<std::size_t>(queries.cols()));
    std::vector<int> order(static_cast<std::size_t>(n));
    constexpr Eigen::Index chunk = 64;
    for (Eigen::Index start = 0; start < queries.cols(); start += chunk) {
        const Eigen::Index m = std::min(chunk, queries.cols() - start);
        const auto q = queries.middleCols(start, m);
        Matrix dist = (-2.0 * reference.transpose() * q).colwise() + ref_norms;
        for (Eigen::Index j = 0; j < m; ++j) {
            const auto col = dist.col(j);
            std::iota(order.begin(), order.end(), 0);
            std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
                return col(a) < col(b) || (col(a) == col(b) && a < b);
            });
            out[static_cast<std::size_t>(start + j)].assign(order.begin(), order.begin() + k);
        }
    }
    return out;
}

int knn_vote(const std::vector<int>& neighbours, const std::vector<int>& labels, int k, int class_count)
{
    std::vector<int> votes(static_cast<std::size_t>(class_count), 0);
    std::vector<int> first(static_cast<std::size_t>(class_count), k);
    const int used = std::min<int>(k, static_cast<int>(neighbours.size()));
    for (int i = 0; i < used; ++i) {
        const auto c = static_cast<std::size_t>(labels[static_cast<std::size_t>(neighbours[static_cast<std::size_t>(i)])]);
        ++votes[c];
        first[c] = std::min(first[c], i);
    }
    int best = 0;
    for (int c = 1; c < class_count; ++c) {
        const auto cc = static_cast<std::size_t>(c), bb = static_cast<std::size_t>(best);
        if (votes[cc] > votes[bb] || (votes[cc] == votes[bb] && first[cc] < first[bb]))
            best = c;
    }
    return best;
}

// Trees -----------------------------------------------------------------------------------

void DecisionTree::fit(const Matrix& x, const std::vector<int>& y, int class_count, const TreeConfig& config,
                       Rng& rng, const std::vector<int>& rows)
{
    if (static_cast<std::size_t>(x.cols()) != y.size())
        throw ShapeError("DecisionTree: features and labels differ in count");
    nodes_.clear();
    class_count_ = class_count;
    config_ = config;
    depth_ = 0;
    std::vector<int> r = rows;
    if (r.empty()) {
        r.resize(y.size());
        std::iota(r.begin(), r.end(), 0);
    }
    grow(x, y, r, 0, rng);
}

int DecisionTree::grow(const Matrix& x, const std::vector<int>& y, std::vector<int>& rows, int depth, Rng& rng)
{
    depth_ = std::max(depth_, depth);
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    Vector counts = Vector::Zero(class_count_);
    for (int r : rows)
        counts(y[static_cast<std::size_t>(r)]) += 1;
    const auto n = static_cast<double>(rows.size());
    nodes_[static_cast<std::size_t>(id)].distribution = counts / n;

    const bool pure = (counts.array() > 0).count() <= 1;
    if (pure || static_cast<int>(rows.size()) < config_.min_samples_split ||
        (config_.max_depth > 0 && depth >= config_.max_depth))
        return id;

    const int d = static_cast<int>(x.rows());
    std::vector<int> features(static_cast<std::size_t>(d));
    std::iota(features.begin(), features.end(), 0);
    int tried = d;
    if (config_.max_features > 0 && config_.max_features < d) {
        tried = config_.max_features;
        for (int i = 0; i < tried; ++i) {
            std::uniform_int_distribution<int> pick(i, d - 1);
            std::swap(features[static_cast<std::size_t>(i)], features[static_cast<std::size_t>(pick(rng))]);
        }
    }

    // Maximizing sum(c_l^2)/n_l + sum(c_r^2)/n_r minimizes the weighted Gini impurity.
    const double parent_score = counts.squaredNorm() / n;
    double best_score = parent_score + 1e-12;
    int best_feature = -1;
    double best_threshold = 0;
    std::vector<std::pair<double, int>> column(rows.size());
    Vector left(class_count_), right(class_count_);
    for (int f = 0; f < tried; ++f) {
        const int feat = features[static_cast<std::size_t>(f)];
        for (std::size_t i = 0; i < rows.size(); ++i)
            column[i] = {x(feat, rows[i]), y[static_cast<std::size_t>(rows[i])]};
        std::sort(column.begin(), column.end());
        if (column.front().first == column.back().first)
            continue;
        left.setZero();
        right = counts;
        double left_sq = 0, right_sq = counts.squaredNorm();
        for (std::size_t i = 0; i + 1 < column.size(); ++i) {
            const int c = column[i].second;
            left_sq += 2 * left(c) + 1;
            right_sq -= 2 * right(c) - 1;
            left(c) += 1;
            right(c) -= 1;
            if (column[i].first == column[i + 1].first)
                continue;
            const double nl = static_cast<double>(i + 1);
            const double score = left_sq / nl + right_sq / (n - nl);
            if (score > best_score) {
                best_score = score;
                best_feature = feat;
                best_threshold = 0.5 * (column[i].first + column[i + 1].first);
            }
        }
    }
    if (best_feature < 0)
        return id;

    std::vector<int> left_rows, right_rows;
    for (int r : rows)
        (x(best_feature, r) <= best_threshold ? left_rows : right_rows).push_back(r);
    rows.clear();
    rows.shrink_to_fit();
    const int l = grow(x, y, left_rows, depth + 1, rng);
    const int rr = grow(x, y, right_rows, depth + 1, rng);
    auto& node = nodes_[static_cast<std::size_t>(id)];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.left = l;
    node.right = rr;
    return id;
}

const Vector& DecisionTree::leaf_distribution(const Eigen::Ref<const Vector>& sample) const
{
    if (nodes_.empty())
        throw Error("DecisionTree used before fit");
    std::size_t at = 0;
    while (nodes_[at].feature >= 0)
        at = static_cast<std::size_t>(sample(nodes_[at].feature) <= nodes_[at].threshold ? nodes_[at].left
                                                                                         : nodes_[at].right);
    return nodes_[at].distribution;
}

int DecisionTree::predict(const Eigen::Ref<const Vector>& sample) const { return argmax(leaf_distribution(sample)); }

void RandomForest::fit(const Matrix& x, const std::vector<int>& y, int class_count, int trees, int max_depth,
                       std::uint64_t seed)
{
    class_count_ = class_count;
    trees_.assign(static_cast<std::size_t>(trees), DecisionTree{});
    TreeConfig config;
    config.max_depth = max_depth;
    config.max_features = std::max(1, static_cast<int>(std::lround(std::sqrt(static_cast<double>(x.rows())))));
    const int n = static_cast<int>(x.cols());
    for (int t = 0; t < trees; ++t) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(t)};
        Rng rng(seq);
        std::uniform_int_distribution<int> pick(0, n - 1);
        std::vector<int> rows(static_cast<std::size_t>(n));
        for (auto& r : rows)
            r = pick(rng);
        trees_[static_cast<std::size_t>(t)].fit(x, y, class_count, config, rng, rows);
    }
}

int RandomForest::predict(const Eigen::Ref<const Vector>& sample) const
{
    Vector votes = Vector::Zero(class_count_);
    for (const auto& tree : trees_)
        votes += tree.leaf_distribution(sample);
    return argmax(votes);
}

// Deep models -------------------------------------------------------------------------------

nn::Sequential deep_stack(ModelKind kind, int channels, int length, int class_count)
{
    nn::Sequential s;
    int c = channels, l = length;
    if (kind == ModelKind::cnn || kind == ModelKind::cnn_lstm) {
        if (length < 4)
            throw ShapeError("convolutional classifiers need windows of at least 4 samples");
        s.add(nn::Conv1d{"conv", channels, 64, 3, 1, 0});
        s.add(nn::Relu{});
        s.add(nn::MaxPool1d{2});
        c = 64;
        l = (length - 2) / 2;
    }
    if (kind == ModelKind::cnn) {
        s.add(nn::Reshape{c * l, 1});
        s.add(nn::Dense{"out", c * l, class_count});
    } else if (kind == ModelKind::lstm || kind == ModelKind::cnn_lstm) {
        s.add(nn::Lstm{"lstm", c, 100});
        s.add(nn::Dense{"out", 100, class_count});
    } else {
        throw Error(to_string(kind) + " is not a deep model");
    }
    return s;
}

namespace {

class KnnClassifier : public Classifier {
public:
    explicit KnnClassifier(std::vector<int> grid) : grid_(std::move(grid)) {}

    void fit(const LabeledDataset& train, const LabeledDataset& val, std::uint64_t) override
    {
        reference_ = flatten_windows(train);
        labels_ = train.labels;
        classes_ = train.class_count();
        k_ = grid_.front();
        val_accuracy_ = -1;
        if (val.empty())
            return;
        const int kmax = *std::max_element(grid_.begin(), grid_.end());
        const auto nn = nearest_neighbours(reference_, flatten_windows(val), kmax);
        for (int k : grid_) {
            std::vector<int> pred;
            for (const auto& row : nn)
                pred.push_back(knn_vote(row, labels_, k, classes_));
            const double acc = accuracy(val.labels, pred);
            if (acc > val_accuracy_) {
                val_accuracy_ = acc;
                k_ = k;
            }
        }
    }

    std::vector<int> predict(const LabeledDataset& ds) const override
    {
        std::vector<int> pred;
        for (const auto& row : nearest_neighbours(reference_, flatten_windows(ds), k_))
            pred.push_back(knn_vote(row, labels_, k_, classes_));
        return pred;
    }

    json hyperparameters() const override { return {{"k", k_}, {"val_accuracy", val_accuracy_}}; }

private:
    std::vector<int> grid_;
    Matrix reference_;
    std::vector<int> labels_;
    int classes_ = 0;
    int k_ = 1;
    double val_accuracy_ = -1;
};

json depth_json(int depth) { return depth > 0 ? json(depth) : json("none"); }

class TreeClassifier : public Classifier {
public:
    explicit TreeClassifier(std::vector<int> depths) : depths_(std::move(depths)) {}

    void fit(const LabeledDataset& train, const LabeledDataset& val, std::uint64_t seed) override
    {
        const Matrix x = flatten_windows(train);
        const Matrix xv = flatten_windows(val);
        val_accuracy_ = -1;
        for (int depth : depths_) {
            DecisionTree tree;
            Rng rng(seed);
            tree.fit(x, train.labels, train.class_count(), TreeConfig{depth, 2, 0}, rng);
            const double acc = val.empty() ? 0.0 : accuracy(val.labels, run(tree, xv));
            if (acc > val_accuracy_) {
                val_accuracy_ = acc;
                depth_ = depth;
                tree_ = std::move(tree);
            }
        }
    }

    std::vector<int> predict(const LabeledDataset& ds) const override { return run(tree_, flatten_windows(ds)); }

    json hyperparameters() const override
    {
        return {{"max_depth", depth_json(depth_)}, {"fitted_depth", tree_.depth()}, {"val_accuracy", val_accuracy_}};
    }

private:
    static std::vector<int> run(const DecisionTree& tree, const Matrix& x)
    {
        std::vector<int> pred;
        for (Eigen::Index i = 0; i < x.cols(); ++i)
            pred.push_back(tree.predict(x.col(i)));
        return pred;
    }

    std::vector<int> depths_;
    DecisionTree tree_;
    int depth_ = 0;
    double val_accuracy_ = -1;
};

class ForestClassifier : public Classifier {
public:
    ForestClassifier(std::vector<int> trees, std::vector<int> depths) : trees_(std::move(trees)), depths_(std::move(depths))
    {
    }

    void fit(const LabeledDataset& train, const LabeledDataset& val, std::uint64_t seed) override
    {
        const Matrix x = flatten_windows(train);
        const Matrix xv = flatten_windows(val);
        val_accuracy_ = -1;
        for (int trees : trees_)
            for (int depth : depths_) {
                RandomForest forest;
                forest.fit(x, train.labels, train.class_count(), trees, depth, seed);
                const double acc = val.empty() ? 0.0 : accuracy(val.labels, run(forest, xv));
                if (acc > val_accuracy_) {
                    val_accuracy_ = acc;
                    n_trees_ = trees;
                    depth_ = depth;
                    forest_ = std::move(forest);
                }
            }
    }

    std::vector<int> predict(const LabeledDataset& ds) const override { return run(forest_, flatten_windows(ds)); }

    json hyperparameters() const override
    {
        return {{"trees", n_trees_}, {"max_depth", depth_json(depth_)}, {"val_accuracy", val_accuracy_}};
    }

private:
    static std::vector<int> run(const RandomForest& forest, const Matrix& x)
    {
        std::vector<int> pred;
        for (Eigen::Index i = 0; i < x.cols(); ++i)
            pred.push_back(forest.predict(x.col(i)));
        return pred;
    }

    std::vector<int> trees_, depths_;
    RandomForest forest_;
    int n_trees_ = 0, depth_ = 0;
    double val_accuracy_ = -1;
};

class DeepClassifier : public Classifier {
public:
    DeepClassifier(ModelKind kind, DeepConfig config) : kind_(kind), config_(config) {}

    void fit(const LabeledDataset& train, const LabeledDataset& val, std::uint64_t seed) override
    {
        if (train.empty())
            throw Error("cannot fit a classifier on an empty dataset");
        stack_ = deep_stack(kind_, train.channels(), train.length(), train.class_count());
        seen_.assign(static_cast<std::size_t>(train.class_count()), false);
        for (int y : train.labels)
            seen_[static_cast<std::size_t>(y)] = true;
        Rng rng(seed);
        ParamSet params;
        stack_.init(params, rng);
        params_ = params;
        Adam opt(config_.adam);
        std::vector<std::size_t> order(train.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        best_val_ = -1;
        best_loss_ = std::numeric_limits<double>::infinity();
        best_epoch_ = 0;
        int since_best = 0;
        for (int epoch = 1; epoch <= config_.epochs; ++epoch) {
            std::shuffle(order.begin(), order.end(), rng);
            for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config_.batch_size)) {
                const std::vector<std::size_t> idx(
                    order.begin() + static_cast<std::ptrdiff_t>(start),
                    order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + config_.batch_size)));
                nn::Tape tape;
                const Tensor logits = stack_.forward(params, train.to_tensor(idx), &tape);
                Matrix d = nn::softmax(logits.data);
                for (std::size_t i = 0; i < idx.size(); ++i)
                    d(train.labels[idx[i]], static_cast<Eigen::Index>(i)) -= 1.0;
                d /= static_cast<double>(idx.size());
                GradSet grads;
                stack_.backward(params, tape, Tensor(d, 1), &grads);
                if (!all_finite(grads))
                    throw TrainingError(to_string(kind_) + " diverged in epoch " + std::to_string(epoch));
                opt.step(params, grads);
                if (!all_finite(params))
                    throw TrainingError(to_string(kind_) + " diverged in epoch " + std::to_string(epoch));
            }
            epochs_run_ = epoch;
            if (val.empty()) {
                params_ = params;
                best_epoch_ = epoch;
                continue;
            }
            // Val loss breaks accuracy ties, so a flat start (majority-only predictions) does not exhaust patience.
            const auto [loss, acc] = evaluate(params, val);
            if (acc > best_val_ || (acc == best_val_ && loss < best_loss_)) {
                best_loss_ = loss;
                best_val_ = acc;
                best_epoch_ = epoch;
                params_ = params;
                since_best = 0;
            } else if (config_.patience > 0 && ++since_best >= config_.patience) {
                break;
            }
        }
    }

    std::vector<int> predict(const LabeledDataset& ds) const override { return run(params_, ds); }

    json hyperparameters() const override
    {
        return {{"learning_rate", config_.adam.learning_rate},
                {"batch_size", config_.batch_size},
                {"epochs_run", epochs_run_},
                {"best_epoch", best_epoch_},
                {"val_accuracy", best_val_},
                {"val_loss", best_loss_}};
    }

private:
    /// Mean cross-entropy and accuracy.
    std::pair<double, double> evaluate(const ParamSet& params, const LabeledDataset& ds) const
    {
        double loss = 0;
        std::size_t correct = 0;
        constexpr std::size_t chunk = 512;
        for (std::size_t start = 0; start < ds.size(); start += chunk) {
            std::vector<std::size_t> idx(std::min(chunk, ds.size() - start));
            std::iota(idx.begin(), idx.end(), start);
            const Matrix p = nn::softmax(stack_.forward(params, ds.to_tensor(idx)).data);
            for (Eigen::Index i = 0; i < p.cols(); ++i) {
                const int y = ds.labels[start + static_cast<std::size_t>(i)];
                loss -= std::log(std::max(p(y, i), 1e-12));
                correct += seen_argmax(p.col(i)) == y;
            }
        }
        const auto n = static_cast<double>(ds.size());
        return {loss / n, static_cast<double>(correct) / n};
    }

    std::vector<int> run(const ParamSet& params, const LabeledDataset& ds) const
    {
        std::vector<int> pred;
        constexpr std::size_t chunk = 512;
        for (std::size_t start = 0; start < ds.size(); start += chunk) {
            std::vector<std::size_t> idx(std::min(chunk, ds.size() - start));
            std::iota(idx.begin(), idx.end(), start);
            const Tensor logits = stack_.forward(params, ds.to_tensor(idx));
            for (Eigen::Index i = 0; i < logits.data.cols(); ++i)
                pred.push_back(seen_argmax(logits.data.col(i)));
        }
        return pred;
    }

    /// Classes without training windows are never predicted.
    int seen_argmax(const Eigen::Ref<const Vector>& scores) const
    {
        int best = -1;
        for (int c = 0; c < static_cast<int>(scores.size()); ++c)
            if (seen_[static_cast<std::size_t>(c)] && (best < 0 || scores(c) > scores(best)))
                best = c;
        return best;
    }

    ModelKind kind_;
    DeepConfig config_;
    std::vector<bool> seen_;
    nn::Sequential stack_;
    ParamSet params_;
    int epochs_run_ = 0, best_epoch_ = 0;
    double best_val_ = -1;
    double best_loss_ = 0;
};

} // namespace

std::unique_ptr<Classifier> make_classifier(ModelKind kind, const ClassifierOptions& options)
{
    switch (kind) {
    case ModelKind::knn: return std::make_unique<KnnClassifier>(options.knn_k);
    case ModelKind::dt: return std::make_unique<TreeClassifier>(options.dt_depths);
    case ModelKind::rf: return std::make_unique<ForestClassifier>(options.rf_trees, options.rf_depths);
    default: return std::make_unique<DeepClassifier>(kind, options.deep);
    }
}

} // namespace bsdgan
