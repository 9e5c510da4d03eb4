#pragma once

#include "bsdgan/autoencoder.hpp"
#include "bsdgan/dataset.hpp"
#include "bsdgan/network.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace bsdgan {

/// Fraction of negative eigen-mass clamped in the matrix square root above which fid() warns.
inline constexpr double fid_clamp_warning_fraction = 0.01;

/**
 * Frechet distance between Gaussian fits of two feature sets, one sample per
 * column: |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)). Covariances
 * use 1 / (n - 1). The trace of the square root is taken from the
 * eigenvalues of S_a^(1/2) S_b S_a^(1/2), negatives clamped to 0.
 */
double fid(const Matrix& features_a, const Matrix& features_b, Warnings* warnings = nullptr);

/// Frozen encoder trunk followed by global average pooling over the length axis.
class FeatureExtractor {
public:
    explicit FeatureExtractor(NetworkParams encoder);

    int dim() const;
    /// [dim, N] features of a batch.
    Matrix features(const Tensor& batch) const;
    Matrix features(const LabeledDataset& ds, const std::vector<std::size_t>& indices = {}) const;

private:
    NetworkParams encoder_;
    nn::Sequential trunk_;
};

struct ClassFid {
    int label = 0;
    std::string name;
    std::optional<double> generated;
    std::optional<double> best;
    std::optional<double> worst;
    std::int64_t samples = 0;
    std::int64_t val_samples = 0;
    std::string note;

    bool between() const;
};

struct FidReport {
    std::vector<ClassFid> classes;
    /// Over all classes pooled.
    double best = 0;
    double worst = 0;
    int feature_dim = 0;
    Warnings warnings;
};

struct FidProtocolConfig {
    /// Cap every per-class set (generated, train, reconstructions) at the class's train count.
    bool match_train_counts = true;
};

/**
 * Per class c with n_c train windows: FID of generated vs val-real, with the
 * best reference train-real vs val-real and the worst reference the
 * autoencoder's reconstructions of train vs val-real. Classes absent from
 * val are skipped with a note. All inputs are in normalized space.
 */
FidReport fid_protocol(const LabeledDataset& generated, const LabeledDataset& train, const LabeledDataset& val,
                       const Autoencoder& autoencoder, const FeatureExtractor& extractor,
                       const FidProtocolConfig& config = {});

nlohmann::json to_json(const FidReport& report);
std::string fid_table(const FidReport& report);

} // namespace bsdgan
