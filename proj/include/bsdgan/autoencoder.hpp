#pragma once

#include "bsdgan/dataset.hpp"
#include "bsdgan/network.hpp"
#include "bsdgan/optim.hpp"

#include <filesystem>
#include <vector>

namespace bsdgan {

inline constexpr double prior_std_floor = 1e-4;

/// Per-class diagonal Gaussian over the latent space: rows are classes.
struct LatentPrior {
    Matrix means;
    Matrix stds;

    int class_count() const { return static_cast<int>(means.rows()); }
    int latent_dim() const { return static_cast<int>(means.cols()); }
};

struct PretrainConfig {
    AdamConfig adam{2e-4, 0.5, 0.9, 1e-7};
    int epochs = 50;
    int batch_size = 32;
    /// Epochs without val improvement before stopping; 0 disables early stopping.
    int patience = 10;
    std::uint64_t seed = 0;
};

struct PretrainReport {
    double initial_train_mae = 0;
    double initial_val_mae = 0;
    std::vector<double> train_mae;
    std::vector<double> val_mae;
    int epochs_run = 0;
    int best_epoch = 0;
    bool diverged = false;
    std::uint64_t seed = 0;
};

struct PretrainResult {
    Autoencoder autoencoder;
    PretrainReport report;
};

/// Mean over all elements of |x - x_hat|.
double mae_loss(const Tensor& x, const Tensor& x_hat);

/// Mean absolute reconstruction error of the autoencoder over a whole dataset.
double reconstruction_mae(const Autoencoder& ae, const LabeledDataset& ds);

Tensor reconstruct(const Autoencoder& ae, const Tensor& x);

/**
 * Trains encoder and decoder jointly on every class of `train` (already
 * normalized) and returns the parameters of the epoch with the lowest
 * validation MAE. Passing a dataset tagged as the test split is an error.
 */
PretrainResult train_autoencoder(const LabeledDataset& train, const LabeledDataset& val,
                                 const ArchitectureDescriptor& desc, const PretrainConfig& config);

/// Throws PriorError naming any class without training windows.
LatentPrior fit_latent_prior(const NetworkParams& encoder, const LabeledDataset& train);

std::vector<std::filesystem::path> save_prior(const LatentPrior& prior, const std::filesystem::path& dir,
                                              const std::string& stem = "prior");
LatentPrior load_prior(const std::filesystem::path& dir, const std::string& stem = "prior");

} // namespace bsdgan
