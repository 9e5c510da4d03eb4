#pragma once

#include "bsdgan/autoencoder.hpp"
#include "bsdgan/errors.hpp"
#include "bsdgan/dataset.hpp"
#include "bsdgan/network.hpp"
#include "bsdgan/optim.hpp"

#include <cmath>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace bsdgan {

/// Log arguments are clamped to [log_clamp, 1 - log_clamp].
inline constexpr double log_clamp = 1e-7;

inline double clamp_probability(double p) { return std::min(std::max(p, log_clamp), 1.0 - log_clamp); }

struct TrainConfig {
    AdamConfig adam{2e-4, 0.5, 0.9, 1e-7};
    int batch_size = 128;
    int epochs = 100;
    double lambda_gp = 10.0;
    int critic_steps = 1;
    std::uint64_t seed = 0;
    /// Step along the unit input-gradient direction used for the penalty's parameter gradient.
    double penalty_fd_step = 1e-4;
    /// Draw real batches uniformly over classes instead of from the empirical class mix.
    bool balanced_real_batches = false;

    /// Throws ConfigError when a field is out of range.
    void validate() const;
};

/**
 * Terms of the conditional adversarial value with wrong-label and gradient
 * penalty terms. The three log terms are expectations of
 * log D(x_r|y_r), log(1 - D(G(z|y_g)|y_g)) and log(1 - D(x_r|y_wrong)).
 * total_d is the discriminator's loss, the negated value:
 * -(real + fake + wrong) + lambda * gp. total_g is the non-saturating
 * generator loss -E[log D(G(z|y_g)|y_g)].
 */
struct LossBreakdown {
    double real_term = 0;
    double fake_term = 0;
    double wrong_label_term = 0;
    double gp_term = 0;
    double total_d = 0;
    double total_g = 0;
};

struct LossRecord {
    std::int64_t step = 0;
    int epoch = 0;
    /// Surrogate loss actually minimized by the discriminator step.
    double d_loss = 0;
    double g_loss = 0;
    LossBreakdown terms;
};

struct GanTrainState {
    NetworkParams generator;
    NetworkParams discriminator;
    Adam generator_opt;
    Adam discriminator_opt;
    std::int64_t step = 0;
    int epoch = 0;
    std::vector<LossRecord> history;
    Rng rng;
};

// Label sampling ------------------------------------------------------------------

/// Uniform over all classes (the balanced label set).
std::vector<int> sample_generation_labels(int count, int class_count, Rng& rng);
/// Uniform over the classes different from each real label.
std::vector<int> sample_wrong_labels(std::span<const int> real_labels, int class_count, Rng& rng);
std::vector<double> sample_alpha(int count, Rng& rng);
Matrix sample_noise(int latent_dim, int count, Rng& rng);

// Gradient penalty -----------------------------------------------------------------

/// x_hat_n = alpha_n * real_n + (1 - alpha_n) * fake_n.
Tensor interpolate(const Tensor& real, const Tensor& fake, std::span<const double> alpha);

struct PenaltyTerms {
    double penalty = 0;
    std::vector<double> grad_norms;
    Tensor interpolates;
    Tensor input_grads;
};

/**
 * Mean over the batch of (||grad_x D(x_hat | y)||_2 - 1)^2 for any critic.
 * `input_gradient(x, labels)` must return the per-sample gradient of the
 * scalar critic output with respect to its input.
 */
template <class InputGradient>
PenaltyTerms gradient_penalty_terms(InputGradient&& input_gradient, const Tensor& real, const Tensor& fake,
                                    std::span<const int> labels, std::span<const double> alpha)
{
    PenaltyTerms out;
    out.interpolates = interpolate(real, fake, alpha);
    out.input_grads = input_gradient(out.interpolates, labels);
    const int n = out.interpolates.batch();
    out.grad_norms.resize(static_cast<std::size_t>(n));
    double sum = 0;
    for (int i = 0; i < n; ++i) {
        const double norm = out.input_grads.sample(i).norm();
        if (!std::isfinite(norm))
            throw TrainingError("gradient penalty: non-finite input gradient");
        out.grad_norms[static_cast<std::size_t>(i)] = norm;
        sum += (norm - 1.0) * (norm - 1.0);
    }
    out.penalty = n > 0 ? sum / n : 0.0;
    return out;
}

/// Analytic per-sample gradient of D(x | y) (softmax probability at index y) with respect to x.
Tensor discriminator_input_gradient(const NetworkParams& discriminator, const Tensor& x, std::span<const int> labels);

double gradient_penalty(const NetworkParams& discriminator, const Tensor& real, const Tensor& fake,
                        std::span<const int> real_labels, std::span<const double> alpha);

// Objective -----------------------------------------------------------------------

struct AdversarialBatch {
    Tensor real;
    std::vector<int> real_labels;
    Matrix noise;
    std::vector<int> generation_labels;
    std::vector<int> wrong_labels;
    std::vector<double> alpha;
};

/// Literal value terms on frozen parameters.
LossBreakdown bsdgan_value(const NetworkParams& discriminator, const NetworkParams& generator,
                           const AdversarialBatch& batch, double lambda_gp);

struct DiscriminatorObjective {
    /// -log D(x_r|y_r) - log D_fake(x_g|y_g) - log(1 - D(x_r|y_wrong)) + lambda * gp, batch means.
    double loss = 0;
    LossBreakdown terms;
    GradSet grads;
};

/**
 * Discriminator loss on a batch whose generated half `fake` is held fixed.
 * The penalty's parameter gradient uses the directional identity
 * grad_theta ||g|| = grad_theta (v . grad_x D) with v = g / ||g|| held fixed,
 * evaluated by a central difference of D along v.
 */
DiscriminatorObjective discriminator_objective(const NetworkParams& discriminator, const AdversarialBatch& batch,
                                               const Tensor& fake, double lambda_gp, double fd_step, bool with_grads);

struct GeneratorObjective {
    double loss = 0;
    GradSet grads;
};

GeneratorObjective generator_objective(const NetworkParams& generator, const NetworkParams& discriminator,
                                       const Matrix& noise, std::span<const int> labels, bool with_grads);

// Training --------------------------------------------------------------------------

/// One Adam step on the discriminator; the generator is untouched.
LossRecord discriminator_step(GanTrainState& state, const Tensor& real, std::span<const int> real_labels,
                              const TrainConfig& config);

/// One Adam step on the generator with fresh noise and balanced labels; the discriminator is untouched.
double generator_step(GanTrainState& state, const TrainConfig& config);

/// Generator from the decoder and prior, discriminator from the encoder trunk; float32-rounded like a checkpoint.
GanTrainState init_gan_state(const NetworkParams& encoder, const NetworkParams& decoder, const LatentPrior& prior,
                             const TrainConfig& config);

using EpochCallback = std::function<void(const GanTrainState&)>;

/**
 * Runs epochs state.epoch + 1 .. config.epochs over `train` (normalized).
 * Each iteration draws the next real batch (shuffled per epoch from the
 * state's RNG); a generator step follows every `critic_steps` discriminator
 * steps. Throws TrainingError on a non-finite loss.
 *
 * Parameters and Adam moments are rounded to float32, the checkpoint
 * precision, after every epoch, so resuming from a checkpoint continues
 * bit-identically.
 */
void run_gan_epochs(GanTrainState& state, const LabeledDataset& train, const TrainConfig& config,
                    const EpochCallback& on_epoch_end = {});

GanTrainState train_gan(const LabeledDataset& train, const NetworkParams& encoder, const NetworkParams& decoder,
                        const LatentPrior& prior, const TrainConfig& config, const EpochCallback& on_epoch_end = {});

// Persistence -----------------------------------------------------------------------

std::string loss_curve_table(const std::vector<LossRecord>& history);

std::vector<std::filesystem::path> save_gan_state(const GanTrainState& state, const std::filesystem::path& dir);
GanTrainState load_gan_state(const std::filesystem::path& dir, const AdamConfig& adam);

} // namespace bsdgan
