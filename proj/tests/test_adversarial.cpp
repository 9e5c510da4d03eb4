#include "test_util.hpp"

#include "bsdgan/errors.hpp"
#include "bsdgan/layers.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace bsdgan;
using namespace testing_util;

namespace {

struct Nets {
    ArchitectureDescriptor desc;
    NetworkParams generator;
    NetworkParams discriminator;
};

Nets tiny_nets(std::uint64_t seed, int classes = 3)
{
    Nets n;
    n.desc = tiny_descriptor(classes);
    const auto ae = build_autoencoder(n.desc, seed);
    n.generator = build_generator(ae.decoder, random_prior(n.desc, seed), seed);
    n.discriminator = build_discriminator(ae.encoder, classes, seed + 7);
    return n;
}

AdversarialBatch tiny_batch(const Nets& n, int size, std::uint64_t seed)
{
    Rng rng(seed);
    AdversarialBatch b;
    b.real = random_batch(n.desc, size, seed);
    b.real_labels = sample_generation_labels(size, n.desc.class_count, rng);
    b.noise = sample_noise(n.desc.latent_dim, size, rng);
    b.generation_labels = sample_generation_labels(size, n.desc.class_count, rng);
    b.wrong_labels = sample_wrong_labels(b.real_labels, n.desc.class_count, rng);
    b.alpha = sample_alpha(size, rng);
    return b;
}

NetworkParams uniform_discriminator(const Nets& n)
{
    NetworkParams d = n.discriminator;
    d.arrays.at("head.weight").values.setZero();
    d.arrays.at("head.bias").values.setZero();
    return d;
}

} // namespace

TEST(LossOracle, UniformDiscriminatorGivesHandComputedLogs)
{
    const auto n = tiny_nets(1, 2);
    const auto d = uniform_discriminator(n);
    const auto batch = tiny_batch(n, 6, 2);
    const auto t = bsdgan_value(d, n.generator, batch, 10.0);
    EXPECT_NEAR(t.real_term, std::log(1.0 / 3.0), 1e-6);
    EXPECT_NEAR(t.fake_term, std::log(2.0 / 3.0), 1e-6);
    EXPECT_NEAR(t.wrong_label_term, std::log(2.0 / 3.0), 1e-6);
    // Zero head weights make D constant in x, so every gradient norm is 0 and the penalty is (0 - 1)^2.
    EXPECT_NEAR(t.gp_term, 1.0, 1e-12);
    EXPECT_NEAR(t.total_d, -(std::log(1.0 / 3.0) + 2 * std::log(2.0 / 3.0)) + 10.0, 1e-6);
    EXPECT_NEAR(t.total_g, -std::log(1.0 / 3.0), 1e-6);
}

TEST(LossOracle, TotalIsLinearInLambda)
{
    for (std::uint64_t seed : {3u, 4u, 5u}) {
        const auto n = tiny_nets(seed);
        const auto batch = tiny_batch(n, 5, seed);
        const auto a = bsdgan_value(n.discriminator, n.generator, batch, 0.5);
        const auto b = bsdgan_value(n.discriminator, n.generator, batch, 7.0);
        EXPECT_NEAR(b.total_d - a.total_d, (7.0 - 0.5) * a.gp_term, 1e-6);
        EXPECT_DOUBLE_EQ(a.gp_term, b.gp_term);
        const auto zero = bsdgan_value(n.discriminator, n.generator, batch, 0.0);
        EXPECT_NEAR(zero.total_d, -(zero.real_term + zero.fake_term + zero.wrong_label_term), 1e-12);
    }
}

TEST(LossOracle, ClampBoundary)
{
    EXPECT_DOUBLE_EQ(clamp_probability(0.0), 1e-7);
    EXPECT_DOUBLE_EQ(clamp_probability(1.0), 1.0 - 1e-7);
    EXPECT_DOUBLE_EQ(clamp_probability(0.25), 0.25);
    EXPECT_NEAR(std::log(clamp_probability(1.0 - (1.0 - 1e-7))), std::log(1e-7), 1e-9);
}

TEST(LossOracle, SingleClassHasNoWrongLabel)
{
    Rng rng(0);
    const std::vector<int> y{0, 0};
    EXPECT_THROW(sample_wrong_labels(y, 1, rng), Error);
}

TEST(GradientPenalty, LinearMapsGiveExactPenalties)
{
    const Tensor real(Matrix::Random(2, 4), 1);
    const Tensor fake(Matrix::Random(2, 4), 1);
    const std::vector<int> labels(4, 0);
    const std::vector<double> alpha{0.1, 0.5, 0.9, 0.3};
    auto constant_gradient = [](double a, double b) {
        return [a, b](const Tensor& x, std::span<const int>) {
            Tensor g(Matrix(x.data.rows(), x.data.cols()), x.length);
            g.data.row(0).setConstant(a);
            g.data.row(1).setConstant(b);
            return g;
        };
    };
    const auto unit = gradient_penalty_terms(constant_gradient(0.6, 0.8), real, fake, labels, alpha);
    EXPECT_NEAR(unit.penalty, 0.0, 1e-6);
    const auto five = gradient_penalty_terms(constant_gradient(3.0, 4.0), real, fake, labels, alpha);
    EXPECT_NEAR(five.penalty, 16.0, 1e-6);
    EXPECT_NEAR(10.0 * five.penalty, 160.0, 1e-6);
}

TEST(GradientPenalty, AlphaOneReturnsRealBatch)
{
    const auto d = tiny_descriptor();
    const auto real = random_batch(d, 3, 1);
    const auto fake = random_batch(d, 3, 2);
    const std::vector<double> ones(3, 1.0), zeros(3, 0.0);
    EXPECT_EQ(interpolate(real, fake, ones).data, real.data);
    EXPECT_EQ(interpolate(real, fake, zeros).data, fake.data);
}

TEST(GradientPenalty, NonFiniteGradientThrows)
{
    const Tensor x(Matrix::Zero(2, 2), 1);
    const std::vector<int> labels(2, 0);
    const std::vector<double> alpha(2, 0.5);
    auto bad = [](const Tensor& t, std::span<const int>) {
        return Tensor(Matrix::Constant(t.data.rows(), t.data.cols(), std::nan("")), t.length);
    };
    EXPECT_THROW(gradient_penalty_terms(bad, x, x, labels, alpha), TrainingError);
}

// Analytic input gradient of D(x | y) against central differences (h = 1e-3) on random small discriminators.
TEST(GradientPenalty, InputGradientMatchesFiniteDifferences)
{
    double worst = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto n = tiny_nets(100 + seed);
        const auto x = random_batch(n.desc, 2, 200 + seed);
        const std::vector<int> labels{static_cast<int>(seed % 3), static_cast<int>((seed + 1) % 3)};
        const Tensor g = discriminator_input_gradient(n.discriminator, x, labels);
        const double h = 1e-3;
        for (int s = 0; s < 2; ++s) {
            const int one[1] = {labels[static_cast<std::size_t>(s)]};
            Matrix fd(n.desc.channels, n.desc.length);
            for (Eigen::Index i = 0; i < fd.size(); ++i) {
                Tensor xs(Matrix(x.sample(s)), n.desc.length);
                xs.data.data()[i] += h;
                const double up = discriminate(n.discriminator, xs, one)(one[0], 0);
                xs.data.data()[i] -= 2 * h;
                const double down = discriminate(n.discriminator, xs, one)(one[0], 0);
                fd.data()[i] = (up - down) / (2 * h);
            }
            const double an = g.sample(s).norm();
            worst = std::max(worst, std::abs(an - fd.norm()) / std::max(an, 1e-12));
        }
    }
    EXPECT_LT(worst, 1e-4);
}

TEST(DiscriminatorObjective, ParameterGradientMatchesFiniteDifferences)
{
    for (std::uint64_t seed : {11u, 12u}) {
        const auto n = tiny_nets(seed);
        const auto batch = tiny_batch(n, 4, seed);
        const Tensor fake = generate(n.generator, batch.noise, batch.generation_labels);
        for (double lambda : {0.0, 10.0}) {
            const auto obj = discriminator_objective(n.discriminator, batch, fake, lambda, 1e-4, true);
            const auto loss = [&](const NetworkParams& d) {
                return discriminator_objective(d, batch, fake, lambda, 1e-4, false).loss;
            };
            EXPECT_LT(gradient_error(n.discriminator, obj.grads, loss, 1e-5), 2e-4) << "lambda " << lambda;
        }
    }
}

TEST(GeneratorObjective, ParameterGradientMatchesFiniteDifferences)
{
    const auto n = tiny_nets(21);
    Rng rng(5);
    const Matrix z = sample_noise(n.desc.latent_dim, 4, rng);
    const auto labels = sample_generation_labels(4, n.desc.class_count, rng);
    const auto obj = generator_objective(n.generator, n.discriminator, z, labels, true);
    EXPECT_FALSE(obj.grads.count("embedding.noise_scale"));
    const auto loss = [&](const NetworkParams& g) {
        return generator_objective(g, n.discriminator, z, labels, false).loss;
    };
    auto g = n.generator;
    EXPECT_LT(gradient_error(g, obj.grads, loss, 1e-5, 1, {"embedding.noise_scale"}), 1e-5);
}

TEST(LabelSampling, GenerationLabelsAreUniform)
{
    Rng rng(42);
    const int k = 6, draws = 10000;
    const auto y = sample_generation_labels(draws, k, rng);
    std::vector<int> counts(k, 0);
    for (int v : y)
        ++counts[static_cast<std::size_t>(v)];
    const double p = 1.0 / k, mean = draws * p, sigma = std::sqrt(draws * p * (1 - p));
    for (int c : counts)
        EXPECT_LE(std::abs(c - mean), 3 * sigma);
}

TEST(LabelSampling, WrongLabelsNeverEqualRealAndCoverOthers)
{
    Rng rng(7);
    for (int k : {2, 3, 6}) {
        const auto real = sample_generation_labels(5000, k, rng);
        const auto wrong = sample_wrong_labels(real, k, rng);
        std::vector<std::vector<int>> seen(static_cast<std::size_t>(k), std::vector<int>(static_cast<std::size_t>(k), 0));
        for (std::size_t i = 0; i < real.size(); ++i) {
            ASSERT_NE(real[i], wrong[i]);
            ASSERT_GE(wrong[i], 0);
            ASSERT_LT(wrong[i], k);
            ++seen[static_cast<std::size_t>(real[i])][static_cast<std::size_t>(wrong[i])];
        }
        for (int a = 0; a < k; ++a)
            for (int b = 0; b < k; ++b)
                if (a != b)
                    EXPECT_GT(seen[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)], 0);
    }
}

namespace {

GanTrainState tiny_state(std::uint64_t seed, TrainConfig& config)
{
    const auto d = tiny_descriptor();
    const auto ae = build_autoencoder(d, seed);
    config.seed = seed;
    config.batch_size = 6;
    return init_gan_state(ae.encoder, ae.decoder, random_prior(d, seed), config);
}

} // namespace

TEST(TrainingSteps, DiscriminatorStepLeavesGeneratorUntouched)
{
    TrainConfig config;
    auto state = tiny_state(3, config);
    const auto g_before = state.generator.arrays;
    const auto d_before = state.discriminator.arrays;
    const auto real = random_batch(state.discriminator.arch, 6, 9);
    const std::vector<int> labels{0, 1, 2, 0, 1, 2};
    discriminator_step(state, real, labels, config);
    for (const auto& [name, a] : g_before)
        EXPECT_EQ(state.generator.arrays.at(name).values, a.values) << name;
    bool changed = false;
    for (const auto& [name, a] : d_before)
        changed |= state.discriminator.arrays.at(name).values != a.values;
    EXPECT_TRUE(changed);
    EXPECT_EQ(state.generator_opt.steps(), 0);
    EXPECT_TRUE(state.generator_opt.moments().empty());
    for (const auto& [name, m] : state.discriminator_opt.moments())
        EXPECT_TRUE(state.discriminator.arrays.count(name)) << name;
}

TEST(TrainingSteps, GeneratorStepLeavesDiscriminatorUntouched)
{
    TrainConfig config;
    auto state = tiny_state(4, config);
    const auto d_before = state.discriminator.arrays;
    const auto g_before = state.generator.arrays;
    generator_step(state, config);
    for (const auto& [name, a] : d_before)
        EXPECT_EQ(state.discriminator.arrays.at(name).values, a.values) << name;
    EXPECT_EQ(state.generator.arrays.at("embedding.noise_scale").values, g_before.at("embedding.noise_scale").values);
    EXPECT_NE(state.generator.arrays.at("embedding.table").values, g_before.at("embedding.table").values);
    EXPECT_EQ(state.discriminator_opt.steps(), 0);
}

TEST(TrainingSteps, DiscriminatorDescentOnFixedBatch)
{
    int improved = 0;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto n = tiny_nets(seed);
        const auto batch = tiny_batch(n, 8, seed);
        const Tensor fake = generate(n.generator, batch.noise, batch.generation_labels);
        auto d = n.discriminator;
        const auto before = discriminator_objective(d, batch, fake, 0.0, 1e-4, true);
        Adam opt(AdamConfig{});
        opt.step(d.arrays, before.grads);
        const auto after = discriminator_objective(d, batch, fake, 0.0, 1e-4, false);
        improved += after.loss < before.loss;
    }
    EXPECT_GE(improved, 2);
}

TEST(TrainingSteps, GeneratorDescentOnFixedNoise)
{
    int improved = 0;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto n = tiny_nets(seed);
        Rng rng(seed);
        const Matrix z = sample_noise(n.desc.latent_dim, 8, rng);
        const auto labels = sample_generation_labels(8, n.desc.class_count, rng);
        auto g = n.generator;
        const auto before = generator_objective(g, n.discriminator, z, labels, true);
        Adam opt(AdamConfig{});
        opt.step(g.arrays, before.grads);
        improved += generator_objective(g, n.discriminator, z, labels, false).loss < before.loss;
    }
    EXPECT_GE(improved, 2);
}

TEST(TrainingSteps, BatchOfOneIsRejected)
{
    TrainConfig config;
    auto state = tiny_state(5, config);
    const auto real = random_batch(state.discriminator.arch, 1, 1);
    const std::vector<int> labels{0};
    EXPECT_THROW(discriminator_step(state, real, labels, config), TrainingError);
}

TEST(TrainConfigValidation, RejectsOutOfRange)
{
    TrainConfig c;
    EXPECT_NO_THROW(c.validate());
    auto bad = c;
    bad.adam.learning_rate = 0;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = c;
    bad.adam.beta1 = 1.0;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = c;
    bad.batch_size = 1;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = c;
    bad.lambda_gp = -1;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = c;
    bad.critic_steps = 0;
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(TrainGan, ZeroEpochsKeepsInitialization)
{
    const auto d = tiny_descriptor();
    const auto ae = build_autoencoder(d, 8);
    const auto prior = random_prior(d, 8);
    TrainConfig config;
    config.epochs = 0;
    config.seed = 8;
    const auto init = init_gan_state(ae.encoder, ae.decoder, prior, config);
    const auto state = train_gan(random_dataset(d, 4, 1), ae.encoder, ae.decoder, prior, config);
    EXPECT_EQ(state.step, 0);
    EXPECT_TRUE(state.history.empty());
    for (const auto& [name, a] : init.generator.arrays)
        EXPECT_EQ(state.generator.arrays.at(name).values, a.values);
    for (const auto& [name, a] : init.discriminator.arrays)
        EXPECT_EQ(state.discriminator.arrays.at(name).values, a.values);
}

TEST(TrainGan, LossCurveHasOneRowPerStepAndCriticScheduleHolds)
{
    const auto d = tiny_descriptor();
    const auto ae = build_autoencoder(d, 9);
    TrainConfig config;
    config.epochs = 2;
    config.batch_size = 4;
    config.critic_steps = 2;
    config.seed = 9;
    int callbacks = 0;
    const auto state = train_gan(random_dataset(d, 5, 2), ae.encoder, ae.decoder, random_prior(d, 9), config,
                                 [&](const GanTrainState&) { ++callbacks; });
    // 15 windows in batches of 4: three full batches and one of 3 per epoch.
    EXPECT_EQ(state.step, 8);
    EXPECT_EQ(callbacks, 2);
    EXPECT_EQ(state.generator_opt.steps(), 4);
    const auto table = loss_curve_table(state.history);
    EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 1 + state.step);
    EXPECT_EQ(table.substr(0, table.find('\n')), "step\tepoch\td_loss\tg_loss\treal_term\tfake_term\twrong_term\tgp_term");
}

TEST(TrainGan, DeterministicGivenSeed)
{
    const auto d = tiny_descriptor();
    const auto ae = build_autoencoder(d, 10);
    const auto data = random_dataset(d, 4, 3);
    TrainConfig config;
    config.epochs = 2;
    config.batch_size = 4;
    config.seed = 10;
    const auto a = train_gan(data, ae.encoder, ae.decoder, random_prior(d, 1), config);
    const auto b = train_gan(data, ae.encoder, ae.decoder, random_prior(d, 1), config);
    EXPECT_EQ(loss_curve_table(a.history), loss_curve_table(b.history));
    for (const auto& [name, arr] : a.generator.arrays)
        EXPECT_EQ(b.generator.arrays.at(name).values, arr.values);
}

TEST(TrainGan, ResumeRestoresCountersOptimizerAndRng)
{
    const auto d = tiny_descriptor();
    const auto ae = build_autoencoder(d, 11);
    const auto data = random_dataset(d, 4, 4);
    TrainConfig config;
    config.epochs = 1;
    config.batch_size = 4;
    config.seed = 11;
    auto state = train_gan(data, ae.encoder, ae.decoder, random_prior(d, 2), config);
    TempDir tmp;
    save_gan_state(state, tmp.path);
    auto loaded = load_gan_state(tmp.path, config.adam);
    EXPECT_EQ(loaded.step, state.step);
    EXPECT_EQ(loaded.epoch, 1);
    EXPECT_EQ(loaded.history.size(), state.history.size());
    EXPECT_EQ(loaded.generator_opt.steps(), state.generator_opt.steps());
    EXPECT_EQ(loaded.discriminator_opt.moments().size(), state.discriminator_opt.moments().size());
    EXPECT_EQ(loaded.rng(), state.rng());
    config.epochs = 2;
    run_gan_epochs(loaded, data, config);
    EXPECT_EQ(loaded.epoch, 2);
    EXPECT_EQ(loaded.step, 2 * state.step);
}
