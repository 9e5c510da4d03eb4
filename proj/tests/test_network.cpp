#include "test_util.hpp"

#include "bsdgan/autoencoder.hpp"
#include "bsdgan/errors.hpp"
#include "bsdgan/network.hpp"
#include "bsdgan/toy.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace bsdgan;
using namespace testing_util;

namespace {

ArchitectureDescriptor default_descriptor(int length, int classes = 6)
{
    ArchitectureDescriptor d;
    d.length = length;
    d.class_count = classes;
    return d;
}

bool bitwise_equal(const ParamSet& a, const ParamSet& b)
{
    if (a.size() != b.size())
        return false;
    for (const auto& [name, arr] : a) {
        const auto it = b.find(name);
        if (it == b.end() || it->second.shape != arr.shape || it->second.values != arr.values)
            return false;
    }
    return true;
}

/// Rounds every array to float so checkpoint round trips compare exactly.
NetworkParams float_exact(NetworkParams p)
{
    for (auto& [name, a] : p.arrays)
        a.values = a.values.cast<float>().cast<double>();
    return p;
}

} // namespace

// Descriptors and shapes ---------------------------------------------------------

TEST(Descriptor, DefaultShapesCloseForCommonLengths)
{
    for (int length : {151, 20, 32, 80, 200}) {
        const auto d = default_descriptor(length);
        const auto ae = build_autoencoder(d, 1);
        const Tensor x = random_batch(d, 2, 3);
        const Matrix z = encode(ae.encoder, x);
        EXPECT_EQ(z.rows(), 100);
        EXPECT_EQ(z.cols(), 2);
        const Tensor y = decode(ae.decoder, z);
        EXPECT_EQ(y.channels(), 3) << length;
        EXPECT_EQ(y.length, length);
        EXPECT_EQ(y.batch(), 2);
    }
}

TEST(Descriptor, EveryAnnouncedLengthCloses)
{
    ArchitectureDescriptor d = tiny_descriptor();
    const auto lengths = feasible_lengths(d, 2, 40);
    ASSERT_FALSE(lengths.empty());
    for (int length : lengths) {
        d.length = length;
        const auto ae = build_autoencoder(d, 2);
        const Tensor y = decode(ae.decoder, encode(ae.encoder, random_batch(d, 1, 4)));
        EXPECT_EQ(y.length, length);
        const auto plan = plan_shapes(d);
        EXPECT_EQ(plan.lengths.front(), length);
    }
}

TEST(Descriptor, InvalidDescriptorsAreRejected)
{
    ArchitectureDescriptor d = tiny_descriptor();
    d.latent_dim = 0;
    EXPECT_THROW(validate(d), DescriptorError);
    d = tiny_descriptor(1);
    EXPECT_THROW(validate(d), DescriptorError);
    d = tiny_descriptor();
    d.conv_blocks.clear();
    EXPECT_THROW(validate(d), DescriptorError);
    d = tiny_descriptor();
    d.conv_blocks[0].stride = 0;
    EXPECT_THROW(validate(d), DescriptorError);
    d = tiny_descriptor();
    d.length = 0;
    EXPECT_THROW(validate(d), DescriptorError);
}

TEST(Descriptor, HalfKernelPaddingMakesEveryLengthFeasible)
{
    for (const auto& blocks : {std::vector<ConvBlock>{{32, 5, 2}, {64, 5, 2}, {128, 5, 2}},
                               std::vector<ConvBlock>{{4, 4, 3}, {4, 2, 5}}, std::vector<ConvBlock>{{4, 7, 1}}}) {
        ArchitectureDescriptor d = tiny_descriptor();
        d.conv_blocks = blocks;
        EXPECT_EQ(feasible_lengths(d, 1, 300).size(), 300u);
    }
}

TEST(Descriptor, JsonRoundTrip)
{
    const auto d = default_descriptor(151);
    EXPECT_EQ(descriptor_from_json(to_json(d)), d);
    EXPECT_EQ(descriptor_from_json(to_json(tiny_descriptor())), tiny_descriptor());
}

// Building and transplanting --------------------------------------------------------

TEST(Build, SameSeedIsBitwiseIdentical)
{
    const auto d = tiny_descriptor();
    const auto a = build_autoencoder(d, 9), b = build_autoencoder(d, 9), c = build_autoencoder(d, 10);
    EXPECT_TRUE(bitwise_equal(a.encoder.arrays, b.encoder.arrays));
    EXPECT_TRUE(bitwise_equal(a.decoder.arrays, b.decoder.arrays));
    EXPECT_FALSE(bitwise_equal(a.encoder.arrays, c.encoder.arrays));
    EXPECT_TRUE(all_finite(a.encoder.arrays));
}

TEST(Build, ParametersMatchRoleTemplates)
{
    const auto d = tiny_descriptor();
    const auto ae = build_autoencoder(d, 1);
    const auto g = build_generator(ae.decoder, random_prior(d, 2), 3);
    const auto disc = build_discriminator(ae.encoder, d.class_count, 4);
    const std::pair<Role, const NetworkParams*> cases[] = {
        {Role::encoder, &ae.encoder}, {Role::decoder, &ae.decoder}, {Role::generator, &g}, {Role::discriminator, &disc}};
    for (const auto& [role, params] : cases) {
        EXPECT_EQ(params->role, role);
        const ParamSet tmpl = parameter_template(role, d);
        ASSERT_EQ(tmpl.size(), params->arrays.size()) << to_string(role);
        for (const auto& [name, arr] : tmpl) {
            ASSERT_TRUE(params->arrays.count(name)) << name;
            EXPECT_EQ(params->arrays.at(name).shape, arr.shape) << name;
            EXPECT_EQ(params->arrays.at(name).values.size(), arr.values.size()) << name;
        }
    }
}

TEST(Build, GeneratorTransplantIsExact)
{
    const auto d = tiny_descriptor();
    const auto ae = build_autoencoder(d, 1);
    const LatentPrior prior = random_prior(d, 2);
    const auto g = build_generator(ae.decoder, prior, 3);
    for (const auto& [name, arr] : ae.decoder.arrays) {
        ASSERT_TRUE(g.arrays.count(name)) << name;
        EXPECT_EQ(g.arrays.at(name).values, arr.values) << name;
    }
    const auto table = g.arrays.at("embedding.table").as_matrix(d.latent_dim, d.class_count);
    const auto scale = g.arrays.at("embedding.noise_scale").as_matrix(d.latent_dim, d.class_count);
    EXPECT_EQ((table.transpose() - prior.means).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ((scale.transpose() - prior.stds).cwiseAbs().maxCoeff(), 0.0);

    // generate(z, c) == decode(mu_c + sigma_c * z), bit for bit.
    const Matrix z = random_matrix(d.latent_dim, 3, 5);
    const std::vector<int> labels{0, 2, 1};
    Matrix latent(d.latent_dim, 3);
    for (int n = 0; n < 3; ++n)
        latent.col(n) = prior.means.row(labels[n]).transpose() +
                        prior.stds.row(labels[n]).transpose().cwiseProduct(z.col(n));
    EXPECT_EQ(generate(g, z, labels).data, decode(ae.decoder, latent).data);

    LatentPrior wrong = prior;
    wrong.means = random_matrix(d.class_count, d.latent_dim + 1, 6);
    wrong.stds = wrong.means.cwiseAbs();
    EXPECT_THROW(build_generator(ae.decoder, wrong, 3), ShapeError);
    EXPECT_THROW(build_generator(ae.encoder, prior, 3), ShapeError);
}

TEST(Build, DiscriminatorTransplantIsExact)
{
    const auto d = tiny_descriptor();
    const auto ae = build_autoencoder(d, 1);
    const auto disc = build_discriminator(ae.encoder, d.class_count, 4);
    const auto trunk = encoder_trunk(d);
    for (const auto& name : trunk.param_names())
        EXPECT_EQ(disc.arrays.at(name).values, ae.encoder.arrays.at(name).values) << name;
    EXPECT_FALSE(disc.arrays.count("proj.weight"));
    const Tensor x = random_batch(d, 3, 2);
    EXPECT_EQ(trunk.forward(disc.arrays, x).data, trunk.forward(ae.encoder.arrays, x).data);
    EXPECT_THROW(build_discriminator(ae.encoder, d.class_count + 1, 4), ShapeError);
}

TEST(Forward, DiscriminatorOutputsLieOnTheSimplex)
{
    for (int k : {2, 3, 6}) {
        const auto d = tiny_descriptor(k);
        const auto ae = build_autoencoder(d, static_cast<std::uint64_t>(k));
        const auto disc = build_discriminator(ae.encoder, k, 1);
        Rng rng(static_cast<std::uint64_t>(k));
        std::vector<int> labels(16);
        for (auto& l : labels)
            l = std::uniform_int_distribution<int>(0, k - 1)(rng);
        const Tensor x(random_matrix(d.channels, 16 * d.length, 8, 5.0), d.length);
        const Matrix p = discriminate(disc, x, labels);
        ASSERT_EQ(p.rows(), k + 1);
        ASSERT_EQ(p.cols(), 16);
        for (Eigen::Index j = 0; j < p.cols(); ++j) {
            EXPECT_NEAR(p.col(j).sum(), 1.0, 1e-6);
            EXPECT_GE(p.col(j).minCoeff(), 0.0);
        }
        EXPECT_EQ(discriminate(disc, x, labels), p);
    }
}

TEST(Forward, ShapeErrors)
{
    const auto d = tiny_descriptor();
    const auto ae = build_autoencoder(d, 1);
    const auto disc = build_discriminator(ae.encoder, d.class_count, 1);
    const auto g = build_generator(ae.decoder, random_prior(d, 2), 3);
    EXPECT_THROW(encode(ae.encoder, Tensor(Matrix::Zero(d.channels + 1, d.length), d.length)), ShapeError);
    EXPECT_THROW(encode(ae.encoder, Tensor(Matrix::Zero(d.channels, d.length + 2), d.length + 2)), ShapeError);
    EXPECT_THROW(decode(ae.decoder, Matrix::Zero(d.latent_dim + 1, 1)), ShapeError);
    const std::vector<int> one{0}, bad{3};
    EXPECT_THROW(discriminate(disc, random_batch(d, 2, 1), one), ShapeError);
    EXPECT_THROW(discriminate(disc, random_batch(d, 1, 1), bad), ShapeError);
    EXPECT_THROW(generate(g, Matrix::Zero(d.latent_dim + 1, 1), one), ShapeError);
    EXPECT_THROW(encode(ae.decoder, random_batch(d, 1, 1)), ShapeError);
}

// Checkpoints --------------------------------------------------------------------------

TEST(Checkpoint, RoundTripEveryRole)
{
    TempDir tmp;
    const auto d = tiny_descriptor();
    const auto ae = build_autoencoder(d, 1);
    NetworkParams g = build_generator(ae.decoder, random_prior(d, 2), 3);
    g.step = 42;
    for (const NetworkParams& p : {ae.encoder, ae.decoder, g, build_discriminator(ae.encoder, 3, 4)}) {
        const NetworkParams exact = float_exact(p);
        const std::string stem = to_string(p.role);
        save_checkpoint(exact, tmp.path, stem);
        const NetworkParams loaded = load_checkpoint(tmp.path, stem);
        EXPECT_EQ(loaded.role, p.role);
        EXPECT_EQ(loaded.arch, p.arch);
        EXPECT_EQ(loaded.seed, p.seed);
        EXPECT_EQ(loaded.step, p.step);
        EXPECT_TRUE(bitwise_equal(loaded.arrays, exact.arrays)) << stem;
    }
}

TEST(Checkpoint, LoadValidatesNamesShapesAndBlob)
{
    TempDir tmp;
    const auto d = tiny_descriptor();
    auto ae = build_autoencoder(d, 1);
    EXPECT_THROW(load_checkpoint(tmp.path, "missing"), MissingArtifactError);

    NetworkParams extra = ae.encoder;
    extra.arrays["stray"] = ParamArray{{2}, Vector::Zero(2)};
    save_checkpoint(extra, tmp.path, "extra");
    EXPECT_THROW(load_checkpoint(tmp.path, "extra"), FormatError);

    NetworkParams missing = ae.encoder;
    missing.arrays.erase("proj.bias");
    save_checkpoint(missing, tmp.path, "short");
    EXPECT_THROW(load_checkpoint(tmp.path, "short"), FormatError);

    NetworkParams reshaped = ae.encoder;
    auto& w = reshaped.arrays.at("proj.bias");
    w.shape = {static_cast<int>(w.values.size()) + 1};
    w.values = Vector::Zero(w.values.size() + 1);
    save_checkpoint(reshaped, tmp.path, "shape");
    EXPECT_THROW(load_checkpoint(tmp.path, "shape"), FormatError);

    save_checkpoint(ae.encoder, tmp.path, "trunc");
    std::filesystem::resize_file(tmp.path / "trunc.f32", 16);
    EXPECT_THROW(load_checkpoint(tmp.path, "trunc"), FormatError);

    ae.encoder.arrays.at("proj.bias").values(0) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(save_checkpoint(ae.encoder, tmp.path, "nan"), TrainingError);
}

// Autoencoder pretraining and the latent prior ----------------------------------------------

TEST(Mae, Fixtures)
{
    const Tensor x(random_matrix(3, 8, 1), 4);
    EXPECT_EQ(mae_loss(x, x), 0.0);
    EXPECT_DOUBLE_EQ(mae_loss(Tensor(Matrix::Zero(3, 8), 4), Tensor(Matrix::Ones(3, 8), 4)), 1.0);
    // 2 windows x 3 channels x 4 samples.
    Matrix a(3, 8), b(3, 8);
    double hand = 0;
    for (int i = 0; i < 24; ++i) {
        a.data()[i] = 0.5 * i - 3.0;
        b.data()[i] = (i % 5) * 1.25;
        hand += std::abs(a.data()[i] - b.data()[i]);
    }
    EXPECT_DOUBLE_EQ(mae_loss(Tensor(a, 4), Tensor(b, 4)), hand / 24);
    EXPECT_DOUBLE_EQ(mae_loss(Tensor(a, 4), Tensor(b, 4)), mae_loss(Tensor(b, 4), Tensor(a, 4)));
    Matrix nan = a;
    nan(1, 1) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(mae_loss(Tensor(nan, 4), Tensor(b, 4)), TrainingError);
    EXPECT_THROW(mae_loss(Tensor(a, 4), Tensor(Matrix::Zero(3, 4), 4)), ShapeError);
}

TEST(Prior, MatchesStreamingOracle)
{
    const auto d = tiny_descriptor();
    const auto ae = build_autoencoder(d, 3);
    const LabeledDataset train = random_dataset(d, 7, 4);
    const LatentPrior prior = fit_latent_prior(ae.encoder, train);
    // Welford mean and population variance per class, one window at a time.
    for (int c = 0; c < d.class_count; ++c) {
        Vector mean = Vector::Zero(d.latent_dim), m2 = Vector::Zero(d.latent_dim);
        int n = 0;
        for (std::size_t i = 0; i < train.size(); ++i) {
            if (train.labels[i] != c)
                continue;
            const Vector z = encode(ae.encoder, Tensor(train.windows[i].values, d.length)).col(0);
            ++n;
            const Vector delta = z - mean;
            mean += delta / n;
            m2 += delta.cwiseProduct(z - mean);
        }
        const Vector std = (m2 / n).cwiseSqrt().cwiseMax(prior_std_floor);
        EXPECT_LT((prior.means.row(c).transpose() - mean).cwiseAbs().maxCoeff(), 1e-5);
        EXPECT_LT((prior.stds.row(c).transpose() - std).cwiseAbs().maxCoeff(), 1e-5);
    }
}

TEST(Prior, DegenerateClassesUseTheFloor)
{
    const auto d = tiny_descriptor();
    const auto ae = build_autoencoder(d, 3);
    LabeledDataset train = random_dataset(d, 2, 4);
    // Class 0 keeps one window; class 1 gets two identical ones.
    train = train.subset({1, 2, 3, 4, 5});
    train.windows[2].values = train.windows[1].values;
    const LatentPrior prior = fit_latent_prior(ae.encoder, train);
    const Vector single = encode(ae.encoder, Tensor(train.windows[0].values, d.length)).col(0);
    EXPECT_EQ((prior.means.row(0).transpose() - single).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_TRUE((prior.stds.row(0).array() == prior_std_floor).all());
    EXPECT_TRUE((prior.stds.row(1).array() == prior_std_floor).all());
    EXPECT_TRUE((prior.stds.row(2).array() >= prior_std_floor).all());
}

TEST(Prior, EmptyClassNamesTheClass)
{
    const auto d = tiny_descriptor();
    const auto ae = build_autoencoder(d, 3);
    const LabeledDataset train = random_dataset(d, 2, 4).subset({0, 1, 4, 5});
    try {
        fit_latent_prior(ae.encoder, train);
        FAIL() << "expected PriorError";
    } catch (const PriorError& e) {
        EXPECT_NE(std::string(e.what()).find("c1"), std::string::npos) << e.what();
    }
}

TEST(Prior, RelabelingPermutesRows)
{
    const auto d = tiny_descriptor();
    const auto ae = build_autoencoder(d, 3);
    const LabeledDataset train = random_dataset(d, 4, 5);
    const std::vector<int> perm{2, 0, 1};
    LabeledDataset relabeled = train;
    for (auto& l : relabeled.labels)
        l = perm[static_cast<std::size_t>(l)];
    const LatentPrior a = fit_latent_prior(ae.encoder, train);
    const LatentPrior b = fit_latent_prior(ae.encoder, relabeled);
    for (int c = 0; c < 3; ++c) {
        EXPECT_EQ(a.means.row(c), b.means.row(perm[static_cast<std::size_t>(c)]));
        EXPECT_EQ(a.stds.row(c), b.stds.row(perm[static_cast<std::size_t>(c)]));
    }
}

TEST(Prior, FileRoundTrip)
{
    TempDir tmp;
    LatentPrior p = random_prior(tiny_descriptor(), 3);
    p.means = p.means.cast<float>().cast<double>();
    p.stds = p.stds.cast<float>().cast<double>();
    save_prior(p, tmp.path);
    const LatentPrior q = load_prior(tmp.path);
    EXPECT_EQ(q.means, p.means);
    EXPECT_EQ(q.stds, p.stds);
}

TEST(Pretrain, RefusesTestSplitAndEmptyTrain)
{
    const auto d = tiny_descriptor();
    PretrainConfig c;
    c.epochs = 1;
    const LabeledDataset val = random_dataset(d, 2, 2, Split::val);
    EXPECT_THROW(train_autoencoder(random_dataset(d, 2, 1, Split::test), val, d, c), Error);
    EXPECT_THROW(train_autoencoder(random_dataset(d, 2, 1), random_dataset(d, 2, 2, Split::test), d, c), Error);
    LabeledDataset empty = random_dataset(d, 2, 1);
    empty.windows.clear();
    empty.labels.clear();
    EXPECT_THROW(train_autoencoder(empty, val, d, c), Error);
}

TEST(Pretrain, ZeroEpochsReturnsInitialParameters)
{
    const auto d = tiny_descriptor();
    PretrainConfig c;
    c.epochs = 0;
    c.seed = 5;
    const auto result = train_autoencoder(random_dataset(d, 3, 1), random_dataset(d, 2, 2, Split::val), d, c);
    const auto fresh = build_autoencoder(d, 5);
    EXPECT_TRUE(bitwise_equal(result.autoencoder.encoder.arrays, fresh.encoder.arrays));
    EXPECT_TRUE(bitwise_equal(result.autoencoder.decoder.arrays, fresh.decoder.arrays));
    EXPECT_TRUE(result.report.train_mae.empty());
    EXPECT_EQ(result.report.epochs_run, 0);
}

class ToyPretrain : public ::testing::Test {
protected:
    static void SetUpTestSuite()
    {
        desc = new ArchitectureDescriptor(default_descriptor(32, 3));
        train = new LabeledDataset(toy_windows({60, 80, 60}, 32, 0.05, 1));
        train->split = Split::train;
        val = new LabeledDataset(toy_windows({20, 20, 20}, 32, 0.05, 2, 1000));
        val->split = Split::val;
        PretrainConfig c;
        c.epochs = 30;
        c.seed = 3;
        result = new PretrainResult(train_autoencoder(*train, *val, *desc, c));
    }
    static void TearDownTestSuite()
    {
        delete result;
        delete val;
        delete train;
        delete desc;
    }
    static ArchitectureDescriptor* desc;
    static LabeledDataset* train;
    static LabeledDataset* val;
    static PretrainResult* result;
};

ArchitectureDescriptor* ToyPretrain::desc = nullptr;
LabeledDataset* ToyPretrain::train = nullptr;
LabeledDataset* ToyPretrain::val = nullptr;
PretrainResult* ToyPretrain::result = nullptr;

TEST_F(ToyPretrain, HalvesTrainError)
{
    const auto& r = result->report;
    ASSERT_EQ(static_cast<int>(r.train_mae.size()), r.epochs_run);
    EXPECT_FALSE(r.diverged);
    for (double v : r.train_mae)
        EXPECT_TRUE(std::isfinite(v) && v >= 0);
    const double final_mae = reconstruction_mae(result->autoencoder, *train);
    EXPECT_LT(final_mae, 0.5 * r.initial_train_mae) << final_mae << " vs " << r.initial_train_mae;
}

TEST_F(ToyPretrain, KeepsTheBestValidationEpoch)
{
    const auto& r = result->report;
    ASSERT_GE(r.best_epoch, 1);
    const double best = *std::min_element(r.val_mae.begin(), r.val_mae.end());
    EXPECT_DOUBLE_EQ(r.val_mae[static_cast<std::size_t>(r.best_epoch - 1)], best);
    EXPECT_NEAR(reconstruction_mae(result->autoencoder, *val), best, 1e-9);
}

TEST_F(ToyPretrain, SameSeedSameCurves)
{
    PretrainConfig c;
    c.epochs = 3;
    c.seed = 3;
    const auto a = train_autoencoder(*train, *val, *desc, c);
    const auto b = train_autoencoder(*train, *val, *desc, c);
    ASSERT_EQ(a.report.train_mae.size(), b.report.train_mae.size());
    for (std::size_t i = 0; i < a.report.train_mae.size(); ++i) {
        EXPECT_NEAR(a.report.train_mae[i], b.report.train_mae[i], 1e-5);
        EXPECT_NEAR(a.report.val_mae[i], b.report.val_mae[i], 1e-5);
    }
}

TEST_F(ToyPretrain, GeneratorAtZeroNoiseDecodesThePriorMean)
{
    const LatentPrior prior = fit_latent_prior(result->autoencoder.encoder, *train);
    const auto g = build_generator(result->autoencoder.decoder, prior, 1);
    const std::vector<int> labels{0, 1, 2};
    const Tensor out = generate(g, Matrix::Zero(desc->latent_dim, 3), labels);
    const Tensor ref = decode(result->autoencoder.decoder, prior.means.transpose());
    EXPECT_LT((out.data - ref.data).cwiseAbs().maxCoeff(), 1e-5);
}

// Toy data -------------------------------------------------------------------------

TEST(Toy, CountsIdsAndDeterminism)
{
    ToyConfig c;
    c.seed = 4;
    const ToyData a = make_toy(c);
    EXPECT_EQ(class_histogram(a.train).counts, (std::map<int, std::int64_t>{{0, 20}, {1, 500}, {2, 100}}));
    EXPECT_EQ(class_histogram(a.val).counts, (std::map<int, std::int64_t>{{0, 100}, {1, 100}, {2, 100}}));
    EXPECT_EQ(class_histogram(a.test).counts, (std::map<int, std::int64_t>{{0, 100}, {1, 100}, {2, 100}}));
    EXPECT_EQ(a.train.split, Split::train);
    EXPECT_EQ(a.val.split, Split::val);
    EXPECT_EQ(a.test.split, Split::test);
    std::set<std::uint64_t> ids;
    for (const auto* ds : {&a.train, &a.val, &a.test}) {
        ds->validate();
        EXPECT_EQ(ds->channels(), 3);
        EXPECT_EQ(ds->length(), 32);
        for (const auto& w : ds->windows) {
            EXPECT_TRUE(ids.insert(w.id).second);
            EXPECT_FALSE(w.synthetic);
        }
    }
    const ToyData b = make_toy(c);
    for (std::size_t i = 0; i < a.train.size(); ++i)
        EXPECT_EQ(a.train.windows[i].values, b.train.windows[i].values);
    c.seed = 5;
    EXPECT_NE(make_toy(c).train.windows[0].values, a.train.windows[0].values);
}
