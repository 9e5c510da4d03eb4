#include "bsdgan/adversarial.hpp"

#include "bsdgan/errors.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace bsdgan {

using nlohmann::json;

namespace {

Tensor concat(std::initializer_list<const Tensor*> parts)
{
    Eigen::Index cols = 0;
    for (const auto* p : parts)
        cols += p->data.cols();
    const auto* first = *parts.begin();
    Tensor out(Matrix(first->data.rows(), cols), first->length);
    Eigen::Index at = 0;
    for (const auto* p : parts) {
        out.data.middleCols(at, p->data.cols()) = p->data;
        at += p->data.cols();
    }
    return out;
}

// dL/dlogits for L = sum_n w_n * D(x_n | y_n), i.e. p_y (e_y - p) scaled per column.
Matrix weighted_label_gradient(const Matrix& probs, std::span<const int> labels, std::span<const double> weights)
{
    Matrix dprobs = Matrix::Zero(probs.rows(), probs.cols());
    for (Eigen::Index n = 0; n < probs.cols(); ++n)
        dprobs(labels[static_cast<std::size_t>(n)], n) = weights[static_cast<std::size_t>(n)];
    return nn::softmax_backward(probs, dprobs);
}

bool unclamped(double p) { return p >= log_clamp && p <= 1.0 - log_clamp; }

void require_batch(int n)
{
    if (n < 2)
        throw TrainingError("adversarial steps need a batch of at least 2 samples, got " + std::to_string(n));
}

} // namespace

void TrainConfig::validate() const
{
    if (!(adam.learning_rate > 0))
        throw ConfigError("learning rate must be > 0");
    if (adam.beta1 < 0 || adam.beta1 >= 1 || adam.beta2 < 0 || adam.beta2 >= 1)
        throw ConfigError("Adam betas must lie in [0, 1)");
    if (batch_size < 2)
        throw ConfigError("GAN batch size must be >= 2");
    if (epochs < 0)
        throw ConfigError("epochs must be >= 0");
    if (lambda_gp < 0)
        throw ConfigError("lambda_gp must be >= 0");
    if (critic_steps < 1)
        throw ConfigError("critic_steps must be >= 1");
    if (!(penalty_fd_step > 0))
        throw ConfigError("penalty_fd_step must be > 0");
}

std::vector<int> sample_generation_labels(int count, int class_count, Rng& rng)
{
    std::uniform_int_distribution<int> dist(0, class_count - 1);
    std::vector<int> out(static_cast<std::size_t>(count));
    for (auto& y : out)
        y = dist(rng);
    return out;
}

std::vector<int> sample_wrong_labels(std::span<const int> real_labels, int class_count, Rng& rng)
{
    if (class_count < 2)
        throw Error("wrong labels need at least 2 classes");
    std::uniform_int_distribution<int> dist(0, class_count - 2);
    std::vector<int> out;
    out.reserve(real_labels.size());
    for (int y : real_labels) {
        const int r = dist(rng);
        out.push_back(r >= y ? r + 1 : r);
    }
    return out;
}

std::vector<double> sample_alpha(int count, Rng& rng)
{
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    std::vector<double> out(static_cast<std::size_t>(count));
    for (auto& a : out)
        a = dist(rng);
    return out;
}

Matrix sample_noise(int latent_dim, int count, Rng& rng)
{
    std::normal_distribution<double> dist(0.0, 1.0);
    Matrix z(latent_dim, count);
    for (Eigen::Index i = 0; i < z.size(); ++i)
        z.data()[i] = dist(rng);
    return z;
}

Tensor interpolate(const Tensor& real, const Tensor& fake, std::span<const double> alpha)
{
    if (real.data.rows() != fake.data.rows() || real.data.cols() != fake.data.cols() || real.length != fake.length)
        throw ShapeError("interpolate: real and generated batches differ in shape");
    if (static_cast<int>(alpha.size()) != real.batch())
        throw ShapeError("interpolate: one alpha per sample required");
    Tensor out(Matrix(real.data.rows(), real.data.cols()), real.length);
    for (int n = 0; n < real.batch(); ++n) {
        const double a = alpha[static_cast<std::size_t>(n)];
        out.sample(n) = a * real.sample(n) + (1.0 - a) * fake.sample(n);
    }
    return out;
}

Tensor discriminator_input_gradient(const NetworkParams& discriminator, const Tensor& x, std::span<const int> labels)
{
    const DiscriminatorNet net(discriminator.arch);
    DiscriminatorNet::Pass pass;
    const Matrix probs = net.forward(discriminator.arrays, x, labels, &pass);
    const std::vector<double> ones(labels.size(), 1.0);
    return net.backward(discriminator.arrays, pass, weighted_label_gradient(probs, labels, ones), nullptr);
}

double gradient_penalty(const NetworkParams& discriminator, const Tensor& real, const Tensor& fake,
                        std::span<const int> real_labels, std::span<const double> alpha)
{
    return gradient_penalty_terms(
               [&](const Tensor& x, std::span<const int> y) { return discriminator_input_gradient(discriminator, x, y); },
               real, fake, real_labels, alpha)
        .penalty;
}

DiscriminatorObjective discriminator_objective(const NetworkParams& discriminator, const AdversarialBatch& batch,
                                               const Tensor& fake, double lambda_gp, double fd_step, bool with_grads)
{
    const int k = discriminator.arch.class_count;
    const int n = batch.real.batch();
    if (k < 2)
        throw Error("the wrong-label term needs at least 2 classes");
    if (static_cast<int>(batch.real_labels.size()) != n || static_cast<int>(batch.generation_labels.size()) != n ||
        static_cast<int>(batch.wrong_labels.size()) != n || static_cast<int>(batch.alpha.size()) != n ||
        fake.batch() != n)
        throw ShapeError("adversarial batch columns disagree in size");
    const DiscriminatorNet net(discriminator.arch);
    const auto& params = discriminator.arrays;

    PenaltyTerms gp = gradient_penalty_terms(
        [&](const Tensor& x, std::span<const int> y) { return discriminator_input_gradient(discriminator, x, y); },
        batch.real, fake, batch.real_labels, batch.alpha);

    const bool penalty_grads = with_grads && lambda_gp > 0;
    std::vector<double> coeff(static_cast<std::size_t>(n), 0.0);
    Tensor plus, minus;
    if (penalty_grads) {
        plus = gp.interpolates;
        minus = gp.interpolates;
        for (int i = 0; i < n; ++i) {
            const double norm = gp.grad_norms[static_cast<std::size_t>(i)];
            if (norm <= 0)
                continue;
            const Matrix dir = gp.input_grads.sample(i) / norm;
            plus.sample(i) += fd_step * dir;
            minus.sample(i) -= fd_step * dir;
            coeff[static_cast<std::size_t>(i)] = lambda_gp * 2.0 * (norm - 1.0) / n;
        }
    }

    const Tensor inputs = penalty_grads ? concat({&batch.real, &batch.real, &fake, &plus, &minus})
                                        : concat({&batch.real, &batch.real, &fake});
    std::vector<int> labels;
    labels.insert(labels.end(), batch.real_labels.begin(), batch.real_labels.end());
    labels.insert(labels.end(), batch.wrong_labels.begin(), batch.wrong_labels.end());
    labels.insert(labels.end(), batch.generation_labels.begin(), batch.generation_labels.end());
    if (penalty_grads) {
        labels.insert(labels.end(), batch.real_labels.begin(), batch.real_labels.end());
        labels.insert(labels.end(), batch.real_labels.begin(), batch.real_labels.end());
    }
    DiscriminatorNet::Pass pass;
    const Matrix probs = net.forward(params, inputs, labels, with_grads ? &pass : nullptr);

    DiscriminatorObjective out;
    auto& t = out.terms;
    double real_ce = 0, fake_ce = 0, wrong_ce = 0, gen_ce = 0;
    for (int i = 0; i < n; ++i) {
        const double p_real = probs(batch.real_labels[static_cast<std::size_t>(i)], i);
        const double p_wrong = probs(batch.wrong_labels[static_cast<std::size_t>(i)], n + i);
        const double p_gen = probs(batch.generation_labels[static_cast<std::size_t>(i)], 2 * n + i);
        const double p_fake = probs(k, 2 * n + i);
        t.real_term += std::log(clamp_probability(p_real));
        t.fake_term += std::log(clamp_probability(1.0 - p_gen));
        t.wrong_label_term += std::log(clamp_probability(1.0 - p_wrong));
        real_ce -= std::log(clamp_probability(p_real));
        fake_ce -= std::log(clamp_probability(p_fake));
        wrong_ce -= std::log(clamp_probability(1.0 - p_wrong));
        gen_ce -= std::log(clamp_probability(p_gen));
    }
    t.real_term /= n;
    t.fake_term /= n;
    t.wrong_label_term /= n;
    t.gp_term = gp.penalty;
    t.total_d = -(t.real_term + t.fake_term + t.wrong_label_term) + lambda_gp * gp.penalty;
    t.total_g = gen_ce / n;
    out.loss = (real_ce + fake_ce + wrong_ce) / n + lambda_gp * gp.penalty;

    if (with_grads) {
        Matrix dprobs = Matrix::Zero(probs.rows(), probs.cols());
        for (int i = 0; i < n; ++i) {
            const auto s = static_cast<std::size_t>(i);
            const double p_real = probs(batch.real_labels[s], i);
            const double p_wrong = probs(batch.wrong_labels[s], n + i);
            const double p_fake = probs(k, 2 * n + i);
            if (unclamped(p_real))
                dprobs(batch.real_labels[s], i) = -1.0 / (n * p_real);
            if (unclamped(1.0 - p_wrong))
                dprobs(batch.wrong_labels[s], n + i) = 1.0 / (n * (1.0 - p_wrong));
            if (unclamped(p_fake))
                dprobs(k, 2 * n + i) = -1.0 / (n * p_fake);
            if (penalty_grads) {
                dprobs(batch.real_labels[s], 3 * n + i) = coeff[s] / (2.0 * fd_step);
                dprobs(batch.real_labels[s], 4 * n + i) = -coeff[s] / (2.0 * fd_step);
            }
        }
        net.backward(params, pass, nn::softmax_backward(probs, dprobs), &out.grads);
    }
    return out;
}

LossBreakdown bsdgan_value(const NetworkParams& discriminator, const NetworkParams& generator,
                           const AdversarialBatch& batch, double lambda_gp)
{
    const Tensor fake = generate(generator, batch.noise, batch.generation_labels);
    return discriminator_objective(discriminator, batch, fake, lambda_gp, 1e-4, false).terms;
}

GeneratorObjective generator_objective(const NetworkParams& generator, const NetworkParams& discriminator,
                                       const Matrix& noise, std::span<const int> labels, bool with_grads)
{
    const GeneratorNet gnet(generator.arch);
    const DiscriminatorNet dnet(discriminator.arch);
    GeneratorNet::Pass gpass;
    DiscriminatorNet::Pass dpass;
    const Tensor fake = gnet.forward(generator.arrays, noise, labels, with_grads ? &gpass : nullptr);
    const Matrix probs = dnet.forward(discriminator.arrays, fake, labels, with_grads ? &dpass : nullptr);
    const auto n = static_cast<int>(labels.size());
    GeneratorObjective out;
    std::vector<double> weights(labels.size(), 0.0);
    for (int i = 0; i < n; ++i) {
        const double p = probs(labels[static_cast<std::size_t>(i)], i);
        out.loss -= std::log(clamp_probability(p)) / n;
        if (unclamped(p))
            weights[static_cast<std::size_t>(i)] = -1.0 / (n * p);
    }
    if (with_grads) {
        const Tensor dx =
            dnet.backward(discriminator.arrays, dpass, weighted_label_gradient(probs, labels, weights), nullptr);
        gnet.backward(generator.arrays, gpass, dx, out.grads);
    }
    return out;
}

LossRecord discriminator_step(GanTrainState& state, const Tensor& real, std::span<const int> real_labels,
                              const TrainConfig& config)
{
    const int n = real.batch();
    require_batch(n);
    const auto& arch = state.discriminator.arch;
    AdversarialBatch batch;
    batch.real = real;
    batch.real_labels.assign(real_labels.begin(), real_labels.end());
    batch.noise = sample_noise(arch.latent_dim, n, state.rng);
    batch.generation_labels = sample_generation_labels(n, arch.class_count, state.rng);
    batch.wrong_labels = sample_wrong_labels(batch.real_labels, arch.class_count, state.rng);
    batch.alpha = sample_alpha(n, state.rng);
    const Tensor fake = generate(state.generator, batch.noise, batch.generation_labels);
    auto obj = discriminator_objective(state.discriminator, batch, fake, config.lambda_gp, config.penalty_fd_step, true);
    if (!std::isfinite(obj.loss) || !all_finite(obj.grads))
        throw TrainingError("non-finite discriminator loss at step " + std::to_string(state.step + 1));
    state.discriminator_opt.step(state.discriminator.arrays, obj.grads);
    LossRecord rec;
    rec.d_loss = obj.loss;
    rec.g_loss = obj.terms.total_g;
    rec.terms = obj.terms;
    return rec;
}

double generator_step(GanTrainState& state, const TrainConfig& config)
{
    const auto& arch = state.generator.arch;
    require_batch(config.batch_size);
    const Matrix z = sample_noise(arch.latent_dim, config.batch_size, state.rng);
    const auto labels = sample_generation_labels(config.batch_size, arch.class_count, state.rng);
    auto obj = generator_objective(state.generator, state.discriminator, z, labels, true);
    if (!std::isfinite(obj.loss) || !all_finite(obj.grads))
        throw TrainingError("non-finite generator loss at step " + std::to_string(state.step + 1));
    state.generator_opt.step(state.generator.arrays, obj.grads);
    return obj.loss;
}

namespace {

void round_to_float(ParamSet& arrays)
{
    for (auto& [name, a] : arrays)
        a.values = a.values.cast<float>().cast<double>();
}

// Checkpoints hold float32; rounding the live state the same way makes a resumed run bit-identical.
void round_to_checkpoint_precision(GanTrainState& state)
{
    round_to_float(state.generator.arrays);
    round_to_float(state.discriminator.arrays);
    for (Adam* opt : {&state.generator_opt, &state.discriminator_opt}) {
        auto moments = opt->moments();
        for (auto& [name, m] : moments) {
            m.first = m.first.cast<float>().cast<double>();
            m.second = m.second.cast<float>().cast<double>();
        }
        opt->restore(opt->steps(), std::move(moments));
    }
}

} // namespace

GanTrainState init_gan_state(const NetworkParams& encoder, const NetworkParams& decoder, const LatentPrior& prior,
                             const TrainConfig& config)
{
    config.validate();
    if (encoder.arch != decoder.arch)
        throw ShapeError("encoder and decoder were built from different descriptors");
    GanTrainState state;
    state.generator = build_generator(decoder, prior, config.seed);
    state.discriminator = build_discriminator(encoder, encoder.arch.class_count, config.seed + 1);
    state.generator_opt = Adam(config.adam);
    state.discriminator_opt = Adam(config.adam);
    state.rng.seed(config.seed ^ 0x5DEECE66DULL);
    round_to_checkpoint_precision(state);
    return state;
}

void run_gan_epochs(GanTrainState& state, const LabeledDataset& train, const TrainConfig& config,
                    const EpochCallback& on_epoch_end)
{
    config.validate();
    if (train.class_count() != state.discriminator.arch.class_count)
        throw ShapeError("training data has " + std::to_string(train.class_count()) + " classes, networks expect " +
                         std::to_string(state.discriminator.arch.class_count));
    std::vector<std::size_t> order(train.size());
    std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(train.class_count()));
    for (std::size_t i = 0; i < train.size(); ++i)
        members[static_cast<std::size_t>(train.labels[i])].push_back(i);
    if (config.balanced_real_batches)
        for (std::size_t c = 0; c < members.size(); ++c)
            if (members[c].empty())
                throw Error("balanced real batches need every class present; class '" + train.class_names[c] +
                            "' is empty");
    for (int epoch = state.epoch + 1; epoch <= config.epochs; ++epoch) {
        // Each epoch shuffles from the identity so the order depends only on the rng, which checkpoints carry.
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), state.rng);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            if (end - start < 2)
                continue;
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
            if (config.balanced_real_batches) {
                // Same batch count and sizes as an epoch, but classes drawn uniformly with replacement.
                const auto labels = sample_generation_labels(static_cast<int>(idx.size()), train.class_count(), state.rng);
                for (std::size_t i = 0; i < idx.size(); ++i) {
                    const auto& pool = members[static_cast<std::size_t>(labels[i])];
                    idx[i] = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(state.rng)];
                }
            }
            const auto labels = train.labels_of(idx);
            LossRecord rec = discriminator_step(state, train.to_tensor(idx), labels, config);
            if ((state.step + 1) % config.critic_steps == 0)
                rec.g_loss = generator_step(state, config);
            ++state.step;
            rec.step = state.step;
            rec.epoch = epoch;
            state.history.push_back(rec);
        }
        state.epoch = epoch;
        state.generator.step = state.discriminator.step = state.step;
        round_to_checkpoint_precision(state);
        if (on_epoch_end)
            on_epoch_end(state);
    }
}

GanTrainState train_gan(const LabeledDataset& train, const NetworkParams& encoder, const NetworkParams& decoder,
                        const LatentPrior& prior, const TrainConfig& config, const EpochCallback& on_epoch_end)
{
    GanTrainState state = init_gan_state(encoder, decoder, prior, config);
    run_gan_epochs(state, train, config, on_epoch_end);
    return state;
}

std::string loss_curve_table(const std::vector<LossRecord>& history)
{
    std::string out = "step\tepoch\td_loss\tg_loss\treal_term\tfake_term\twrong_term\tgp_term\n";
    char line[512];
    for (const auto& r : history) {
        std::snprintf(line, sizeof line, "%lld\t%d\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\n",
                      static_cast<long long>(r.step), r.epoch, r.d_loss, r.g_loss, r.terms.real_term,
                      r.terms.fake_term, r.terms.wrong_label_term, r.terms.gp_term);
        out += line;
    }
    return out;
}

namespace {

void moments_to_arrays(const Adam& opt, const std::string& prefix, const ParamSet& params, ParamSet& out)
{
    for (const auto& [name, m] : opt.moments()) {
        const auto& shape = params.at(name).shape;
        out[prefix + "/" + name + "/m"] = ParamArray{shape, m.first};
        out[prefix + "/" + name + "/v"] = ParamArray{shape, m.second};
    }
}

std::map<std::string, Adam::Moments> moments_from_arrays(const ParamSet& arrays, const std::string& prefix)
{
    std::map<std::string, Adam::Moments> out;
    for (const auto& [key, a] : arrays) {
        if (key.rfind(prefix + "/", 0) != 0)
            continue;
        const auto rest = key.substr(prefix.size() + 1);
        const auto slash = rest.rfind('/');
        auto& m = out[rest.substr(0, slash)];
        (rest.substr(slash + 1) == "m" ? m.first : m.second) = a.values;
    }
    return out;
}

json history_to_json(const std::vector<LossRecord>& history)
{
    json rows = json::array();
    for (const auto& r : history)
        rows.push_back({r.step, r.epoch, r.d_loss, r.g_loss, r.terms.real_term, r.terms.fake_term,
                        r.terms.wrong_label_term, r.terms.gp_term, r.terms.total_d, r.terms.total_g});
    return rows;
}

} // namespace

std::vector<std::filesystem::path> save_gan_state(const GanTrainState& state, const std::filesystem::path& dir)
{
    std::vector<std::filesystem::path> written;
    for (auto& p : save_checkpoint(state.generator, dir, "generator"))
        written.push_back(p);
    for (auto& p : save_checkpoint(state.discriminator, dir, "discriminator"))
        written.push_back(p);
    ParamSet moments;
    moments_to_arrays(state.generator_opt, "generator", state.generator.arrays, moments);
    moments_to_arrays(state.discriminator_opt, "discriminator", state.discriminator.arrays, moments);
    std::ostringstream rng;
    rng << state.rng;
    json meta{{"format", "bsdgan-gan-state"},
              {"step", state.step},
              {"epoch", state.epoch},
              {"generator_adam_steps", state.generator_opt.steps()},
              {"discriminator_adam_steps", state.discriminator_opt.steps()},
              {"rng", rng.str()},
              {"history", history_to_json(state.history)}};
    for (auto& p : save_array_file(dir, "optimizer", std::move(meta), moments))
        written.push_back(p);
    return written;
}

GanTrainState load_gan_state(const std::filesystem::path& dir, const AdamConfig& adam)
{
    GanTrainState state;
    state.generator = load_checkpoint(dir, "generator");
    state.discriminator = load_checkpoint(dir, "discriminator");
    const auto opt = load_array_file(dir, "optimizer");
    try {
        if (opt.meta.value("format", "") != "bsdgan-gan-state")
            throw FormatError(dir.string() + ": optimizer file has the wrong format");
        state.step = opt.meta.at("step").get<std::int64_t>();
        state.epoch = opt.meta.at("epoch").get<int>();
        state.generator_opt = Adam(adam);
        state.discriminator_opt = Adam(adam);
        state.generator_opt.restore(opt.meta.at("generator_adam_steps").get<std::int64_t>(),
                                    moments_from_arrays(opt.arrays, "generator"));
        state.discriminator_opt.restore(opt.meta.at("discriminator_adam_steps").get<std::int64_t>(),
                                        moments_from_arrays(opt.arrays, "discriminator"));
        std::istringstream rng(opt.meta.at("rng").get<std::string>());
        rng >> state.rng;
        for (const auto& row : opt.meta.at("history")) {
            LossRecord r;
            r.step = row[0].get<std::int64_t>();
            r.epoch = row[1].get<int>();
            r.d_loss = row[2].get<double>();
            r.g_loss = row[3].get<double>();
            r.terms = {row[4].get<double>(), row[5].get<double>(), row[6].get<double>(),
                       row[7].get<double>(), row[8].get<double>(), row[9].get<double>()};
            state.history.push_back(r);
        }
    } catch (const json::exception& e) {
        throw FormatError(dir.string() + ": " + e.what());
    }
    return state;
}

} // namespace bsdgan
