#include "bsdgan/autoencoder.hpp"

#include "bsdgan/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace bsdgan {
namespace {

void refuse_test_split(const LabeledDataset& ds, const char* role)
{
    if (ds.split == Split::test)
        throw Error(std::string("autoencoder pretraining must not read the test split (passed as ") + role + ")");
}

std::vector<std::size_t> iota_indices(std::size_t n)
{
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
}

} // namespace

double mae_loss(const Tensor& x, const Tensor& x_hat)
{
    if (x.data.rows() != x_hat.data.rows() || x.data.cols() != x_hat.data.cols() || x.length != x_hat.length)
        throw ShapeError("mae_loss: shape mismatch");
    if (!x.data.allFinite() || !x_hat.data.allFinite())
        throw TrainingError("mae_loss: non-finite input");
    if (x.data.size() == 0)
        return 0.0;
    return (x.data - x_hat.data).cwiseAbs().mean();
}

Tensor reconstruct(const Autoencoder& ae, const Tensor& x) { return decode(ae.decoder, encode(ae.encoder, x)); }

double reconstruction_mae(const Autoencoder& ae, const LabeledDataset& ds)
{
    if (ds.empty())
        return 0.0;
    double total = 0;
    constexpr std::size_t chunk = 256;
    for (std::size_t start = 0; start < ds.size(); start += chunk) {
        std::vector<std::size_t> idx(std::min(chunk, ds.size() - start));
        std::iota(idx.begin(), idx.end(), start);
        const Tensor x = ds.to_tensor(idx);
        total += (x.data - reconstruct(ae, x).data).cwiseAbs().sum();
    }
    return total / static_cast<double>(ds.size() * static_cast<std::size_t>(ds.channels() * ds.length()));
}

PretrainResult train_autoencoder(const LabeledDataset& train, const LabeledDataset& val,
                                 const ArchitectureDescriptor& desc, const PretrainConfig& config)
{
    refuse_test_split(train, "train");
    refuse_test_split(val, "val");
    if (train.empty())
        throw Error("autoencoder pretraining needs a non-empty training set");
    if (config.batch_size < 1)
        throw ConfigError("pretrain batch size must be >= 1");

    PretrainResult result;
    result.autoencoder = build_autoencoder(desc, config.seed);
    auto& report = result.report;
    report.seed = config.seed;
    report.initial_train_mae = reconstruction_mae(result.autoencoder, train);
    report.initial_val_mae = val.empty() ? report.initial_train_mae : reconstruction_mae(result.autoencoder, val);
    if (config.epochs <= 0)
        return result;

    const auto enc_stack = encoder_stack(desc);
    const auto dec_stack = decoder_stack(desc);
    Autoencoder current = result.autoencoder;
    Adam enc_opt(config.adam), dec_opt(config.adam);
    Rng rng(config.seed ^ 0xA5A5A5A5ULL);
    auto order = iota_indices(train.size());
    double best = report.initial_val_mae;
    int since_best = 0;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                               order.begin() + static_cast<std::ptrdiff_t>(std::min(
                                                                   order.size(), start + config.batch_size)));
            const Tensor x = train.to_tensor(idx);
            nn::Tape enc_tape, dec_tape;
            const Tensor latent = enc_stack.forward(current.encoder.arrays, x, &enc_tape);
            const Tensor x_hat = dec_stack.forward(current.decoder.arrays, latent, &dec_tape);
            const double n = static_cast<double>(x.data.size());
            Tensor dx_hat(x_hat.data.binaryExpr(x.data,
                                                [n](double a, double b) { return a > b ? 1.0 / n : (a < b ? -1.0 / n : 0.0); }),
                          x_hat.length);
            GradSet enc_grads, dec_grads;
            const Tensor dlatent = dec_stack.backward(current.decoder.arrays, dec_tape, dx_hat, &dec_grads);
            enc_stack.backward(current.encoder.arrays, enc_tape, dlatent, &enc_grads);
            if (!all_finite(enc_grads) || !all_finite(dec_grads)) {
                report.diverged = true;
                return result;
            }
            enc_opt.step(current.encoder.arrays, enc_grads);
            dec_opt.step(current.decoder.arrays, dec_grads);
        }
        current.encoder.step = current.decoder.step = epoch;
        const double train_mae = reconstruction_mae(current, train);
        const double val_mae = val.empty() ? train_mae : reconstruction_mae(current, val);
        report.train_mae.push_back(train_mae);
        report.val_mae.push_back(val_mae);
        report.epochs_run = epoch;
        if (!std::isfinite(train_mae) || !std::isfinite(val_mae)) {
            report.diverged = true;
            return result;
        }
        if (val_mae < best) {
            best = val_mae;
            since_best = 0;
            report.best_epoch = epoch;
            result.autoencoder = current;
        } else if (config.patience > 0 && ++since_best >= config.patience) {
            break;
        }
    }
    return result;
}

LatentPrior fit_latent_prior(const NetworkParams& encoder, const LabeledDataset& train)
{
    const int k = encoder.arch.class_count;
    const int d = encoder.arch.latent_dim;
    std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < train.labels.size(); ++i) {
        const int c = train.labels[i];
        if (c < 0 || c >= k)
            throw PriorError("label " + std::to_string(c) + " outside the encoder's " + std::to_string(k) + " classes");
        members[static_cast<std::size_t>(c)].push_back(i);
    }
    LatentPrior prior{Matrix(k, d), Matrix(k, d)};
    for (int c = 0; c < k; ++c) {
        const auto& idx = members[static_cast<std::size_t>(c)];
        if (idx.empty()) {
            const std::string name =
                c < train.class_count() ? train.class_names[static_cast<std::size_t>(c)] : std::to_string(c);
            throw PriorError("class '" + name + "' has no training windows");
        }
        const Matrix z = encode(encoder, train.to_tensor(idx));
        const Vector mean = z.rowwise().mean();
        const Vector var = (z.colwise() - mean).array().square().rowwise().mean();
        prior.means.row(c) = mean.transpose();
        prior.stds.row(c) = var.cwiseSqrt().cwiseMax(prior_std_floor).transpose();
    }
    return prior;
}

std::vector<std::filesystem::path> save_prior(const LatentPrior& prior, const std::filesystem::path& dir,
                                              const std::string& stem)
{
    ParamSet arrays;
    const int k = prior.class_count(), d = prior.latent_dim();
    // row-major [classes, latent_dim]
    arrays["means"] = ParamArray{{k, d}, Eigen::Map<const Vector>(Matrix(prior.means.transpose()).data(), k * d)};
    arrays["stds"] = ParamArray{{k, d}, Eigen::Map<const Vector>(Matrix(prior.stds.transpose()).data(), k * d)};
    return save_array_file(dir, stem, {{"format", "bsdgan-prior"}, {"classes", k}, {"latent_dim", d}}, arrays);
}

LatentPrior load_prior(const std::filesystem::path& dir, const std::string& stem)
{
    const auto file = load_array_file(dir, stem);
    if (file.meta.value("format", "") != "bsdgan-prior" || !file.arrays.count("means") || !file.arrays.count("stds"))
        throw FormatError(stem + " is not a latent prior file");
    const auto& m = file.arrays.at("means");
    const auto& s = file.arrays.at("stds");
    if (m.shape.size() != 2 || m.shape != s.shape)
        throw FormatError(stem + ": means/stds shapes disagree");
    LatentPrior prior;
    prior.means = m.as_matrix(m.shape[1], m.shape[0]).transpose();
    prior.stds = s.as_matrix(s.shape[1], s.shape[0]).transpose();
    return prior;
}

} // namespace bsdgan
